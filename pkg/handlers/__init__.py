from states.run_states import RunMode

from . import solve
from . import ground_state
from . import domain_approx
from . import sweeps
from . import verify
from . import nonexistence

# Обработчик для каждого режима запуска
MODE_HANDLERS = {
    RunMode.SOLVE: solve.run_solve,
    RunMode.GROUND_STATE: ground_state.run_ground_state,
    RunMode.DOMAIN_APPROX: domain_approx.run_domain_approx,
    RunMode.LAMBDA_SWEEP: sweeps.run_lambda_sweep,
    RunMode.MU_SWEEP: sweeps.run_mu_sweep,
    RunMode.VERIFY: verify.run_verify,
    RunMode.NONEXISTENCE: nonexistence.run_nonexistence,
}

__all__ = [
    "MODE_HANDLERS",
    "solve",
    "ground_state",
    "domain_approx",
    "sweeps",
    "verify",
    "nonexistence"
]
