import logging

from handlers.base import timed
from services.bounds_service import BoundCheck, c_of_p, constants
from services.discretization import RegimeError
from services.solver_service import solver_service
from services.task_tracker import sweep_tracker
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)


async def run_nonexistence(cfg: RunConfig, report: RunReport) -> RunReport:
    """Случайные старты при λ >= c(p): все должны уйти в ноль (мягкая проверка)"""
    params = cfg.params
    if params.regime != "subquadratic":
        raise RegimeError(f"nonexistence probe needs p in (1, 2), got p={params.p}")
    threshold = c_of_p(params.p)
    report.constants = constants(params).to_dict()
    if params.lam < threshold:
        message = f"lambda = {params.lam:g} is below c(p) = {threshold:.6g}: solutions may exist"
        logger.warning(message)
        report.warnings.append(message)

    with timed(report, "probe"):
        result = await sweep_tracker.run(
            "nonexistence-probe", solver_service.nonexistence_probe,
            params=params, well=cfg.well, grid=cfg.grid.build(), n_inits=cfg.n_inits, seed=cfg.seed,
        )
    report.extras["probe"] = {
        "initializations": result.initializations,
        "collapsed": result.collapsed,
        "survivor_energies": result.survivors,
        "errors": result.errors,
        "threshold": threshold,
        "consistent": result.consistent,
    }
    report.add_check(BoundCheck.build(
        "all_initializations_collapse", result.initializations - result.collapsed, 0.0, 0.0, hard=False))
    return report
