import logging

from handlers.base import mp_options, record_solution, save_field, timed, trend_check
from services.bounds_service import BoundCheck, uniform_norm_bounds
from services.discretization import Params
from services.energy_service import energy_service
from services.poisson_service import poisson_service
from services.solver_service import Solution, SolverError, sobolev_quotient, solver_service
from services.task_tracker import sweep_tracker
from services.wells import Well
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)

ENERGY_SETTLE_TOL = 1e-3


def uniform_bound_checks(solutions: list[Solution], params: Params, well: Well, tol: float) -> list[BoundCheck]:
    """‖u_k‖ <= M(λ) для всех k: c - верхняя оценка уровня на наименьшем шаре"""
    first = solutions[0] if solutions else None
    if first is None or first.path is None or params.regime != "supercubic":
        return []
    c = energy_service.mp_level_upper(first.path.samples[-1], params, well)
    M, _ = uniform_norm_bounds(c, poisson_service.reference_s0(), sobolev_quotient(first.grid, 2.4), params.p)
    return [BoundCheck.build("uniform_norm_bound", sol.norm, M, tol * M, k=sol.grid.k) for sol in solutions]


async def run_domain_approx(cfg: RunConfig, report: RunReport) -> RunReport:
    """Решения на B_k по расписанию k, зазоры Коши и хвостовые массы"""
    grid = cfg.grid.build()
    with timed(report, "domain_approx"):
        result = await sweep_tracker.run(
            "domain-approx", solver_service.domain_approximation,
            params=cfg.params, well=cfg.well, grid=grid,
            k_schedule=list(cfg.grid.k_schedule), opts=mp_options(cfg),
        )
    if result.failure:
        report.add_failure("domain_approximation", SolverError(result.failure))

    with timed(report, "checks"):
        for sol in result.solutions:
            record_solution(report, sol, cfg.well, cfg, tag=f"k={sol.grid.k:g}")

        energies = [s.energy.total for s in result.solutions]
        report.extras.update({
            "k": [s.grid.k for s in result.solutions],
            "energies": energies,
            "cauchy_gaps": result.cauchy_gaps,
            "tail_masses": result.tail_masses,
        })
        if len(result.cauchy_gaps) > 1:
            report.add_check(trend_check("cauchy_gaps_decreasing", result.cauchy_gaps, False, 0.0))
        if len(energies) > 1:
            change = abs(energies[-1] - energies[-2]) / max(abs(energies[-1]), 1e-300)
            report.add_check(BoundCheck.build("energy_settled", change, ENERGY_SETTLE_TOL, 0.0, hard=False))

        report.add_checks(uniform_bound_checks(result.solutions, cfg.params, cfg.well, cfg.tolerances["nehari"]))

    if result.solutions:
        await save_field(report, cfg, result.solutions[-1].u, f"u_k{result.solutions[-1].grid.k:g}")
    return report
