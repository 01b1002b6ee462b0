import logging

from handlers.base import mp_options, record_solution, save_field, timed
from services.solver_service import solver_service
from services.task_tracker import sweep_tracker
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)


async def run_ground_state(cfg: RunConfig, report: RunReport) -> RunReport:
    with timed(report, "ground_state"):
        result = await sweep_tracker.run(
            "ground-state", solver_service.ground_state,
            params=cfg.params, well=cfg.well, grid=cfg.grid.build(),
            n_starts=cfg.n_starts, seed=cfg.seed, opts=mp_options(cfg),
        )

    with timed(report, "checks"):
        record_solution(report, result.best, cfg.well, cfg, tag="best")
        report.add_checks(result.checks)
        report.extras["critical_points"] = [
            {"energy": s.energy.total, "norm": s.norm, "provenance": s.provenance} for s in result.found
        ]
        report.extras["norm_lower_bound"] = result.norm_lower_bound

    await save_field(report, cfg, result.best.u, "u")
    logger.info(f"Основное состояние: I = {result.best.energy.total:.10g} из {len(result.found)} точек")
    return report
