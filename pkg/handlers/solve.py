import logging

from handlers.base import flow_oracle, load_seed, mp_options, record_solution, save_field, timed
from services.bounds_service import constants
from services.energy_service import energy_service
from services.poisson_service import poisson_service
from services.solver_service import Solution, sobolev_quotient, solver_service
from services.task_tracker import sweep_tracker
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)

S_1225 = 12.0 / 5.0


async def solve_one(cfg: RunConfig) -> Solution:
    """Перевал или, если задан seed_field, поток + Ньютон из дампа"""
    grid = cfg.grid.build()
    seed = await load_seed(cfg)
    if seed is None:
        return await sweep_tracker.run(
            "mountain-pass", solver_service.mountain_pass,
            params=cfg.params, well=cfg.well, grid=grid, opts=mp_options(cfg),
        )
    logger.info(f"Старт из дампа {cfg.seed_field}")
    sol = await sweep_tracker.run(
        "seeded-newton", solver_service.refine_newton,
        seed=seed, params=cfg.params, well=cfg.well, tol=cfg.tolerances["residual"], provenance="seed-field",
    )
    if not sol.converged:
        flowed = await sweep_tracker.run(
            "seeded-flow", solver_service.gradient_flow, u0=seed, params=cfg.params, well=cfg.well,
            tol=cfg.tolerances["basin"],
        )
        if flowed is None:
            raise ValueError("seed field flows to zero")
        sol = await sweep_tracker.run(
            "seeded-newton", solver_service.refine_newton,
            seed=flowed.u, params=cfg.params, well=cfg.well, tol=cfg.tolerances["residual"], provenance="seed-field",
        )
    return sol


def constant_set(cfg: RunConfig, sol: Solution) -> dict:
    """ConstantSet с оценками S₀, S_{12/5} и уровнем c_λ из конца пути"""
    c_level = None
    if sol.path is not None:
        c_level = energy_service.mp_level_upper(sol.path.samples[-1], sol.params, cfg.well)
    cs = constants(
        cfg.params,
        s0=poisson_service.reference_s0(),
        s_1225=sobolev_quotient(sol.grid, S_1225),
        c_level=c_level,
    )
    return cs.to_dict()


def threshold_warnings(report: RunReport, cfg: RunConfig):
    """μ ниже μ₀/μ₁/μ₂ - предупреждение, не ошибка"""
    cs = report.constants or {}
    for name in ("mu0", "mu1", "mu2"):
        value = cs.get(name)
        if value is not None and cfg.params.mu <= value:
            message = f"mu = {cfg.params.mu:g} is not above {name} = {value:.6g}"
            logger.warning(message)
            report.warnings.append(message)


async def run_solve(cfg: RunConfig, report: RunReport) -> RunReport:
    """Одно решение: перевал, сертификаты, константы, дампы u и φ"""
    with timed(report, "solve"):
        sol = await solve_one(cfg)

    with timed(report, "checks"):
        extra = [await flow_oracle(sol, cfg.well, cfg.seed)] if cfg.flow_oracle else []
        record_solution(report, sol, cfg.well, cfg, extra)
        report.constants = constant_set(cfg, sol)
        threshold_warnings(report, cfg)
        if sol.path is not None:
            report.extras["path"] = {
                "level": sol.path.level,
                "sweeps": len(sol.path.history) - 1,
                "endpoint_energy": sol.path.endpoint_energy,
                "endpoint_norm": sol.path.endpoint_norm,
            }

    await save_field(report, cfg, sol.u, "u")
    await save_field(report, cfg, sol.phi, "phi")
    logger.info(f"Решение: I = {sol.energy.total:.10g}, ‖u‖ = {sol.norm:.6g}")
    return report
