import logging
from typing import Optional

from handlers.base import mp_options, record_solution, save_field, timed, trend_check
from services.bounds_service import BoundCheck
from services.energy_service import small_sphere
from services.solver_service import SolverError, sobolev_quotient, solver_service, summarize_scan
from services.task_tracker import SweepJob, sweep_tracker
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)

CONTINUATION_GAP_TOL = 5e-2
LEVEL_MONOTONE_TOL = 1e-6
MU_G_MASS_GROWTH = 0.1
LIMIT_RESIDUAL_FACTOR = 10.0


def continuation_checks(energies: list[float], limit_energy: Optional[float], alpha: float,
                        level_tol: float) -> list[BoundCheck]:
    """Уровни вдоль λ ↓ 0: не возрастают, предел u₀ не ниже α"""
    chain = list(energies) + ([limit_energy] if limit_energy is not None else [])
    checks = []
    if len(chain) > 1:
        tol = LEVEL_MONOTONE_TOL * max(1.0, max(abs(e) for e in chain))
        checks.append(trend_check("energy_nonincreasing_as_lambda_decreases", chain, False, tol))
    if chain:
        checks.append(BoundCheck.build("continuation_level_lower", alpha, min(chain), level_tol, values=chain))
    if limit_energy is not None:
        checks.append(BoundCheck.build("lambda0_level_lower", alpha, limit_energy, level_tol))
    return checks


async def _continuation(cfg: RunConfig, report: RunReport):
    """λ ↓ 0 с продолжением и прямым решением при λ = 0"""
    grid = cfg.grid.build()
    with timed(report, "continuation"):
        result = await sweep_tracker.run(
            "lambda-continuation", solver_service.lambda_continuation,
            params_base=cfg.params, well=cfg.well, grid=grid, lambdas=list(cfg.schedule), opts=mp_options(cfg),
        )
    if result.failure:
        report.add_failure("lambda_continuation", SolverError(result.failure))

    with timed(report, "checks"):
        for sol in result.solutions:
            record_solution(report, sol, cfg.well, cfg, tag=f"lambda={sol.params.lam:g}")
        report.extras["continuation_gaps"] = result.gaps
        _, alpha = small_sphere(sobolev_quotient(grid, cfg.params.p + 1), cfg.params.p)
        report.extras["alpha"] = alpha
        limit_energy = None
        if result.limit is not None:
            summary = result.limit.summary()
            summary["tag"] = "lambda=0"
            report.solutions.append(summary)
            limit_energy = result.limit.energy.total
        report.add_checks(continuation_checks(
            [sol.energy.total for sol in result.solutions], limit_energy, alpha, cfg.tolerances["nehari"]))
        if len(result.gaps) > 1:
            report.add_check(trend_check("continuation_gaps_decreasing", result.gaps, False, 0.0))
        if result.gaps:
            report.add_check(BoundCheck.build(
                "continuation_final_gap", result.gaps[-1], CONTINUATION_GAP_TOL, 0.0, hard=False))

    if result.limit is not None:
        await save_field(report, cfg, result.limit.u, "u_lambda0")


async def _scan(cfg: RunConfig, report: RunReport):
    """Независимые решения при λ ↑; точки расписания считаются параллельно"""
    grid = cfg.grid.build()
    opts = mp_options(cfg)
    jobs = [
        SweepJob(f"lambda={lam:g}", solver_service.scan_entry,
                 {"params": cfg.params.replace(lam=lam), "well": cfg.well, "grid": grid, "opts": opts})
        for lam in cfg.schedule
    ]
    with timed(report, "scan"):
        results = await sweep_tracker.run_all(jobs)

    entries = []
    for job, result in zip(jobs, results):
        if isinstance(result, Exception):
            report.add_failure(job.name, result)
        else:
            entries.append(result)

    with timed(report, "checks"):
        for entry in entries:
            if entry.solution is not None:
                record_solution(report, entry.solution, cfg.well, cfg, tag=f"lambda={entry.lam:g}")
            else:
                report.extras.setdefault("no_pass", []).append({"lambda": entry.lam, "reason": entry.error})
        summary = summarize_scan(entries)
        report.extras["scan"] = summary
        energies = summary["energies"]
        if len(energies) > 1:
            tol = LEVEL_MONOTONE_TOL * max(1.0, max(abs(e) for e in energies))
            report.add_check(trend_check("level_nondecreasing_in_lambda", energies, True, tol))


async def run_lambda_sweep(cfg: RunConfig, report: RunReport) -> RunReport:
    """Убывающее расписание - продолжение к λ = 0, возрастающее - сканирование"""
    s = cfg.schedule
    if len(s) > 1 and s[1] < s[0]:
        await _continuation(cfg, report)
    else:
        await _scan(cfg, report)
    return report


def mu_sweep_checks(table: list[dict], direct_residual: Optional[float]) -> list[BoundCheck]:
    """μ·∫g u² ограничено, масса вне Ω₀ и невязка предельной задачи убывают"""
    checks = []
    if len(table) > 1:
        mu_g = [row["mu_g_mass"] for row in table]
        checks.append(BoundCheck.build(
            "mu_g_mass_bounded", mu_g[-1], (1.0 + MU_G_MASS_GROWTH) * max(mu_g[0], 1e-300), 0.0,
            hard=False, values=mu_g,
        ))
        checks.append(trend_check("mass_outside_decreasing", [row["mass_outside"] for row in table], False, 0.0))
        checks.append(trend_check("limit_residual_decreasing", [row["limit_residual"] for row in table], False, 0.0))
    if table and direct_residual is not None:
        last = table[-1]["limit_residual"]
        ratio = last / max(direct_residual, 1e-300)
        checks.append(BoundCheck.build(
            "limit_residual_vs_direct", ratio, LIMIT_RESIDUAL_FACTOR, 0.0, hard=False,
            mu=table[-1]["mu"], limit_residual=last, direct_residual=direct_residual,
        ))
    return checks


async def run_mu_sweep(cfg: RunConfig, report: RunReport) -> RunReport:
    """μ ↑: ∫g u², масса вне Ω₀, невязка предельной задачи и прямое решение на Ω₀"""
    with timed(report, "mu_sweep"):
        result = await sweep_tracker.run(
            "mu-sweep", solver_service.mu_sweep,
            params_base=cfg.params, well=cfg.well, grid=cfg.grid.build(),
            mus=list(cfg.schedule), opts=mp_options(cfg),
        )
    if result.failure:
        report.add_failure("mu_sweep", SolverError(result.failure))

    with timed(report, "checks"):
        for entry in result.entries:
            record_solution(report, entry.solution, cfg.well, cfg, tag=f"mu={entry.solution.params.mu:g}")
        table = [e.to_dict() for e in result.entries]
        report.extras["mu_sweep"] = table
        if result.direct is not None:
            summary = result.direct.summary()
            summary["tag"] = "omega0-direct"
            report.solutions.append(summary)
            report.extras["direct_limit_residual"] = result.direct_residual
            report.add_check(BoundCheck.build(
                "direct_solve_residual", result.direct.relative_residual, cfg.tolerances["residual"], 0.0))
        report.add_checks(mu_sweep_checks(table, result.direct_residual))

    if result.entries:
        await save_field(report, cfg, result.entries[-1].solution.u, f"u_mu{result.entries[-1].solution.params.mu:g}")
    return report
