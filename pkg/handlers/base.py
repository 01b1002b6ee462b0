import dataclasses
import logging
import time
from contextlib import contextmanager
from typing import Any, Awaitable, Callable, Optional

import numpy as np

from services.bounds_service import (
    BoundCheck,
    bounded_ps_norm_bound,
    check_pointwise,
    decay_fit,
    g_weighted_mass,
    level_checks,
    mass_outside,
    moser_bound,
    ps_device_check,
    supercubic_norm_bound,
)
from services.energy_service import energy_service, small_sphere
from services.poisson_service import poisson_service
from services.report_service import report_service
from services.solver_service import MpOptions, Solution, sobolev_quotient, solver_service
from services.task_tracker import sweep_tracker
from services.wells import Well
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)

Handler = Callable[[RunConfig, RunReport], Awaitable[RunReport]]

FLOW_ORACLE_TOL = 1e-4
FLOW_ORACLE_NOISE = 1e-3


@contextmanager
def timed(report: RunReport, phase: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        report.timings[phase] = report.timings.get(phase, 0.0) + time.perf_counter() - start


def mp_options(cfg: RunConfig) -> MpOptions:
    tol = cfg.tolerances
    return MpOptions(basin=tol["basin"], residual_tol=tol["residual"], flow_tol=tol["flow"])


async def load_seed(cfg: RunConfig):
    """Начальное поле из предыдущего дампа (seed_field)"""
    if cfg.seed_field is None:
        return None
    u = await report_service.read_field(cfg.seed_field)
    grid = cfg.grid.build()
    if u.grid != grid:
        raise ValueError(f"seed field grid {u.grid.describe()} does not match the run grid {grid.describe()}")
    return u


def level_window(sol: Solution, well: Well) -> tuple[float, Optional[float]]:
    """α из малой сферы и c_λ = max_t I(t e) по концу пути (если путь есть)"""
    _, alpha = small_sphere(sobolev_quotient(sol.grid, sol.params.p + 1), sol.params.p)
    c_lambda = None
    if sol.path is not None and not sol.free_space:
        c_lambda = energy_service.mp_level_upper(sol.path.samples[-1], sol.params, well)
    return alpha, c_lambda


def solution_checks(sol: Solution, well: Well, cfg: RunConfig) -> list[BoundCheck]:
    """Сертификаты решения: невязка, Нехари, окно уровня и оценки режима"""
    tol = cfg.tolerances
    params = sol.params
    checks = [
        BoundCheck.build("relative_residual", sol.relative_residual, tol["residual"], 0.0,
                         absolute=sol.residual_norm),
        BoundCheck.build("nehari_gap", abs(sol.nehari_gap), tol["nehari"] * sol.norm ** 2, 0.0),
    ]

    alpha, c_lambda = level_window(sol, well)
    if c_lambda is not None:
        checks += level_checks(sol.energy.total, alpha, c_lambda)
    else:
        # I(u) >= α для любой критической точки только при p >= 3; иначе - для уровня перевала
        hard = params.regime == "supercubic" or sol.path is not None
        checks.append(BoundCheck.build("level_lower", alpha, sol.energy.total, tol["nehari"], hard=hard))

    if params.regime == "subquadratic" and params.lam > 0:
        checks += check_pointwise(sol.u, sol.phi, params)
        checks.append(ps_device_check(sol.u, sol.phi, params))
        checks.append(BoundCheck.build(
            "bounded_ps_norm", sol.norm, bounded_ps_norm_bound(params, sol.grid.k), tol["nehari"]))
    elif params.regime == "supercubic":
        checks.append(moser_bound(sol.u, params, poisson_service.reference_s0()))
        bound = supercubic_norm_bound(sol.energy.total)["critical"]
        checks.append(BoundCheck.build("supercubic_norm", sol.norm, bound, tol["nehari"] * max(1.0, bound)))

    fit = decay_check(sol, well)
    if fit is not None:
        checks.append(fit)
    return checks


def decay_check(sol: Solution, well: Well) -> Optional[BoundCheck]:
    """Подгонка экспоненциального спада (мягкая); None, если окно не помещается"""
    if sol.grid.kind != "radial" or sol.params.mu <= 0:
        return None
    try:
        fit = decay_fit(sol.u, sol.params, well.outer_radius)
    except ValueError as e:
        logger.info(f"decay fit skipped: {e}")
        return None
    return dataclasses.replace(fit.check, hard=False, details={**fit.check.details, "slope": fit.slope})


async def flow_oracle(sol: Solution, well: Well, seed: int) -> BoundCheck:
    """Градиентный поток из слегка возмущённого решения должен вернуть ту же энергию"""
    model = energy_service.model(sol.params, well, sol.grid, sol.free_space)
    x = model.vector(sol.u)
    rng = np.random.default_rng(seed)
    noise = model.riesz(model.w * rng.standard_normal(model.size))
    scale = FLOW_ORACLE_NOISE * np.sqrt(model.dv_norm2(x) / max(model.dv_norm2(noise), 1e-300))
    start = model.field(x + scale * noise)
    flowed = await sweep_tracker.run(
        "flow-oracle", solver_service.gradient_flow,
        u0=start, params=sol.params, well=well, free_space=sol.free_space,
    )
    energy = flowed.energy.total if flowed is not None else 0.0
    target = sol.energy.total
    return BoundCheck.build(
        "flow_oracle_energy", abs(energy - target), FLOW_ORACLE_TOL * max(1.0, abs(target)), 0.0,
        hard=False, flow_energy=energy,
    )


def solution_row(sol: Solution, well: Well, checks: list[BoundCheck]) -> dict:
    """Строка sweep.csv"""
    passed = sum(1 for c in checks if c.passed)
    slope = next((c.details.get("slope") for c in checks if c.name == "decay_slope"), None)
    g_mass = g_weighted_mass(sol.u, well)
    return {
        "p": sol.params.p,
        "lambda": sol.params.lam,
        "mu": sol.params.mu,
        "k": sol.grid.k,
        "energy": sol.energy.total,
        "norm": sol.norm,
        "sup_norm": sol.u.sup_norm(),
        "decay_slope": slope,
        "g_mass": g_mass,
        "mu_g_mass": sol.params.mu * g_mass,
        "mass_outside": mass_outside(sol.u, well),
        "checks_passed": passed,
        "checks_failed": len(checks) - passed,
    }


def record_solution(report: RunReport, sol: Solution, well: Well, cfg: RunConfig,
                    extra_checks: Optional[list[BoundCheck]] = None, tag: Optional[str] = None) -> list[BoundCheck]:
    """Сводка, проверки и строка таблицы для одного решения"""
    checks = solution_checks(sol, well, cfg) + list(extra_checks or [])
    if tag is not None:
        checks = [dataclasses.replace(c, details={**c.details, "solution": tag}) for c in checks]
    summary = sol.summary()
    if tag is not None:
        summary["tag"] = tag
    report.solutions.append(summary)
    report.add_checks(checks)
    report.rows.append(solution_row(sol, well, checks))
    return checks


def trend_check(name: str, values: list[float], increasing: bool, tol: float) -> BoundCheck:
    """Мягкая проверка монотонности: худшее нарушение против допуска"""
    diffs = np.diff(np.asarray(values, dtype=float))
    worst = float(np.min(diffs) if increasing else np.min(-diffs)) if len(diffs) else 0.0
    return BoundCheck.build(name, -worst, 0.0, tol, hard=False, values=list(map(float, values)))


async def save_field(report: RunReport, cfg: RunConfig, u, name: str) -> Any:
    path = await report_service.write_field(u, cfg.output_dir, name)
    report.extras.setdefault("fields", []).append(f"fields/{name}.bin")
    return path
