import dataclasses
import logging

import numpy as np

from handlers.base import timed
from services.bounds_service import (
    BoundCheck,
    C_p_lambda,
    c_of_p,
    c_p,
    constants,
    constants_agreement,
    moser_ladder,
    moser_parameters,
    pointwise_constant_oracle,
    scalar_inequality_check,
)
from services.discretization import Field, Grid
from services.energy_service import bump
from services.poisson_service import REFERENCE_GRID, poisson_service
from states.run_states import RunConfig, RunReport

logger = logging.getLogger(__name__)

SPOT_VALUES = (
    ("c_p(1.5)", lambda: c_p(1.5), 0.25),
    ("c(1.5)", lambda: c_of_p(1.5), 0.015625),
    ("C_1.5,0.01", lambda: C_p_lambda(1.5, 0.01)[0], 421875.0 / 256.0),
)
LADDER_P = (1.5, 3.0, 4.0)
LADDER_DEPTH = 40
LADDER_TOL = 1e-10
ORACLE_POINTS = ((1.2, 0.001), (1.5, 0.01), (1.8, 0.05))
ORACLE_TOL = 1e-10
SCALAR_P = (1.2, 1.5, 1.8)
POISSON_GRID = Grid("radial", 4.0, 1025)
POISSON_TOL = 5e-3
IDENTITY_TOL = 1e-8
N_BUMPS = 20
S0_CONVERGENCE_TOL = 5e-3
S0_EXACT = 3.0 * (np.pi / 2.0) ** (4.0 / 3.0)


def closed_form_checks(cfg: RunConfig) -> list[BoundCheck]:
    tol = cfg.tolerances["closed_form"]
    checks = [BoundCheck.build("C_forms_agreement_50x50", constants_agreement(50), tol, 0.0)]
    for name, fn, expected in SPOT_VALUES:
        value = fn()
        checks.append(BoundCheck.build(f"spot_{name}", abs(value - expected), tol * expected, 0.0, value=value))
    for p, lam in ORACLE_POINTS:
        closed = C_p_lambda(p, lam)[0]
        oracle = pointwise_constant_oracle(p, lam)
        checks.append(BoundCheck.build(
            f"C_oracle_p{p:g}_lambda{lam:g}", abs(oracle - closed) / closed, ORACLE_TOL, 0.0, oracle=oracle))
    checks += [scalar_inequality_check(p) for p in SCALAR_P]
    return checks


def moser_checks() -> list[BoundCheck]:
    """Пределы f(i), g(i) при i = 40 и δ ∈ (0, 1)"""
    checks = []
    for p in LADDER_P:
        m = moser_parameters(p)
        ladder = moser_ladder(p, LADDER_DEPTH)
        checks.append(BoundCheck.build(f"moser_delta_below_one_p{p:g}", m["delta"], 1.0, 0.0, delta=m["delta"]))
        checks.append(BoundCheck.build(f"moser_delta_positive_p{p:g}", 0.0, m["delta"], 0.0))
        for key, limit in (("f", m["f_inf"]), ("g", m["g_inf"])):
            checks.append(BoundCheck.build(
                f"moser_{key}_limit_p{p:g}", abs(ladder[key] - limit), LADDER_TOL, 0.0,
                value=ladder[key], closed=ladder[f"{key}_closed"], limit=limit,
            ))
    return checks


def poisson_checks(cfg: RunConfig) -> list[BoundCheck]:
    """Оракулы Пуассона: однородный шар, тождество энергий, неравенства на случайных бампах"""
    grid = POISSON_GRID
    # узел r = 1 несёт половину заряда
    charge = Field.from_radius(grid, lambda r: np.clip(0.5 + (1.0 - r) / grid.h, 0.0, 1.0))
    sol = poisson_service.solve_free(charge)
    r = grid.axis
    phi = sol.phi.values
    at_one = float(np.interp(1.0, r, phi))
    checks = [
        BoundCheck.build("uniform_ball_phi0", abs(phi[0] - 0.5) / 0.5, POISSON_TOL, 0.0, value=float(phi[0])),
        BoundCheck.build("uniform_ball_phi1", abs(at_one - 1.0 / 3.0) * 3.0, POISSON_TOL, 0.0, value=at_one),
        BoundCheck.build("free_identity", sol.identity_gap, IDENTITY_TOL, 0.0),
        BoundCheck.build("ball_identity", poisson_service.solve_ball(charge).identity_gap, IDENTITY_TOL, 0.0),
    ]

    s0 = poisson_service.reference_s0()
    rng = np.random.default_rng(cfg.seed)
    for i in range(N_BUMPS):
        radius = rng.uniform(0.2, 0.9) * grid.k
        u = bump(grid, (0.0, 0.0, 0.0), radius, 10.0 ** rng.uniform(-1.0, 1.0))
        bump_sol = poisson_service.solve_free(u)
        checks += [
            dataclasses.replace(c, name=f"{c.name}_bump{i}")
            for c in poisson_service.verify_poisson_bounds(u, bump_sol, s0)
        ]

    coarse = poisson_service.estimate_s0(Grid("radial", REFERENCE_GRID.k, (REFERENCE_GRID.n + 1) // 2))
    checks.append(BoundCheck.build("s0_grid_convergence", abs(coarse - s0) / s0, S0_CONVERGENCE_TOL, 0.0,
                                   coarse=coarse, fine=s0))
    checks.append(BoundCheck.build("s0_near_sharp_constant", abs(s0 - S0_EXACT) / S0_EXACT, 0.05, 0.0,
                                   hard=False, sharp=S0_EXACT))
    return checks


async def run_verify(cfg: RunConfig, report: RunReport) -> RunReport:
    """Константы и оракулы без решения уравнения"""
    with timed(report, "closed_forms"):
        report.add_checks(closed_form_checks(cfg))
        report.add_checks(moser_checks())
    with timed(report, "poisson"):
        report.add_checks(poisson_checks(cfg))
        report.constants = constants(cfg.params, s0=poisson_service.reference_s0()).to_dict()
    passed, failed = report.pass_counts()
    logger.info(f"Проверка: {passed} пройдено, {failed} не пройдено")
    return report
