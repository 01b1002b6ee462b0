import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from services.bounds_service import (
    BoundCheck,
    C_p_lambda,
    bounded_ps_norm_bound,
    c_of_p,
    c_p,
    check_pointwise,
    constants,
    constants_agreement,
    decay_fit,
    g_weighted_mass,
    level_checks,
    limit_problem_residual,
    mass_outside,
    moser_bound,
    moser_ladder,
    moser_parameters,
    moser_radii,
    moser_refined_bound,
    moser_relaxed_bound,
    pointwise_constant_oracle,
    ps_device_check,
    scalar_inequality_check,
    supercubic_norm_bound,
    tail_mass,
)
from services.discretization import Field, Grid, Params, RegimeError
from services.energy_service import bump
from services.poisson_service import poisson_service
from services.wells import radial_well


def test_bound_check_margin():
    ok = BoundCheck.build("x", 1.0, 2.0, 0.0)
    assert ok.passed and ok.margin == 1.0
    assert BoundCheck.build("x", 2.0, 1.0, 1.5).passed
    assert not BoundCheck.build("x", 2.0, 1.0, 0.5).passed
    assert BoundCheck.build("x", 0.0, 1.0, 0.0, hard=False, note=3).to_dict()["details"] == {"note": 3}


def test_spot_values():
    assert c_p(1.5) == pytest.approx(0.25, rel=1e-12)
    assert c_of_p(1.5) == pytest.approx(0.015625, rel=1e-12)
    C, C_alt, gap = C_p_lambda(1.5, 0.01)
    assert C == pytest.approx(421875.0 / 256.0, rel=1e-12)
    assert C_alt == pytest.approx(C, rel=1e-12)
    assert gap < 1e-12


def test_constant_forms_agree_on_grid():
    assert constants_agreement(10) < 1e-12


@settings(max_examples=25, deadline=None)
@given(p=st.floats(1.1, 1.9), frac=st.floats(0.05, 1.0))
def test_oracle_matches_closed_form(p, frac):
    lam = frac * c_of_p(p)
    closed = C_p_lambda(p, lam)[0]
    assert pointwise_constant_oracle(p, lam) == pytest.approx(closed, rel=1e-8)


@pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
def test_scalar_inequality(p):
    check = scalar_inequality_check(p)
    assert check.passed
    assert check.rhs >= 0.0


def test_subquadratic_constants_reject_other_regimes():
    with pytest.raises(RegimeError):
        c_p(3.0)
    with pytest.raises(RegimeError):
        c_of_p(2.0)
    with pytest.raises(ValueError):
        C_p_lambda(1.5, 0.0)
    with pytest.raises(RegimeError):
        bounded_ps_norm_bound(Params(3.0, 1.0, 1.0), 4.0)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_moser_ladder_limits(p):
    m = moser_parameters(p)
    assert 0.0 < m["delta"] < 1.0
    ladder = moser_ladder(p, 40)
    assert ladder["f"] == pytest.approx(m["f_inf"], abs=1e-10)
    assert ladder["g"] == pytest.approx(m["g_inf"], abs=1e-10)
    assert ladder["f_closed"] == pytest.approx(m["f_inf"], abs=1e-10)
    # геометрическая сумма совпадает с замкнутой формой при любом i
    short = moser_ladder(p, 5)
    assert short["g_closed"] == pytest.approx(short["g"], rel=1e-12)


def test_moser_ladder_rejects_short_index():
    with pytest.raises(ValueError):
        moser_ladder(3.0, 1)


def test_moser_radii_shrink_to_half():
    radii = moser_radii(3.0, 2.0)
    assert np.all(np.diff(radii) < 0)
    assert radii[-1] == pytest.approx(radii[0] / 2.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(X=st.floats(1e-3, 1e3), p=st.floats(3.0, 4.9), s0=st.floats(1.0, 10.0))
def test_moser_refined_below_relaxed(X, p, s0):
    assert moser_refined_bound(X, p, s0) <= moser_relaxed_bound(X, p, s0) * (1.0 + 1e-12)


def test_moser_bound_on_bump():
    grid = Grid("radial", 4.0, 401)
    u = bump(grid, (0.0, 0.0, 0.0), 2.0, 3.0)
    check = moser_bound(u, Params(3.0, 1.0, 10.0), 5.0)
    assert check.passed
    assert check.details["refined"] <= check.rhs
    with pytest.raises(ValueError):
        moser_bound(Field.zeros(grid), Params(3.0, 1.0, 10.0), 5.0)


def test_level_checks():
    lower, upper = level_checks(0.5, 0.25, 1.0)
    assert lower.passed and upper.passed
    assert not level_checks(2.0, 0.25, 1.0)[1].passed
    assert not level_checks(0.1, 0.25, 1.0, tol=0.0)[0].passed


def test_supercubic_norm_bound():
    bound = supercubic_norm_bound(2.0)
    assert bound["critical"] == pytest.approx(2.0 * np.sqrt(2.0))
    assert bound["ps_squared"] == pytest.approx(18.0)


@pytest.mark.parametrize("lam, k", [(0.01, 4.0), (0.002, 12.0)])
def test_bounded_ps_norm_is_root(lam, k):
    params = Params(1.5, lam, 100.0)
    x = bounded_ps_norm_bound(params, k)
    K = 0.5 * x ** 2 - x
    x2 = bounded_ps_norm_bound(params, 2.0 * k)
    assert K > 0
    assert 0.5 * x2 ** 2 - x2 == pytest.approx(8.0 * K, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 16), lam=st.floats(1e-4, 0.05))
def test_ps_device_holds_for_any_field(seed, lam):
    grid = Grid("radial", 4.0, 201)
    u = Field(grid, np.random.default_rng(seed).standard_normal(grid.shape)).restricted()
    phi = poisson_service.solve_ball(u).phi
    assert ps_device_check(u, phi, Params(1.5, lam, 100.0)).passed


def test_check_pointwise_regime_and_names():
    grid = Grid("radial", 4.0, 201)
    u = bump(grid, (0.0, 0.0, 0.0), 1.0, 1e-3)
    phi = poisson_service.solve_ball(u).phi
    with pytest.raises(RegimeError):
        check_pointwise(u, phi, Params(3.0, 1.0, 10.0))
    checks = check_pointwise(u, phi, Params(1.5, 0.01, 100.0))
    assert [c.name for c in checks] == ["pointwise_cp_phi", "pointwise_C_p_lambda"]
    # амплитуда 1e-3 далеко от C_{p,λ}
    assert checks[1].passed


def _radial_profile(rate: float, R0: float):
    grid = Grid("radial", 8.0, 801)
    return Field.from_radius(grid, lambda r: np.exp(-rate * (r - R0)) / np.sqrt(np.maximum(r, R0)))


def test_decay_fit_exact_rate():
    fit = decay_fit(_radial_profile(5.0, 1.5), Params(3.0, 1.0, 100.0), 1.5)
    assert fit.slope == pytest.approx(-5.0, abs=1e-6)
    assert fit.A == pytest.approx(1.0, rel=1e-6)
    assert fit.window[0] > 1.5


def test_decay_fit_fast_and_slow_profiles():
    params = Params(3.0, 1.0, 100.0)
    fast = decay_fit(_radial_profile(6.0, 1.5), params, 1.5)
    assert fast.check.passed
    assert fast.A <= 1.0
    slow = decay_fit(_radial_profile(2.0, 1.5), params, 1.5)
    assert not slow.check.passed


def test_decay_fit_rejects_bad_windows():
    params = Params(3.0, 1.0, 100.0)
    with pytest.raises(ValueError):
        decay_fit(_radial_profile(5.0, 1.5), params, 7.0)
    with pytest.raises(ValueError):
        decay_fit(Field.zeros(Grid("radial", 8.0, 801)), params, 1.5)
    with pytest.raises(ValueError):
        decay_fit(Field.zeros(Grid("box3d", 2.0, 21)), params, 0.5)


def test_tail_mass():
    grid = Grid("radial", 4.0, 401)
    u = bump(grid, (0.0, 0.0, 0.0), 1.0)
    assert tail_mass(u, 2.0) == 0.0
    assert tail_mass(u, 0.2) > tail_mass(u, 0.6) > 0.0
    with pytest.raises(ValueError):
        tail_mass(u, 4.0)


def test_masses_vanish_inside_well():
    grid = Grid("radial", 4.0, 401)
    well = radial_well(1.0)
    inside = bump(grid, (0.0, 0.0, 0.0), 0.9)
    assert mass_outside(inside, well) == 0.0
    assert g_weighted_mass(inside, well) == 0.0
    spread = bump(grid, (0.0, 0.0, 0.0), 3.0)
    assert mass_outside(spread, well) > 0.0
    assert g_weighted_mass(spread, well) <= mass_outside(spread, well)


def test_constants_subquadratic():
    cs = constants(Params(1.5, 0.01, 100.0))
    assert cs.c_p == pytest.approx(0.25)
    assert cs.mu0 == pytest.approx(3.0 * cs.mu1)
    assert cs.mu1 == pytest.approx(np.sqrt(421875.0 / 256.0) - 1.0)
    assert cs.M is None and cs.mu2 is None


def test_constants_supercubic_with_estimates():
    cs = constants(Params(3.0, 1.0, 50.0), s0=5.0, s_1225=2.0, c_level=0.5)
    assert cs.c_p is None
    assert cs.M is not None and cs.M0 is not None
    assert cs.mu0 == pytest.approx(3.0 * cs.M0 ** 2 - 3.0)
    assert cs.mu2 == pytest.approx(max(0.0, cs.M0 ** 2 - 1.0))
    assert cs.r1 is not None and cs.r1 > 0
    assert set(cs.to_dict()) >= {"C1", "C2", "s0", "M", "M0"}


def test_limit_problem_residual_of_zero():
    grid = Grid("radial", 4.0, 401)
    assert limit_problem_residual(Field.zeros(grid), radial_well(1.0), Params(3.0, 1.0, 50.0)) == 0.0
    with pytest.raises(ValueError):
        limit_problem_residual(Field.zeros(Grid("radial", 4.0, 5)), radial_well(0.5), Params(3.0, 1.0, 50.0))
