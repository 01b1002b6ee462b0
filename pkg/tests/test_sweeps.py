import pytest

from handlers.sweeps import LIMIT_RESIDUAL_FACTOR, continuation_checks, mu_sweep_checks


def _by_name(checks):
    return {c.name: c for c in checks}


def test_continuation_checks_pass_on_decreasing_levels():
    checks = _by_name(continuation_checks([0.9, 0.8, 0.7], 0.65, 0.1, 1e-6))
    assert set(checks) == {
        "energy_nonincreasing_as_lambda_decreases", "continuation_level_lower", "lambda0_level_lower"}
    assert all(c.passed for c in checks.values())
    assert checks["lambda0_level_lower"].hard


def test_continuation_flags_rising_level():
    checks = _by_name(continuation_checks([0.7, 0.8], 0.6, 0.1, 1e-6))
    assert not checks["energy_nonincreasing_as_lambda_decreases"].passed
    assert checks["continuation_level_lower"].passed


def test_continuation_flags_limit_below_alpha():
    checks = _by_name(continuation_checks([0.9, 0.5], 0.05, 0.1, 1e-6))
    assert not checks["lambda0_level_lower"].passed
    assert not checks["continuation_level_lower"].passed
    assert checks["continuation_level_lower"].details["values"] == [0.9, 0.5, 0.05]


def test_continuation_without_limit():
    checks = _by_name(continuation_checks([0.9], None, 0.1, 1e-6))
    assert set(checks) == {"continuation_level_lower"}


def _row(mu, g_mass, outside, residual):
    return {"mu": mu, "g_mass": g_mass, "mu_g_mass": mu * g_mass, "mass_outside": outside, "limit_residual": residual}


def test_mu_sweep_checks_bounded_product_and_ratio():
    table = [_row(50.0, 2e-3, 0.2, 0.4), _row(100.0, 1e-3, 0.1, 0.2), _row(400.0, 2.5e-4, 0.03, 0.05)]
    checks = _by_name(mu_sweep_checks(table, 0.01))
    assert all(c.passed for c in checks.values())
    ratio = checks["limit_residual_vs_direct"]
    assert ratio.lhs == pytest.approx(5.0)
    assert ratio.rhs == LIMIT_RESIDUAL_FACTOR
    assert ratio.details["mu"] == 400.0
    assert not ratio.hard


def test_mu_sweep_checks_flag_growth_and_far_residual():
    table = [_row(50.0, 2e-3, 0.2, 0.4), _row(400.0, 1e-3, 0.25, 0.5)]
    checks = _by_name(mu_sweep_checks(table, 0.01))
    assert not checks["mu_g_mass_bounded"].passed
    assert not checks["mass_outside_decreasing"].passed
    assert not checks["limit_residual_decreasing"].passed
    assert not checks["limit_residual_vs_direct"].passed


def test_mu_sweep_checks_without_direct_solve():
    assert "limit_residual_vs_direct" not in _by_name(mu_sweep_checks([_row(50.0, 1e-3, 0.1, 0.1)], None))
