import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from services.discretization import Field, Grid, Params
from services.energy_service import (
    BUMP_AMPLITUDE,
    EndpointError,
    RayProfile,
    bump,
    energy,
    energy_service,
    pair,
    residual,
    small_sphere,
)
from services.wells import radial_well
from tests.helpers import random_smooth

GRID = Grid("radial", 4.0, 201)
WELL = radial_well(1.0)


def test_energy_of_zero():
    e = energy(Field.zeros(GRID), Params(3.0, 1.0, 10.0), WELL)
    assert e.total == 0.0
    assert e.to_dict()["total"] == 0.0


@pytest.mark.parametrize("free_space", [False, True])
@pytest.mark.parametrize("p", [1.5, 3.0, 4.2])
def test_ray_profile_matches_energy(p, free_space, rng):
    params = Params(p, 0.7, 10.0)
    model = energy_service.model(params, WELL, GRID, free_space)
    x = random_smooth(model, rng)
    ray = model.ray(x)
    for t in (0.3, 1.0, 2.5):
        assert ray.value(t) == pytest.approx(model.value(t * x), rel=1e-10, abs=1e-14)


def test_ray_first_max_is_stationary():
    ray = RayProfile(N=2.0, C=0.5, D=3.0, p=3.5, lam=1.0)
    t = ray.first_max()
    assert t is not None
    eps = 1e-4
    assert ray.value(t) >= ray.value(t - eps)
    assert ray.value(t) >= ray.value(t + eps)


def test_ray_first_max_closed_forms():
    assert RayProfile(N=2.0, C=1.0, D=1.0, p=1.5, lam=0.0).first_max() == pytest.approx(4.0)
    assert RayProfile(N=1.0, C=1.0, D=2.0, p=3.0, lam=1.0).first_max() == pytest.approx(1.0)
    assert RayProfile(N=1.0, C=1.0, D=1.0, p=3.0, lam=1.0).first_max() is None
    # большое λ при p < 2: луч монотонно растёт
    assert RayProfile(N=1.0, C=1.0, D=1.0, p=1.5, lam=10.0).first_max() is None


def test_ray_segment_max():
    ray = RayProfile(N=1.0, C=0.0, D=4.0, p=3.0, lam=0.0)
    # I(t) = t²/2 - t⁴, максимум 1/16 при t = 1/2
    assert ray.max_on_segment() == pytest.approx(1.0 / 16.0, rel=1e-10)


def test_gradient_second_order_consistency(rng):
    """Центральные разности энергии против спаривания невязки: порядок ε²"""
    params = Params(3.0, 1.0, 10.0)
    model = energy_service.model(params, WELL, GRID)
    for _ in range(20):
        x = random_smooth(model, rng, norm=2.0)
        v = random_smooth(model, rng)
        u_field, v_field = model.field(x), model.field(v)
        exact = pair(residual(u_field, params, WELL).field, v_field)
        assert exact == pytest.approx(float(model.gradient(x) @ v), rel=1e-12, abs=1e-14)

        errors = []
        for eps in (1e-2, 5e-3):
            fd = (model.value(x + eps * v) - model.value(x - eps * v)) / (2.0 * eps)
            errors.append(abs(fd - exact))
        if errors[1] > 1e-12:
            assert errors[0] / errors[1] == pytest.approx(4.0, rel=1e-2)


def test_jacobian_symmetric_and_consistent(rng):
    params = Params(3.0, 1.0, 10.0)
    for free_space in (False, True):
        model = energy_service.model(params, WELL, GRID, free_space)
        x = random_smooth(model, rng, norm=2.0)
        a, b = random_smooth(model, rng), random_smooth(model, rng)
        J = model.jacobian(x)
        assert float(a @ (J @ b)) == pytest.approx(float(b @ (J @ a)), rel=1e-9)
        eps = 1e-5
        fd = (model.gradient(x + eps * b) - model.gradient(x - eps * b)) / (2.0 * eps)
        assert np.allclose(fd, J @ b, rtol=1e-6, atol=1e-9 * np.abs(fd).max())


def test_residual_nehari_gap(rng):
    params = Params(3.0, 1.0, 10.0)
    model = energy_service.model(params, WELL, GRID)
    x = random_smooth(model, rng)
    res = model.residual(x)
    assert res.nehari_gap == pytest.approx(float(x @ model.gradient(x)))
    assert res.relative == pytest.approx(res.norm_l2 / res.scale)


def test_small_sphere():
    rho, alpha = small_sphere(1.0, 3.0)
    assert rho == 1.0
    assert alpha == pytest.approx(0.25)
    with pytest.raises(ValueError):
        small_sphere(0.0, 3.0)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.1, 20.0), p=st.floats(1.05, 4.95))
def test_small_sphere_is_ray_maximum(s, p):
    """α = max_ρ (ρ²/2 - S^{-(p+1)/2} ρ^{p+1}/(p+1)), достигается в ρ"""
    rho, alpha = small_sphere(s, p)
    f = lambda r: 0.5 * r ** 2 - s ** (-(p + 1) / 2.0) * r ** (p + 1) / (p + 1)
    assert f(rho) == pytest.approx(alpha, rel=1e-9)
    assert f(rho) >= f(0.99 * rho) and f(rho) >= f(1.01 * rho)


def test_scaling_integrals():
    grid = Grid("radial", 4.0, 4001)
    params = Params(3.0, 1.0, 0.0)
    base = energy_service.scaling_integrals(
        energy_service.scaled_bump(grid, (0, 0, 0), 2.0, 1.0), params, WELL, free_space=True)
    t = 2.0
    scaled = energy_service.scaling_integrals(
        energy_service.scaled_bump(grid, (0, 0, 0), 2.0, t), params, WELL, free_space=True)
    exponents = (3.0, 1.0, 3.0, 2.0 * (params.p + 1) - 3.0)
    for b, s, e in zip(base, scaled, exponents):
        assert s == pytest.approx(t ** e * b, rel=2e-3)


def test_scaled_bump_amplitude():
    grid = Grid("radial", 4.0, 401)
    w = energy_service.scaled_bump(grid, (0, 0, 0), 1.0, 2.0)
    assert w.values[0] == pytest.approx(4.0 * BUMP_AMPLITUDE)
    assert np.all(w.values[grid.axis >= 0.5] == 0.0)


def test_subquadratic_endpoint():
    grid = Grid("radial", 4.0, 801)
    params = Params(1.5, 0.01, 100.0)
    e = energy_service.endpoint_subquadratic(WELL, grid, params, rho=0.1)
    model = energy_service.model(params.replace(lam=0.0), WELL, grid)
    x = model.vector(e)
    assert model.value(x) < 0
    assert np.sqrt(model.dv_norm2(x)) > 0.1
    assert np.all(e.values[grid.axis >= 1.0] == 0.0)


def test_supercubic_endpoint():
    grid = Grid("radial", 4.0, 801)
    params = Params(3.0, 1.0, 50.0)
    e = energy_service.endpoint_supercubic(WELL, grid, params, rho=0.1)
    model = energy_service.model(params, WELL, grid)
    assert model.value(model.vector(e)) < 0
    assert energy_service.mp_level_upper(e, params, WELL) > 0


def test_endpoint_regime_and_resolution_errors():
    grid = Grid("radial", 4.0, 801)
    with pytest.raises(EndpointError):
        energy_service.endpoint_subquadratic(WELL, grid, Params(3.0, 1.0, 10.0), rho=0.1)
    with pytest.raises(EndpointError):
        energy_service.endpoint_supercubic(WELL, grid, Params(1.5, 0.01, 10.0), rho=0.1)
    coarse = Grid("radial", 4.0, 9)
    with pytest.raises(EndpointError):
        energy_service.endpoint_supercubic(WELL, coarse, Params(3.0, 1.0, 10.0), rho=0.1)


def test_bump_is_dirichlet_restricted(box_grid):
    b = bump(box_grid, (0.0, 0.0, 0.0), 5.0)
    assert np.all(b.values[~box_grid.active] == 0.0)
