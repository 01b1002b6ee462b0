import numpy as np
import pytest

from services.discretization import Grid, Params
from services.solver_service import solver_service
from services.wells import radial_well


@pytest.fixture
def radial_grid() -> Grid:
    return Grid("radial", 4.0, 401)


@pytest.fixture
def box_grid() -> Grid:
    return Grid("box3d", 2.0, 21)


@pytest.fixture
def unit_well():
    return radial_well(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def supercubic_solution():
    """p = 3, λ = 1, μ = 50 на радиальной сетке k = 8, n = 2048"""
    params = Params(3.0, 1.0, 50.0)
    well = radial_well(1.0)
    grid = Grid("radial", 8.0, 2049)
    return solver_service.mountain_pass(params, well, grid), well


@pytest.fixture(scope="session")
def subquadratic_solution():
    """p = 1.5, λ = 0.002, μ = 100; Ω₀ - шар радиуса 6 в B_12"""
    params = Params(1.5, 0.002, 100.0)
    well = radial_well(6.0)
    grid = Grid("radial", 12.0, 1201)
    return solver_service.mountain_pass(params, well, grid), well
