import numpy as np
import pytest

from services.discretization import Grid, integrate
from services.wells import (
    Ball,
    Ellipsoid,
    Well,
    WellError,
    default_well,
    omega0_mask,
    potential,
    radial_well,
    well_value,
)


def test_ball_distance():
    ball = Ball((0.0, 0.0, 0.0), 1.0)
    d = ball.distance(np.array([[2.0, 0.0, 0.0], [0.5, 0.0, 0.0]]))
    assert d == pytest.approx([1.0, 0.0])


def test_ellipsoid_distance_on_axes():
    e = Ellipsoid((0.0, 0.0, 0.0), (2.0, 1.0, 1.0))
    d = e.distance(np.array([[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 0.0, 0.0]]))
    assert d == pytest.approx([1.0, 1.0, 0.0], abs=1e-9)


def test_well_ramp_values():
    well = radial_well(1.0, tau=0.25)
    assert well_value(well, [0.5, 0.0, 0.0]) == 0.0
    assert well_value(well, [1.125, 0.0, 0.0]) == pytest.approx(0.5)
    assert well_value(well, [3.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_potential_is_one_plus_mu_g():
    grid = Grid("radial", 3.0, 301)
    well = radial_well(1.0)
    V = potential(well, grid, 50.0)
    assert np.all(V[grid.axis <= 1.0] == 1.0)
    assert np.allclose(V[grid.axis >= 1.25 + 1e-9], 51.0)


def test_check_grid():
    with pytest.raises(WellError):
        default_well().check_grid(Grid("radial", 4.0, 101))
    with pytest.raises(WellError):
        radial_well(2.0).check_grid(Grid("radial", 1.5, 101))
    radial_well(2.0).check_grid(Grid("radial", 2.0, 101))
    default_well().check_grid(Grid("box3d", 2.0, 21))


def test_well_validation():
    with pytest.raises(WellError):
        Well(())
    with pytest.raises(WellError):
        radial_well(1.0, tau=0.0)
    with pytest.raises(WellError):
        Ball((0.0, 0.0, 0.0), -1.0)
    with pytest.raises(WellError):
        Well.from_dict({"omega0": [{"type": "torus", "radius": 1.0}]})
    with pytest.raises(WellError):
        Well.from_dict({"omega0": [{"type": "ball", "center": [0.0, 0.0], "radius": 1.0}]})


def test_well_dict_round_trip():
    well = Well((Ball((-0.6, 0.0, 0.0), 0.5), Ellipsoid((0.6, 0.0, 0.0), (0.5, 0.3, 0.3))), 0.2, 2.0)
    assert Well.from_dict(well.to_dict()) == well


def test_radial_and_inscribed():
    assert radial_well(1.0).is_radial()
    assert not default_well().is_radial()
    center, radius = default_well().inscribed_ball()
    assert radius == 0.5
    assert abs(center[0]) == pytest.approx(0.6)


def test_omega0_mask_and_sample_cache():
    grid = Grid("radial", 2.0, 201)
    well = radial_well(1.0)
    mask = omega0_mask(well, grid)
    assert np.all(mask.values[grid.axis <= 1.0] == 1.0)
    assert np.all(mask.values[grid.axis > 1.0 + 1e-9] == 0.0)
    assert well.sample(grid) is well.sample(grid)


@pytest.mark.parametrize("well, volume", [
    (radial_well(1.0), 4.0 * np.pi / 3.0),
    (default_well(), 2.0 * (4.0 * np.pi / 3.0) * 0.5 ** 3),
    (Well((Ellipsoid((0.0, 0.0, 0.0), (1.0, 0.5, 0.5)),)), (4.0 * np.pi / 3.0) * 0.25),
])
def test_omega0_mask_volume_on_box(well, volume):
    grid = Grid("box3d", 1.2, 97)
    assert integrate(omega0_mask(well, grid)) == pytest.approx(volume, rel=2e-2)
