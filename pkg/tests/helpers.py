import numpy as np

from services.discretization import Field, Grid


def random_smooth(model, rng, norm: float = 1.0) -> np.ndarray:
    """Гладкое случайное поле A⁻¹(w ξ), нормированное в ‖·‖"""
    noise = model.riesz(model.w * rng.standard_normal(model.size))
    return norm * noise / np.sqrt(model.dv_norm2(noise))


def bump_field(grid: Grid, radius: float, amplitude: float = 1.0) -> Field:
    return Field.from_radius(grid, lambda r: amplitude * np.where(r < radius, (1.0 - (r / radius) ** 2) ** 2, 0.0))
