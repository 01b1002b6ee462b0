import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from services.discretization import Field, Grid

logger = logging.getLogger(__name__)

_ELLIPSOID_BISECTIONS = 80


class WellError(ValueError):
    """Некорректная яма или несогласованность ямы и сетки"""


@dataclass(frozen=True)
class Ball:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise WellError(f"ball radius must be positive, got {self.radius}")

    def distance(self, x: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(x - np.asarray(self.center), axis=1) - self.radius
        return np.maximum(d, 0.0)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    @property
    def inscribed(self) -> tuple[np.ndarray, float]:
        return np.asarray(self.center, dtype=float), self.radius

    @property
    def volume(self) -> float:
        return 4.0 * np.pi * self.radius ** 3 / 3.0

    def to_dict(self) -> dict:
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def __post_init__(self):
        if min(self.radii) <= 0:
            raise WellError(f"ellipsoid semi-axes must be positive, got {self.radii}")

    def distance(self, x: np.ndarray) -> np.ndarray:
        """
        Евклидово расстояние до осевого эллипсоида.

        Для внешних точек ближайшая точка x_i = a_i^2 y_i / (t + a_i^2), где t > 0 -
        корень F(t) = sum (a_i y_i / (t + a_i^2))^2 - 1. F убывает, корень лежит
        в [0, |a * y|], ищем векторной бисекцией.
        """
        a = np.asarray(self.radii, dtype=float)
        y = np.abs(x - np.asarray(self.center))
        level = np.sum((y / a) ** 2, axis=1)
        out = np.zeros(len(y))
        outside = level > 1.0
        if not np.any(outside):
            return out
        yo = y[outside]
        lo = np.zeros(len(yo))
        hi = np.linalg.norm(a * yo, axis=1)
        for _ in range(_ELLIPSOID_BISECTIONS):
            mid = 0.5 * (lo + hi)
            F = np.sum((a * yo / (mid[:, None] + a ** 2)) ** 2, axis=1) - 1.0
            lo = np.where(F > 0, mid, lo)
            hi = np.where(F > 0, hi, mid)
        t = 0.5 * (lo + hi)
        closest = a ** 2 * yo / (t[:, None] + a ** 2)
        out[outside] = np.linalg.norm(yo - closest, axis=1)
        return out

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + max(self.radii)

    @property
    def inscribed(self) -> tuple[np.ndarray, float]:
        return np.asarray(self.center, dtype=float), min(self.radii)

    @property
    def volume(self) -> float:
        return 4.0 * np.pi * float(np.prod(self.radii)) / 3.0

    def to_dict(self) -> dict:
        return {"type": "ellipsoid", "center": list(self.center), "radii": list(self.radii)}


Shape = Union[Ball, Ellipsoid]


@dataclass(frozen=True)
class Well:
    """
    Потенциальная яма g(x) = plateau * min(1, dist(x, Ω₀) / τ).

    Ω₀ - объединение шаров и эллипсоидов; g = 0 ровно на Ω₀ и g = plateau
    на расстоянии >= τ от Ω₀.
    """
    omega0: tuple[Shape, ...]
    tau: float = 0.25
    plateau: float = 1.0

    def __post_init__(self):
        if not self.omega0:
            raise WellError("omega0 must contain at least one shape")
        if self.tau <= 0:
            raise WellError(f"ramp width must be positive, got {self.tau}")
        if self.plateau <= 0:
            raise WellError(f"plateau must be positive, got {self.plateau}")

    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.min(np.stack([s.distance(x) for s in self.omega0]), axis=0)

    @property
    def bounding_radius(self) -> float:
        return max(s.bounding_radius for s in self.omega0)

    @property
    def outer_radius(self) -> float:
        """Радиус, за которым g = plateau"""
        return self.bounding_radius + self.tau

    def is_radial(self) -> bool:
        if len(self.omega0) != 1:
            return False
        shape = self.omega0[0]
        return isinstance(shape, Ball) and np.allclose(shape.center, 0.0)

    def inscribed_ball(self) -> tuple[np.ndarray, float]:
        """Наибольший из вписанных шаров компонент Ω₀"""
        return max((s.inscribed for s in self.omega0), key=lambda c: c[1])

    def check_grid(self, grid: Grid):
        if grid.kind == "radial" and not self.is_radial():
            raise WellError("radial grids need a single ball centred at the origin")
        if self.bounding_radius > grid.k * (1.0 + 1e-12):
            raise WellError(
                f"Ω₀ (bounding radius {self.bounding_radius:g}) is not inside B_k with k={grid.k:g}"
            )

    def sample(self, grid: Grid) -> np.ndarray:
        """g в узлах сетки (кэшируется)"""
        if grid.kind == "radial" and not self.is_radial():
            raise WellError("radial grids need a single ball centred at the origin")
        return _sample(self, grid)

    def to_dict(self) -> dict:
        return {
            "omega0": [s.to_dict() for s in self.omega0],
            "tau": self.tau,
            "plateau": self.plateau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Well":
        shapes = []
        for item in data.get("omega0", []):
            kind = item.get("type", "ball")
            center = tuple(float(c) for c in item.get("center", (0.0, 0.0, 0.0)))
            if len(center) != 3:
                raise WellError(f"shape centre must have 3 coordinates, got {center}")
            if kind == "ball":
                shapes.append(Ball(center, float(item["radius"])))
            elif kind == "ellipsoid":
                shapes.append(Ellipsoid(center, tuple(float(r) for r in item["radii"])))
            else:
                raise WellError(f"unknown shape type: {kind}")
        return cls(tuple(shapes), float(data.get("tau", 0.25)), float(data.get("plateau", 1.0)))


@lru_cache(maxsize=64)
def _sample(well: Well, grid: Grid) -> np.ndarray:
    g = well.plateau * np.minimum(1.0, well.distance(grid.points) / well.tau)
    g = g.reshape(grid.shape)
    g.setflags(write=False)
    return g


def radial_well(radius: float = 1.0, tau: float = 0.25) -> Well:
    return Well((Ball((0.0, 0.0, 0.0), radius),), tau)


def default_well() -> Well:
    """Несимметричная яма: два шара радиуса 0.5 в точках (±0.6, 0, 0)"""
    return Well((Ball((-0.6, 0.0, 0.0), 0.5), Ball((0.6, 0.0, 0.0), 0.5)), 0.25)


def well_value(well: Well, x) -> Union[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    g = well.plateau * np.minimum(1.0, well.distance(x) / well.tau)
    return float(g[0]) if x.ndim == 1 else g


def omega0_mask(well: Well, grid: Grid) -> Field:
    """Индикатор Ω₀ на сетке"""
    well.check_grid(grid)
    inside = well.distance(grid.points) == 0.0
    return Field(grid, inside.reshape(grid.shape).astype(float))


def potential(well: Well, grid: Grid, mu: float) -> np.ndarray:
    """V_mu = 1 + mu g"""
    return 1.0 + mu * well.sample(grid)
