import dataclasses
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal, Optional

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)

GridKind = Literal["radial", "box3d"]
GRID_KINDS = ("radial", "box3d")


class DiscretizationError(ValueError):
    """Некорректная сетка, поле или параметры задачи"""


class RegimeError(ValueError):
    """Значение p вне режима, для которого определена операция"""


@dataclass(frozen=True)
class Params:
    """Тройка (p, λ, μ) системы Шрёдингера–Пуассона"""
    p: float
    lam: float
    mu: float

    def __post_init__(self):
        if not 1.0 < self.p < 5.0:
            raise DiscretizationError(f"p must lie in (1, 5), got {self.p}")
        if self.lam < 0:
            raise DiscretizationError(f"lambda must be >= 0, got {self.lam}")
        if self.mu < 0:
            raise DiscretizationError(f"mu must be >= 0, got {self.mu}")

    @property
    def regime(self) -> str:
        if self.p < 2.0:
            return "subquadratic"
        if self.p >= 3.0:
            return "supercubic"
        return "intermediate"

    def replace(self, **changes) -> "Params":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {"p": self.p, "lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class Grid:
    """
    Дискретная область: шар B_k.

    radial - узлы r_i = i*h на [0, k], последний узел несёт условие Дирихле.
    box3d  - равномерная решётка на кубе [-k, k]^3, узлы вне B_k - нулевые
             фиктивные узлы (маска).
    """
    kind: GridKind
    k: float
    n: int

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise DiscretizationError(f"unknown grid kind: {self.kind}")
        if not self.k > 0:
            raise DiscretizationError(f"grid radius must be positive, got {self.k}")
        if self.n < 3 or (self.kind == "box3d" and self.n < 5):
            raise DiscretizationError(f"too few nodes for {self.kind}: {self.n}")

    @classmethod
    def with_spacing(cls, kind: GridKind, k: float, h: float) -> "Grid":
        """Сетка с заданным шагом (для согласованных сеток в расписаниях по k)"""
        span = k if kind == "radial" else 2.0 * k
        return cls(kind, float(k), int(round(span / h)) + 1)

    @cached_property
    def h(self) -> float:
        span = self.k if self.kind == "radial" else 2.0 * self.k
        return span / (self.n - 1)

    @cached_property
    def axis(self) -> np.ndarray:
        if self.kind == "radial":
            return np.linspace(0.0, self.k, self.n)
        return np.linspace(-self.k, self.k, self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) if self.kind == "radial" else (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def volume(self) -> float:
        return 4.0 * np.pi * self.k ** 3 / 3.0

    @cached_property
    def radius(self) -> np.ndarray:
        if self.kind == "radial":
            return self.axis
        x = self.axis
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        return np.sqrt(X ** 2 + Y ** 2 + Z ** 2)

    @cached_property
    def points(self) -> np.ndarray:
        """Координаты узлов, массив (size, 3); радиальные узлы лежат на оси x"""
        if self.kind == "radial":
            pts = np.zeros((self.n, 3))
            pts[:, 0] = self.axis
            return pts
        x = self.axis
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    @cached_property
    def active(self) -> np.ndarray:
        """Узлы-неизвестные (внутри B_k)"""
        return self.radius < self.k * (1.0 - 1e-12)

    @cached_property
    def active_index(self) -> np.ndarray:
        return np.flatnonzero(self.active.ravel())

    @cached_property
    def weights(self) -> np.ndarray:
        h = self.h
        if self.kind == "radial":
            r = self.axis
            w = 4.0 * np.pi * r ** 2 * h
            w[-1] *= 0.5
            # узел r=0: предел 3u''(0) для -Δ
            w[0] = np.pi * h ** 3 / 6.0
            return w
        return np.where(self.active, h ** 3, 0.0)

    @cached_property
    def gradient_matrix(self) -> sparse.csr_matrix:
        """Разностный градиент: рёбра x узлы"""
        h, n = self.h, self.n
        d1 = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
        if self.kind == "radial":
            return d1.tocsr()
        eye = sparse.identity(n, format="csr")
        return sparse.vstack([
            sparse.kron(d1, sparse.kron(eye, eye)),
            sparse.kron(eye, sparse.kron(d1, eye)),
            sparse.kron(eye, sparse.kron(eye, d1)),
        ]).tocsr()

    @cached_property
    def edge_weights(self) -> np.ndarray:
        h = self.h
        if self.kind == "radial":
            mid = self.axis[:-1] + 0.5 * h
            return 4.0 * np.pi * mid ** 2 * h
        return np.full(self.gradient_matrix.shape[0], h ** 3)

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """K = G^T W G на всех узлах"""
        G = self.gradient_matrix
        return (G.T @ sparse.diags(self.edge_weights) @ G).tocsr()

    @cached_property
    def stiffness_active(self) -> sparse.csr_matrix:
        idx = self.active_index
        return self.stiffness[idx][:, idx].tocsr()

    @cached_property
    def exterior_coefficient(self) -> float:
        """
        Потенциал вне B_k на единицу заряда для точного свободного решения
        дискретного радиального оператора: sum_{m>=n-1} h / (4 pi r_{m+1/2}^2)
        """
        from scipy.special import polygamma
        if self.kind == "radial":
            return float(polygamma(1, self.n - 0.5)) / (4.0 * np.pi * self.h)
        return 1.0 / (4.0 * np.pi * self.k)

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k, "n": self.n, "h": self.h}


@dataclass(frozen=True, eq=False)
class Field:
    """Вещественные значения в узлах сетки (неизменяемые)"""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise DiscretizationError(
                    f"field has {values.size} values, grid has {self.grid.size} nodes"
                )
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise DiscretizationError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_radius(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, fn(grid.radius))

    @classmethod
    def from_points(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, np.asarray(fn(grid.points)).reshape(grid.shape))

    @classmethod
    def from_active(cls, grid: Grid, active_values: np.ndarray) -> "Field":
        flat = np.zeros(grid.size)
        flat[grid.active_index] = active_values
        return cls(grid, flat)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def active_values(self) -> np.ndarray:
        return self.flat[self.grid.active_index]

    def restricted(self) -> "Field":
        """Обнуление вне активных узлов (условие Дирихле)"""
        return Field(self.grid, np.where(self.grid.active, self.values, 0.0))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _other(self, other) -> np.ndarray:
        if isinstance(other, Field):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other) -> "Field":
        return Field(self.grid, self.values + self._other(other))

    def __sub__(self, other) -> "Field":
        return Field(self.grid, self.values - self._other(other))

    def __mul__(self, other) -> "Field":
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


def check_same_grid(u: Field, v: Field):
    if u.grid != v.grid:
        raise DiscretizationError(f"grid mismatch: {u.grid} vs {v.grid}")


def integrate(f: Field) -> float:
    """Квадратура sum w_i f_i"""
    values = np.asarray(f.values)
    if not np.all(np.isfinite(values)):
        raise DiscretizationError("cannot integrate non-finite values")
    return float(np.sum(f.grid.weights * values))


def gradient_energy(u: Field, v: Optional[Field] = None) -> float:
    """Дискретный интеграл grad u . grad v"""
    v = u if v is None else v
    check_same_grid(u, v)
    G = u.grid.gradient_matrix
    return float(np.sum(u.grid.edge_weights * (G @ u.flat) * (G @ v.flat)))


def dv_inner(u: Field, v: Field, well, params: Params) -> float:
    """<u, v> = ∫ grad u grad v + V_mu u v, V_mu = 1 + mu g"""
    check_same_grid(u, v)
    potential = 1.0 + params.mu * well.sample(u.grid)
    mass = float(np.sum(u.grid.weights * potential * u.values * v.values))
    return gradient_energy(u, v) + mass


def lq_norm(u: Field, q: float) -> float:
    if q < 1:
        raise DiscretizationError(f"L^q norm needs q >= 1, got {q}")
    return float(np.sum(u.grid.weights * np.abs(u.values) ** q)) ** (1.0 / q)


def neg_laplacian(u: Field) -> Field:
    """-Δ_h u = (K u) / w на активных узлах, ноль на остальных"""
    grid = u.grid
    idx = grid.active_index
    Ku = grid.stiffness @ u.flat
    out = np.zeros(grid.size)
    out[idx] = Ku[idx] / grid.weights.ravel()[idx]
    return Field(grid, out)


def extend(u: Field, target: Grid) -> Field:
    """Продолжение нулём из B_k на сетку большего радиуса k' >= k"""
    source = u.grid
    if target.kind != source.kind:
        raise DiscretizationError(f"cannot extend {source.kind} field onto {target.kind} grid")
    if target.k < source.k:
        raise DiscretizationError(f"target radius {target.k} is smaller than source radius {source.k}")

    if source.kind == "radial":
        values = np.interp(target.axis, source.axis, u.values, right=0.0)
    else:
        x = source.axis
        interp = RegularGridInterpolator(
            (x, x, x), u.values, method="linear", bounds_error=False, fill_value=0.0
        )
        values = interp(target.points).reshape(target.shape)
        values = np.where(target.active, values, 0.0)
    values = np.where(target.radius <= source.k, values, 0.0)
    return Field(target, values)


def dump_field(u: Field) -> tuple[bytes, dict]:
    """Бинарный дамп: little-endian float64, построчно, плюс JSON-описание"""
    data = np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")
    return data, u.grid.describe()


def load_field(data: bytes, sidecar: dict) -> Field:
    grid = Grid(sidecar["kind"], float(sidecar["k"]), int(sidecar["n"]))
    if abs(grid.h - float(sidecar.get("h", grid.h))) > 1e-12 * max(grid.h, 1.0):
        raise DiscretizationError(f"sidecar spacing {sidecar['h']} does not match grid {grid.h}")
    values = np.frombuffer(data, dtype="<f8").reshape(grid.shape)
    return Field(grid, values)
