import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.linalg import LinearOperator, cg, factorized, spilu

from config import config
from services.discretization import Field, Grid, Params, check_same_grid, gradient_energy
from services.poisson_service import clamp_nonnegative, poisson_service
from services.wells import Well, potential

logger = logging.getLogger(__name__)

BUMP_AMPLITUDE = 4.0
MAX_DOUBLINGS = 40


class EndpointError(RuntimeError):
    """Не удалось построить конец пути горного перевала"""


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    hartree: float
    potential_power: float

    @property
    def total(self) -> float:
        return self.kinetic + self.hartree - self.potential_power

    def to_dict(self) -> dict:
        return {
            "kinetic": self.kinetic,
            "hartree": self.hartree,
            "potential_power": self.potential_power,
            "total": self.total,
        }


@dataclass(frozen=True, eq=False)
class Residual:
    field: Field
    norm_l2: float
    nehari_gap: float
    scale: float = 1.0

    @property
    def relative(self) -> float:
        """Норма невязки относительно нормы линейной части (-Δ + V)u"""
        return self.norm_l2 / self.scale if self.scale > 0 else self.norm_l2


@dataclass(frozen=True)
class RayProfile:
    """
    I(tu) = t² N/2 + λ t⁴ C/4 - t^{p+1} D/(p+1), поскольку φ_{tu} = t² φ_u.
    N = ‖u‖², C = ∫φ_u u², D = ∫|u|^{p+1}
    """
    N: float
    C: float
    D: float
    p: float
    lam: float

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return 0.5 * t ** 2 * self.N + 0.25 * self.lam * t ** 4 * self.C - t ** (self.p + 1) * self.D / (self.p + 1)

    def _psi(self, t: float) -> float:
        # I'(tu)u / t
        return self.N + self.lam * self.C * t ** 2 - self.D * t ** (self.p - 1)

    def first_max(self) -> Optional[float]:
        """Первый внутренний максимум t ↦ I(tu) или None, если его нет"""
        if self.D <= 0 or self.N <= 0:
            return None
        p, lc = self.p, self.lam * self.C
        if lc <= 0:
            return (self.N / self.D) ** (1.0 / (p - 1))
        if p == 3.0:
            return np.sqrt(self.N / (self.D - lc)) if self.D > lc else None
        if p > 3.0:
            hi = 1.0
            while self._psi(hi) > 0:
                hi *= 2.0
            return brentq(self._psi, 0.0, hi, xtol=1e-14, rtol=1e-14)
        # p < 3: ψ убывает, затем растёт; минимум в t_m
        t_m = ((p - 1) * self.D / (2.0 * lc)) ** (1.0 / (3.0 - p))
        if self._psi(t_m) >= 0:
            return None
        return brentq(self._psi, 0.0, t_m, xtol=1e-14, rtol=1e-14)

    def max_on_segment(self) -> float:
        """max_{t∈[0,1]} I(tu): сетка 257 точек плюс уточнение ограниченным поиском"""
        ts = np.linspace(0.0, 1.0, 257)
        values = self.value(ts)
        i = int(np.argmax(values))
        if i == 0 or i == len(ts) - 1:
            return float(values[i])
        res = minimize_scalar(
            lambda t: -float(self.value(t)),
            bounds=(ts[i - 1], ts[i + 1]), method="bounded",
            options={"xatol": 1e-13},
        )
        return float(max(values[i], -res.fun))


class EnergyModel:
    """
    Дискретный функционал I_k на активных узлах сетки.

    Все векторы - значения на активных узлах. free_space заменяет
    потенциал шара на свободный (монополь вне B_k).
    """

    def __init__(self, params: Params, well: Well, grid: Grid, free_space: bool = False):
        well.check_grid(grid)
        self.params = params
        self.well = well
        self.grid = grid
        self.free_space = free_space
        self.idx = grid.active_index
        self.w = grid.weights.ravel()[self.idx]
        self.V = potential(well, grid, params.mu).ravel()[self.idx]
        self.K = grid.stiffness_active
        self.A = (self.K + sparse.diags(self.w * self.V)).tocsr()
        self.exterior = grid.exterior_coefficient if free_space else 0.0
        self.reg_eps = config.REG_EPS

    @property
    def size(self) -> int:
        return len(self.idx)

    def vector(self, u: Field) -> np.ndarray:
        if u.grid != self.grid:
            raise ValueError(f"field lives on {u.grid}, model on {self.grid}")
        return u.active_values.copy()

    def field(self, x: np.ndarray) -> Field:
        return Field.from_active(self.grid, x)

    # --- Пуассон ---

    def hartree_potential(self, x: np.ndarray) -> np.ndarray:
        rhs = self.w * x * x
        if not np.any(rhs):
            return np.zeros_like(x)
        phi, _ = poisson_service.apply_inverse(self.grid, rhs)
        phi = clamp_nonnegative(phi)
        if self.exterior:
            phi = phi + self.exterior * float(np.sum(rhs))
        return phi

    def phi_field(self, x: np.ndarray) -> Field:
        """φ_u как поле на всей сетке (на радиальной свободной сетке монополь и в граничном узле)"""
        phi = self.field(self.hartree_potential(x)).values
        if self.free_space and self.grid.kind == "radial":
            phi = phi.copy()
            phi.ravel()[-1] = self.exterior * float(np.sum(self.w * x * x))
        return Field(self.grid, phi)

    # --- функционал ---

    def dv_norm2(self, x: np.ndarray) -> float:
        return float(x @ (self.A @ x))

    def power(self, x: np.ndarray) -> np.ndarray:
        return np.abs(x) ** (self.params.p - 1) * x

    def breakdown(self, x: np.ndarray, phi: Optional[np.ndarray] = None) -> EnergyBreakdown:
        phi = self.hartree_potential(x) if phi is None else phi
        p = self.params.p
        return EnergyBreakdown(
            kinetic=0.5 * self.dv_norm2(x),
            hartree=0.25 * self.params.lam * float(np.sum(self.w * phi * x * x)),
            potential_power=float(np.sum(self.w * np.abs(x) ** (p + 1))) / (p + 1),
        )

    def value(self, x: np.ndarray) -> float:
        return self.breakdown(x).total

    def gradient(self, x: np.ndarray, phi: Optional[np.ndarray] = None) -> np.ndarray:
        """Евклидов градиент: A x + λ w φ x - w |x|^{p-1} x"""
        phi = self.hartree_potential(x) if phi is None else phi
        return self.A @ x + self.params.lam * self.w * phi * x - self.w * self.power(x)

    def residual(self, x: np.ndarray, phi: Optional[np.ndarray] = None) -> Residual:
        phi = self.hartree_potential(x) if phi is None else phi
        g = self.gradient(x, phi)
        r = g / self.w
        norm = float(np.sqrt(np.sum(self.w * r * r)))
        linear = (self.A @ x) / self.w
        scale = float(np.sqrt(np.sum(self.w * linear * linear)))
        nehari = float(x @ g)
        return Residual(self.field(r), norm, nehari, scale)

    def ray(self, x: np.ndarray, phi: Optional[np.ndarray] = None) -> RayProfile:
        phi = self.hartree_potential(x) if phi is None else phi
        p = self.params.p
        return RayProfile(
            N=self.dv_norm2(x),
            C=float(np.sum(self.w * phi * x * x)),
            D=float(np.sum(self.w * np.abs(x) ** (p + 1))),
            p=p,
            lam=self.params.lam,
        )

    # --- линеаризация ---

    def power_derivative(self, x: np.ndarray) -> np.ndarray:
        p = self.params.p
        if p < 2.0:
            return p * (x * x + self.reg_eps ** 2) ** ((p - 1) / 2.0)
        return p * np.abs(x) ** (p - 1)

    def jacobian(self, x: np.ndarray, phi: Optional[np.ndarray] = None) -> LinearOperator:
        """
        J v = A v + λ w (φ v + 2 x K⁻¹(w x v)) - w f'(x) v,
        на свободной сетке ещё λ w x c·sum(2 w x v).
        """
        phi = self.hartree_potential(x) if phi is None else phi
        lam = self.params.lam
        w, A = self.w, self.A
        diag = lam * w * phi - w * self.power_derivative(x)

        def matvec(v):
            v = np.ravel(v)
            out = A @ v + diag * v
            if lam:
                rhs = 2.0 * w * x * v
                dphi, _ = poisson_service.apply_inverse(self.grid, rhs)
                if self.exterior:
                    dphi = dphi + self.exterior * float(np.sum(rhs))
                out = out + lam * w * x * dphi
            return out

        return LinearOperator((self.size, self.size), matvec=matvec, rmatvec=matvec, dtype=float)

    @cached_property
    def _solve_A(self):
        if self.grid.kind == "radial":
            return factorized(self.A.tocsc())
        ilu = spilu(self.A.tocsc(), drop_tol=1e-4, fill_factor=10)
        precond = LinearOperator(self.A.shape, matvec=ilu.solve)

        def solve(b):
            x, info = cg(self.A, b, rtol=1e-10, atol=0.0, maxiter=2000, M=precond)
            if info != 0:
                logger.warning(f"Riesz solve stopped with info={info}")
            return x

        return solve

    def riesz(self, g: np.ndarray) -> np.ndarray:
        """Представитель Рисса градиента в скалярном произведении <u, v> = uᵀ A v"""
        return self._solve_A(g)

    def preconditioner(self) -> LinearOperator:
        return LinearOperator(self.A.shape, matvec=self.riesz, dtype=float)


def bump(grid: Grid, center, radius: float, amplitude: float = 1.0) -> Field:
    """a (1 - |x - x0|²/ε₀²)² внутри шара, 0 снаружи"""
    center = np.asarray(center, dtype=float)
    s = np.sum((grid.points - center) ** 2, axis=1) / radius ** 2
    values = amplitude * np.where(s < 1.0, (1.0 - s) ** 2, 0.0)
    return Field(grid, values.reshape(grid.shape)).restricted()


def small_sphere(s: float, p: float) -> tuple[float, float]:
    """
    Радиус ρ и уровень α малой сферы: I(u) ≥ ½ρ² - S^{-(p+1)/2} ρ^{p+1}/(p+1)
    при ‖u‖ = ρ, максимум по ρ.
    """
    if s <= 0:
        raise ValueError(f"Sobolev constant must be positive, got {s}")
    rho = s ** ((p + 1) / (2.0 * (p - 1)))
    alpha = rho ** 2 * (p - 1) / (2.0 * (p + 1))
    return float(rho), float(alpha)


class EnergyService:
    def __init__(self):
        self._models: dict[tuple, EnergyModel] = {}

    def model(self, params: Params, well: Well, grid: Grid, free_space: bool = False) -> EnergyModel:
        key = (params, well, grid, free_space)
        model = self._models.get(key)
        if model is None:
            if len(self._models) > 32:
                self._models.clear()
            model = EnergyModel(params, well, grid, free_space)
            self._models[key] = model
        return model

    def energy(self, u: Field, params: Params, well: Well, free_space: bool = False) -> EnergyBreakdown:
        m = self.model(params, well, u.grid, free_space)
        return m.breakdown(m.vector(u))

    def residual(self, u: Field, params: Params, well: Well, free_space: bool = False) -> Residual:
        m = self.model(params, well, u.grid, free_space)
        return m.residual(m.vector(u))

    def ray_profile(self, u: Field, params: Params, well: Well, free_space: bool = False) -> RayProfile:
        m = self.model(params, well, u.grid, free_space)
        return m.ray(m.vector(u))

    def mp_level_upper(self, endpoint: Field, params: Params, well: Well) -> float:
        """c_λ = max_{t∈[0,1]} I(t e)"""
        return self.ray_profile(endpoint, params, well).max_on_segment()

    def _small_sphere_radius(self, grid: Grid, p: float) -> float:
        s = poisson_service.estimate_s(grid, p + 1)
        return small_sphere(s, p)[0]

    def _inscribed(self, well: Well, grid: Grid) -> tuple[np.ndarray, float]:
        well.check_grid(grid)
        center, radius = well.inscribed_ball()
        if grid.kind == "radial":
            center = np.zeros(3)
        if radius < 3.0 * grid.h:
            raise EndpointError(
                f"interior ball of Ω₀ (radius {radius:g}) is not resolved by h = {grid.h:g}"
            )
        return center, radius

    def endpoint_subquadratic(self, well: Well, grid: Grid, params: Params, rho: Optional[float] = None) -> Field:
        """
        e = t₀ w, w - бамп в Ω₀; t₀ - наименьшая степень двойки с I₀(e) < 0 и ‖e‖ > ρ.
        От λ и μ не зависит (носитель в Ω₀, λ = 0).
        """
        if not 1.0 < params.p < 2.0:
            raise EndpointError(f"subquadratic endpoint needs p in (1, 2), got {params.p}")
        center, radius = self._inscribed(well, grid)
        w = bump(grid, center, radius)
        rho = self._small_sphere_radius(grid, params.p) if rho is None else rho
        ray = self.ray_profile(w, params.replace(lam=0.0), well)

        t = 1.0
        for _ in range(MAX_DOUBLINGS):
            if ray.value(t) < 0 and t * np.sqrt(ray.N) > rho:
                logger.debug(f"subquadratic endpoint: t0 = {t:g}, I0 = {float(ray.value(t)):.4e}")
                return t * w
            t *= 2.0
        raise EndpointError("no admissible subquadratic endpoint within the doubling budget")

    def scaling_integrals(self, w: Field, params: Params, well: Well,
                          free_space: bool = False) -> tuple[float, float, float, float]:
        """A = ∫|∇w|², B = ∫w², C = ∫φ_w w², D = ∫|w|^{p+1}"""
        m = self.model(params, well, w.grid, free_space)
        x = m.vector(w)
        phi = m.hartree_potential(x)
        return (
            gradient_energy(w),
            float(np.sum(m.w * x * x)),
            float(np.sum(m.w * phi * x * x)),
            float(np.sum(m.w * np.abs(x) ** (params.p + 1))),
        )

    def scaled_bump(self, grid: Grid, center, radius: float, t: float) -> Field:
        """w_t(x) = t² w(t (x - x₀))"""
        return bump(grid, center, radius / t, BUMP_AMPLITUDE * t ** 2)

    def endpoint_supercubic(self, well: Well, grid: Grid, params: Params, rho: Optional[float] = None) -> Field:
        """w_{t₀} = t₀² w(t₀(x - x₀)), t₀ удваивается до I_λ(w_{t₀}) < 0 и ‖w_{t₀}‖ > ρ"""
        if not 3.0 <= params.p < 5.0:
            raise EndpointError(f"supercubic endpoint needs p in [3, 5), got {params.p}")
        center, radius = self._inscribed(well, grid)
        rho = self._small_sphere_radius(grid, params.p) if rho is None else rho
        m = self.model(params, well, grid)

        t = 1.0
        for _ in range(MAX_DOUBLINGS):
            if radius / t < 3.0 * grid.h:
                raise EndpointError(
                    f"scaled bump support {radius / t:g} fell below 3h before I < 0 (h = {grid.h:g})"
                )
            e = self.scaled_bump(grid, center, radius, t)
            x = m.vector(e)
            if m.value(x) < 0 and np.sqrt(m.dv_norm2(x)) > rho:
                logger.debug(f"supercubic endpoint: t0 = {t:g}, I = {m.value(x):.4e}")
                return e
            t *= 2.0
        raise EndpointError("no admissible supercubic endpoint within the doubling budget")


energy_service = EnergyService()


def energy(u: Field, params: Params, well: Well) -> EnergyBreakdown:
    return energy_service.energy(u, params, well)


def residual(u: Field, params: Params, well: Well) -> Residual:
    return energy_service.residual(u, params, well)


def pair(u: Field, v: Field) -> float:
    """∫ u v"""
    check_same_grid(u, v)
    return float(np.sum(u.grid.weights * u.values * v.values))
