import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import cg, factorized, LinearOperator

from config import config
from services.discretization import Field, Grid, gradient_energy, lq_norm

if TYPE_CHECKING:
    from services.bounds_service import BoundCheck

logger = logging.getLogger(__name__)

SIGN_TOL = 1e-8


class PoissonError(RuntimeError):
    def __init__(self, message: str, residual: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def clamp_nonnegative(phi: np.ndarray) -> np.ndarray:
    """φ >= 0 по принципу сравнения; нарушение выше округления пишется в лог"""
    low = float(np.min(phi))
    if low >= 0.0:
        return phi
    peak = float(np.max(np.abs(phi)))
    clamped = int(np.count_nonzero(phi < 0.0))
    if low < -SIGN_TOL * peak:
        logger.warning(f"Poisson solution violates phi >= 0: min {low:.3e} against peak {peak:.3e}, {clamped} nodes clamped")
    else:
        logger.debug(f"clamped {clamped} round-off negatives in phi (min {low:.3e})")
    return np.maximum(phi, 0.0)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Решение -Δφ = u² и две энергии, которые должны совпасть"""
    phi: Field
    grad_energy: float
    coupling: float
    iterations: int
    residual: float
    charge: float = 0.0

    @property
    def identity_gap(self) -> float:
        return abs(self.grad_energy - self.coupling) / max(self.grad_energy, 1e-300)


@lru_cache(maxsize=16)
def _direct_solver(grid: Grid):
    """Разложение K на активных узлах (радиальная сетка, трёхдиагональная матрица)"""
    return factorized(grid.stiffness_active.tocsc())


@lru_cache(maxsize=16)
def _jacobi(grid: Grid) -> LinearOperator:
    inv_diag = 1.0 / grid.stiffness_active.diagonal()
    return LinearOperator(grid.stiffness_active.shape, matvec=lambda x: inv_diag * x)


REFERENCE_GRID = Grid("radial", 1.0, 4097)


@lru_cache(maxsize=1)
def _reference_s0() -> float:
    return poisson_service.estimate_s0(REFERENCE_GRID)


class PoissonService:
    def __init__(self):
        self.rtol = config.POISSON_RTOL
        self.maxiter = config.POISSON_MAXITER

    def apply_inverse(self, grid: Grid, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, int]:
        """
        Решает K x = rhs на активных узлах (условие Дирихле на границе).

        Returns:
            (x на активных узлах, число итераций CG; 0 для прямого решения)
        """
        if grid.kind == "radial":
            return _direct_solver(grid)(rhs), 0

        if not np.any(rhs):
            return np.zeros_like(rhs), 0

        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        x, info = cg(
            grid.stiffness_active, rhs, x0=x0,
            rtol=self.rtol, atol=0.0, maxiter=self.maxiter,
            M=_jacobi(grid), callback=count,
        )
        if info != 0:
            residual = float(np.linalg.norm(grid.stiffness_active @ x - rhs) / np.linalg.norm(rhs))
            raise PoissonError(
                f"CG did not converge on {grid.kind} n={grid.n}: relative residual {residual:.3e} "
                f"after {iterations} iterations",
                residual=residual, iterations=iterations,
            )
        return x, iterations

    def solve_ball(self, u: Field) -> PoissonSolution:
        """-Δ_h φ = u² в B_k, φ = 0 на границе"""
        grid = u.grid
        idx = grid.active_index
        rho = (u.restricted().flat ** 2)
        w = grid.weights.ravel()
        rhs = w[idx] * rho[idx]

        if not np.any(rhs):
            return PoissonSolution(Field.zeros(grid), 0.0, 0.0, 0, 0.0)

        phi_active, iterations = self.apply_inverse(grid, rhs)
        phi_active = clamp_nonnegative(phi_active)
        phi = Field.from_active(grid, phi_active)

        Kphi = grid.stiffness_active @ phi_active
        res = (Kphi - rhs) / w[idx]
        residual = float(np.sqrt(np.sum(w[idx] * res ** 2)))
        scale = float(np.sqrt(np.sum(w[idx] * rho[idx] ** 2)))
        if residual > 1e3 * self.rtol * scale:
            logger.warning(f"Poisson residual {residual:.3e} is large relative to |u²| = {scale:.3e}")

        return PoissonSolution(
            phi=phi,
            grad_energy=gradient_energy(phi),
            coupling=float(np.dot(w, phi.flat * rho)),
            iterations=iterations,
            residual=residual / scale,
            charge=float(np.dot(w, rho)),
        )

    def _with_monopole(self, ball: PoissonSolution) -> PoissonSolution:
        grid = ball.phi.grid
        q = ball.charge
        c = grid.exterior_coefficient
        if grid.kind == "radial":
            shift = np.full(grid.shape, q * c)
        else:
            shift = np.where(grid.active, q * c, 0.0)
        return PoissonSolution(
            phi=ball.phi + shift,
            grad_energy=ball.grad_energy + q * q * c,
            coupling=ball.coupling + q * q * c,
            iterations=ball.iterations,
            residual=ball.residual,
            charge=q,
        )

    def solve_free(self, u: Field) -> PoissonSolution:
        """
        Ньютонов потенциал φ = (1/4π) ∫ u²(y)/|x-y| dy для радиального поля.

        Точное решение дискретного радиального оператора на всём R^3: решение
        в шаре плюс внешний хвост sum_{m>=n-1} Q h / (4π r_{m+1/2}^2), который
        суммируется через тригамму. grad_energy включает энергию поля вне B_k.
        """
        if u.grid.kind != "radial":
            raise PoissonError("free-space solve needs a radial grid; use free_potential on box3d")
        return self._with_monopole(self.solve_ball(u))

    def free_potential(self, u: Field) -> PoissonSolution:
        """Свободный потенциал: точный на радиальной сетке, шар + монополь Q/(4πk) на box3d"""
        return self._with_monopole(self.solve_ball(u))

    def verify_poisson_bounds(self, u: Field, sol: PoissonSolution, s0: float) -> list["BoundCheck"]:
        from services.bounds_service import BoundCheck

        if s0 <= 0:
            raise ValueError(f"Sobolev constant must be positive, got {s0}")
        l125 = lq_norm(u, 12.0 / 5.0)
        grad_rhs = l125 ** 2 / np.sqrt(s0)
        coupling_rhs = l125 ** 4 / s0
        tol = config.POINTWISE_TOL
        return [
            BoundCheck.build("poisson_gradient", float(np.sqrt(sol.grad_energy)), grad_rhs, tol * max(1.0, grad_rhs)),
            BoundCheck.build("poisson_coupling", sol.coupling, coupling_rhs, tol * max(1.0, coupling_rhs)),
        ]

    def estimate_s0(self, grid: Grid, sigma: Optional[float] = None) -> float:
        """
        S₀ = inf ∫|∇u|² / |u|_6^2 по профилю Обена-Таленти (1 + (r/σ)²)^{-1/2},
        сдвинутому так, чтобы обнулиться на r = k. Оценка сверху.
        """
        if grid.kind != "radial":
            raise ValueError("estimate_s0 expects a radial grid")
        sigma = grid.k / 200.0 if sigma is None else sigma
        profile = (1.0 + (grid.radius / sigma) ** 2) ** -0.5
        v = Field(grid, profile - profile[-1])
        num = gradient_energy(v)
        den = lq_norm(v, 6.0) ** 2
        s0 = num / den
        logger.debug(f"S0 estimate on {grid.describe()}: {s0:.6f}")
        return float(s0)

    def reference_s0(self) -> float:
        """S₀ на эталонной радиальной сетке (константа не зависит от масштаба)"""
        return _reference_s0()

    def estimate_s(self, grid: Grid, q: float) -> float:
        """S_q = inf ‖u‖²_{H¹} / |u|_q^2 по полям на сетке (L-BFGS-B с аналитическим градиентом)"""
        if not 2.0 < q < 6.0:
            raise ValueError(f"q must lie in (2, 6), got {q}")
        idx = grid.active_index
        K = grid.stiffness_active
        w = grid.weights.ravel()[idx]

        def quotient(x: np.ndarray):
            Kx = K @ x
            num = float(x @ Kx + np.sum(w * x * x))
            mass = float(np.sum(w * np.abs(x) ** q))
            den = mass ** (2.0 / q)
            grad_num = 2.0 * (Kx + w * x)
            grad_den = 2.0 * mass ** (2.0 / q - 1.0) * w * np.abs(x) ** (q - 2.0) * x
            return num / den, (grad_num * den - num * grad_den) / den ** 2

        x0 = np.exp(-grid.radius.ravel()[idx] ** 2)
        result = minimize(quotient, x0, jac=True, method="L-BFGS-B", options={"maxiter": 2000, "gtol": 1e-12})
        if not result.success:
            logger.warning(f"estimate_s(q={q}) stopped early: {result.message}")
        logger.debug(f"S_{q:g} estimate on {grid.describe()}: {result.fun:.6f}")
        return float(result.fun)


poisson_service = PoissonService()
