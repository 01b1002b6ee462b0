import dataclasses
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.sparse.linalg import minres

from config import config
from services.bounds_service import (
    BoundCheck,
    g_weighted_mass,
    limit_problem_residual,
    mass_outside,
    tail_mass,
)
from services.discretization import Field, Grid, Params, RegimeError, extend, lq_norm
from services.energy_service import EnergyBreakdown, EnergyModel, energy_service, small_sphere
from services.poisson_service import poisson_service
from services.task_tracker import SweepTracker
from services.wells import Well, radial_well

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 1e-14
STALL_SWEEPS = 5


class SolverError(RuntimeError):
    """Сбой решателя: исчезновение шага, разрыв цепочки, нет критических точек"""


class NoPassError(SolverError):
    """Уровень перевала схлопнулся к нулю"""

    def __init__(self, message: str, norm: float = 0.0):
        super().__init__(message)
        self.norm = norm


@dataclass(frozen=True)
class MpOptions:
    samples: int = config.MP_SAMPLES
    max_sweeps: int = config.MP_MAX_SWEEPS
    level_tol: float = config.MP_LEVEL_TOL
    basin: float = config.NEWTON_BASIN
    residual_tol: float = config.NEWTON_TOL
    flow_tol: float = config.FLOW_TOL


@dataclass(frozen=True, eq=False)
class MpPath:
    """Дискретный путь γ(t_i); γ(0) = 0, γ(1) = конец пути"""
    samples: tuple[Field, ...]
    level: float
    history: tuple[float, ...]
    endpoint_energy: float
    endpoint_norm: float


@dataclass(frozen=True, eq=False)
class Solution:
    u: Field
    phi: Field
    params: Params
    grid: Grid
    energy: EnergyBreakdown
    residual_norm: float
    relative_residual: float
    nehari_gap: float
    norm: float
    iterations: int
    provenance: str
    converged: bool = True
    free_space: bool = False
    path: Optional[MpPath] = None

    def summary(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "grid": self.grid.describe(),
            "energy": self.energy.to_dict(),
            "residual_norm": self.residual_norm,
            "relative_residual": self.relative_residual,
            "nehari_gap": self.nehari_gap,
            "norm": self.norm,
            "sup_norm": self.u.sup_norm(),
            "l6_norm": lq_norm(self.u, 6.0),
            "iterations": self.iterations,
            "provenance": self.provenance,
            "converged": self.converged,
            "free_space": self.free_space,
            "path_level": self.path.level if self.path else None,
        }


@dataclass(frozen=True, eq=False)
class DomainApproximation:
    solutions: list[Solution]
    cauchy_gaps: list[float]
    tail_masses: list[float]
    failure: Optional[str] = None


@dataclass(frozen=True, eq=False)
class GroundState:
    best: Solution
    found: list[Solution]
    norm_lower_bound: float
    checks: list[BoundCheck]


@dataclass(frozen=True, eq=False)
class Continuation:
    solutions: list[Solution]
    limit: Optional[Solution]
    gaps: list[float]
    failure: Optional[str] = None


@dataclass(frozen=True, eq=False)
class MuSweepEntry:
    solution: Solution
    g_mass: float
    mass_outside: float
    limit_residual: float

    def to_dict(self) -> dict:
        mu = self.solution.params.mu
        return {
            "mu": mu,
            "g_mass": self.g_mass,
            "mu_g_mass": mu * self.g_mass,
            "mass_outside": self.mass_outside,
            "limit_residual": self.limit_residual,
        }


@dataclass(frozen=True, eq=False)
class MuSweep:
    entries: list[MuSweepEntry]
    direct: Optional[Solution]
    direct_residual: Optional[float]
    failure: Optional[str] = None


@dataclass(frozen=True, eq=False)
class ScanEntry:
    lam: float
    solution: Optional[Solution]
    error: Optional[str] = None


@dataclass(frozen=True)
class ProbeResult:
    initializations: int
    collapsed: int
    survivors: list[float] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return self.collapsed == self.initializations


@lru_cache(maxsize=32)
def sobolev_quotient(grid: Grid, q: float) -> float:
    """S_q на сетке (кэш: оценка требует оптимизации)"""
    return poisson_service.estimate_s(grid, q)


def _relative(model: EnergyModel, x: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    norm = float(np.sqrt(np.sum(g * g / model.w)))
    Ax = model.A @ x
    scale = float(np.sqrt(np.sum(Ax * Ax / model.w)))
    return norm, (norm / scale if scale > 0 else norm)


class SolverService:
    def __init__(self):
        self.zero_norm = config.ZERO_NORM

    # --- сборка результата ---

    def _solution(self, model: EnergyModel, x: np.ndarray, provenance: str, iterations: int,
                  converged: bool, path: Optional[MpPath] = None) -> Solution:
        phi = model.hartree_potential(x)
        res = model.residual(x, phi)
        return Solution(
            u=model.field(x),
            phi=model.phi_field(x),
            params=model.params,
            grid=model.grid,
            energy=model.breakdown(x, phi),
            residual_norm=res.norm_l2,
            relative_residual=res.relative,
            nehari_gap=res.nehari_gap,
            norm=float(np.sqrt(model.dv_norm2(x))),
            iterations=iterations,
            provenance=provenance,
            converged=converged,
            free_space=model.free_space,
            path=path,
        )

    def _model(self, params: Params, well: Well, grid: Grid, free_space: bool) -> EnergyModel:
        if params.regime == "intermediate":
            raise RegimeError(f"p = {params.p} lies in [2, 3): no existence theory to drive")
        return energy_service.model(params, well, grid, free_space)

    # --- Ньютон ---

    def refine_newton(self, seed: Field, params: Params, well: Well, free_space: bool = False,
                      tol: Optional[float] = None, maxiter: Optional[int] = None,
                      provenance: str = "newton") -> Solution:
        """
        Ньютон-Крылов без матрицы: MINRES с предобуславливателем A⁻¹ и
        возвратом по норме невязки. При расходимости - лучшая итерация.
        """
        model = energy_service.model(params, well, seed.grid, free_space)
        tol = config.NEWTON_TOL if tol is None else tol
        maxiter = config.NEWTON_MAXITER if maxiter is None else maxiter
        M = model.preconditioner()

        x = model.vector(seed)
        phi = model.hartree_potential(x)
        g = model.gradient(x, phi)
        norm, rel = _relative(model, x, g)
        best = (norm, x)
        steps = 0

        while rel > tol and steps < maxiter:
            J = model.jacobian(x, phi)
            eta = float(np.clip(0.1 * rel, 1e-13, 1e-2))
            dx, info = minres(J, -g, rtol=eta, maxiter=500, M=M)
            if info < 0:
                logger.warning(f"MINRES breakdown (info={info}) at Newton step {steps}")
                break

            s = 1.0
            while True:
                trial = x + s * dx
                trial_phi = model.hartree_potential(trial)
                trial_g = model.gradient(trial, trial_phi)
                trial_norm, trial_rel = _relative(model, trial, trial_g)
                if trial_norm <= (1.0 - ARMIJO * s) * norm or s < 1e-8:
                    break
                s *= 0.5
            steps += 1
            if trial_norm >= norm:
                logger.warning(f"Newton stalled at step {steps}: residual {norm:.3e}")
                break
            x, phi, g, norm, rel = trial, trial_phi, trial_g, trial_norm, trial_rel
            if norm < best[0]:
                best = (norm, x)
            logger.debug(f"newton step {steps}: residual {norm:.3e} (relative {rel:.3e}), damping {s:g}")

        converged = rel <= tol
        if not converged:
            logger.warning(f"Newton returned best iterate: residual {best[0]:.3e} after {steps} steps")
            x = best[1]
        return self._solution(model, x, provenance, steps, converged)

    # --- градиентный поток ---

    def _project(self, model: EnergyModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        """Перенос на первый максимум луча t ↦ I(ty); без максимума - без изменений"""
        phi = model.hartree_potential(y)
        t = model.ray(y, phi).first_max()
        if t is None:
            return y, phi, False
        return t * y, t * t * phi, True

    def gradient_flow(self, u0: Field, params: Params, well: Well, free_space: bool = False,
                      tol: Optional[float] = None, maxiter: Optional[int] = None) -> Optional[Solution]:
        """
        Соболевский спуск с проекцией на многообразие Нехари.

        Returns:
            Solution при относительной невязке <= tol, None если поток ушёл в ноль
        """
        model = energy_service.model(params, well, u0.grid, free_space)
        tol = config.FLOW_TOL if tol is None else tol
        maxiter = config.FLOW_MAXITER if maxiter is None else maxiter

        x = model.vector(u0)
        if np.sqrt(max(model.dv_norm2(x), 0.0)) < self.zero_norm:
            return None
        x, phi, _ = self._project(model, x)
        value = model.value(x)
        step, rel = 1.0, np.inf

        for it in range(maxiter):
            g = model.gradient(x, phi)
            _, rel = _relative(model, x, g)
            if rel <= tol:
                logger.debug(f"gradient flow converged in {it} iterations, I = {value:.10g}")
                return self._solution(model, x, "gradient-flow", it, True)

            d = -model.riesz(g)
            slope = float(g @ d)
            s = min(1.0, 2.0 * step)
            while True:
                y, y_phi, _ = self._project(model, x + s * d)
                y_value = model.breakdown(y, y_phi).total
                if y_value <= value + ARMIJO * s * slope:
                    break
                s *= 0.5
                if s < MIN_STEP:
                    raise SolverError(f"gradient flow step underflow at iteration {it} (I = {value:.6g})")
            x, phi, value, step = y, y_phi, y_value, s

            if np.sqrt(max(model.dv_norm2(x), 0.0)) < self.zero_norm:
                logger.debug(f"gradient flow collapsed to zero after {it + 1} iterations")
                return None
            if it % 200 == 0:
                logger.debug(f"flow iteration {it}: I = {value:.10g}, relative residual {rel:.3e}")

        logger.warning(f"gradient flow hit {maxiter} iterations, relative residual {rel:.3e}")
        return self._solution(model, x, "gradient-flow", maxiter, False)

    # --- горный перевал ---

    def _endpoint(self, model: EnergyModel, rho: float) -> tuple[np.ndarray, bool]:
        """Конец пути; луч удваивается, пока I(e) >= 0 в текущей модели"""
        params, well, grid = model.params, model.well, model.grid
        if params.regime == "supercubic":
            e = model.vector(energy_service.endpoint_supercubic(well, grid, params, rho=rho))
        else:
            e = model.vector(energy_service.endpoint_subquadratic(well, grid, params, rho=rho))
        ray = model.ray(e)
        t = 1.0
        for _ in range(40):
            if ray.value(t) < 0:
                return t * e, True
            t *= 2.0
        return e, False

    def mountain_pass(self, params: Params, well: Well, grid: Grid, opts: Optional[MpOptions] = None,
                      free_space: bool = False) -> Solution:
        """
        Численный перевал: путь из opts.samples точек от 0 до конца e,
        спуск максимизатора вдоль градиента без касательной компоненты,
        затем поток до бассейна и Ньютон.
        """
        opts = opts or MpOptions()
        model = self._model(params, well, grid, free_space)
        rho, _ = small_sphere(sobolev_quotient(grid, params.p + 1), params.p)
        e, admissible = self._endpoint(model, rho)

        if not admissible:
            ray = model.ray(e)
            t = ray.first_max() or 1.0
            logger.info(f"no admissible endpoint for {params.to_dict()}: flowing from the ray maximum t = {t:.4g}")
            found = self.gradient_flow(model.field(t * e), params, well, free_space, tol=opts.flow_tol)
            if found is None:
                raise NoPassError(f"level collapse: no negative-energy endpoint and the flow decays to zero")
            logger.warning("critical point found without an admissible mountain-pass path")
            sol = self.refine_newton(found.u, params, well, free_space, tol=opts.residual_tol,
                                     provenance="gradient-flow")
            if sol.norm < self.zero_norm:
                raise NoPassError("flowed critical point collapsed to zero", norm=sol.norm)
            return sol

        ts = np.linspace(0.0, 1.0, opts.samples)
        xs = [t * e for t in ts]
        levels = np.array([model.value(x) for x in xs])
        history = [float(np.max(levels[1:-1]))]
        stalled = 0

        for sweep in range(opts.max_sweeps):
            j = 1 + int(np.argmax(levels[1:-1]))
            x = xs[j]
            phi = model.hartree_potential(x)
            g = model.gradient(x, phi)
            _, rel = _relative(model, x, g)
            if rel <= opts.basin:
                break

            d = -model.riesz(g)
            tangent = xs[j + 1] - xs[j - 1]
            At = model.A @ tangent
            tt = float(tangent @ At)
            if tt > 0:
                d = d - float(d @ At) / tt * tangent
            slope = float(g @ d)
            if slope >= 0:
                break

            s = 1.0
            while True:
                trial = x + s * d
                value = model.value(trial)
                if value <= levels[j] + ARMIJO * s * slope:
                    break
                s *= 0.5
                if s < MIN_STEP:
                    value = None
                    break
            if value is None:
                break
            xs[j] = trial
            levels[j] = value

            level = float(np.max(levels[1:-1]))
            stalled = stalled + 1 if history[-1] - level < opts.level_tol else 0
            history.append(level)
            if stalled >= STALL_SWEEPS:
                break
            if sweep % 50 == 0:
                logger.debug(f"mountain pass sweep {sweep}: level {level:.10g}, relative residual {rel:.3e}")

        path = MpPath(
            samples=tuple(model.field(x) for x in xs),
            level=history[-1],
            history=tuple(history),
            endpoint_energy=float(levels[-1]),
            endpoint_norm=float(np.sqrt(model.dv_norm2(xs[-1]))),
        )
        j = 1 + int(np.argmax(levels[1:-1]))
        x = xs[j]
        logger.info(f"mountain pass path level {path.level:.8g} after {len(history) - 1} sweeps")

        g = model.gradient(x)
        _, rel = _relative(model, x, g)
        seed = model.field(x)
        if rel > opts.basin:
            flowed = self.gradient_flow(seed, params, well, free_space, tol=opts.basin)
            if flowed is None:
                raise NoPassError("level collapse: the flow from the path maximiser decays to zero")
            seed = flowed.u

        sol = self.refine_newton(seed, params, well, free_space, tol=opts.residual_tol, provenance="mountain-pass")
        if sol.norm < self.zero_norm:
            raise NoPassError("mountain-pass solution collapsed to zero", norm=sol.norm)
        return dataclasses.replace(sol, path=path)

    # --- расписания ---

    def domain_approximation(self, params: Params, well: Well, grid: Grid, k_schedule: list[float],
                             opts: Optional[MpOptions] = None) -> DomainApproximation:
        """Решения на B_k для возрастающих k с тем же шагом, каждое из продолжения предыдущего"""
        if any(b <= a for a, b in zip(k_schedule, k_schedule[1:])):
            raise ValueError(f"k schedule must increase: {k_schedule}")
        solutions, gaps, tails = [], [], []
        prev: Optional[Solution] = None
        try:
            for k in k_schedule:
                g = Grid.with_spacing(grid.kind, k, grid.h)
                if prev is None:
                    sol = self.mountain_pass(params, well, g, opts)
                else:
                    seed = extend(prev.u, g)
                    sol = self.refine_newton(seed, params, well, provenance="continuation")
                    if not sol.converged:
                        flowed = self.gradient_flow(seed, params, well)
                        if flowed is None:
                            raise SolverError(f"continuation to k = {k:g} collapsed")
                        sol = self.refine_newton(flowed.u, params, well, provenance="continuation")
                    diff = sol.u - seed
                    m = energy_service.model(params, well, g)
                    gaps.append(float(np.sqrt(m.dv_norm2(m.vector(diff)))))
                solutions.append(sol)
                tails.append(tail_mass(sol.u, 0.5 * k))
                logger.info(f"domain approximation k = {k:g}: I = {sol.energy.total:.10g}")
                prev = sol
        except Exception as e:
            logger.error(f"domain approximation aborted: {e}", exc_info=True)
            return DomainApproximation(solutions, gaps, tails, failure=str(e))
        return DomainApproximation(solutions, gaps, tails)

    def ground_state(self, params: Params, well: Well, grid: Grid, n_starts: int, seed: int = 0,
                     opts: Optional[MpOptions] = None) -> GroundState:
        """
        Минимум энергии среди критических точек: перевал, возмущённые
        перезапуски и смены знака.
        """
        if params.regime != "subquadratic":
            raise RegimeError(f"ground_state drives p in (1, 2), got p={params.p}")
        if n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        model = self._model(params, well, grid, False)
        mp = self.mountain_pass(params, well, grid, opts)
        found = [mp]
        seeds = SweepTracker.spawn_seeds(seed, n_starts)

        for i in range(1, n_starts):
            rng = np.random.default_rng(seeds[i])
            base = found[int(rng.integers(len(found)))]
            x = model.vector(base.u)
            kind = i % 3
            if kind == 1:
                start = -x
            else:
                noise = model.riesz(model.w * rng.standard_normal(model.size))
                scale = 0.1 * i * np.sqrt(model.dv_norm2(x) / max(model.dv_norm2(noise), 1e-300))
                start = x + scale * noise if kind == 2 else 0.5 * x + scale * noise
            try:
                flowed = self.gradient_flow(model.field(start), params, well)
                if flowed is None:
                    continue
                found.append(self.refine_newton(flowed.u, params, well, provenance="gradient-flow"))
            except SolverError as e:
                logger.warning(f"ground state start {i} failed: {e}")

        found = [s for s in found if s.converged and s.norm >= self.zero_norm]
        if not found:
            raise SolverError("no nontrivial critical point found")
        best = min(found, key=lambda s: s.energy.total)
        lower = sobolev_quotient(grid, params.p + 1) ** ((params.p + 1) / (2.0 * (params.p - 1)))
        checks = [
            BoundCheck.build(f"critical_norm_lower_{i}", lower, s.norm, config.NEHARI_TOL * lower)
            for i, s in enumerate(found)
        ]
        logger.info(f"ground state: {len(found)} critical points, min I = {best.energy.total:.10g}")
        return GroundState(best, found, lower, checks)

    def lambda_continuation(self, params_base: Params, well: Well, grid: Grid, lambdas: list[float],
                            opts: Optional[MpOptions] = None) -> Continuation:
        """Цепочка λ ↓ 0 с продолжением решения и прямое решение при λ = 0"""
        if params_base.regime != "supercubic":
            raise RegimeError(f"lambda continuation needs p in [3, 5), got p={params_base.p}")
        if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError(f"lambda schedule must decrease: {lambdas}")
        solutions: list[Solution] = []
        try:
            for lam in lambdas:
                params = params_base.replace(lam=lam)
                if not solutions:
                    sol = self.mountain_pass(params, well, grid, opts)
                else:
                    sol = self.refine_newton(solutions[-1].u, params, well, provenance="continuation")
                    if not sol.converged:
                        flowed = self.gradient_flow(solutions[-1].u, params, well)
                        if flowed is None:
                            raise SolverError(f"continuation chain broke at lambda = {lam:g}")
                        sol = self.refine_newton(flowed.u, params, well, provenance="continuation")
                solutions.append(sol)
                logger.info(f"continuation lambda = {lam:g}: I = {sol.energy.total:.10g}")
            limit = self.mountain_pass(params_base.replace(lam=0.0), well, grid, opts)
        except Exception as e:
            logger.error(f"lambda continuation aborted: {e}", exc_info=True)
            return Continuation(solutions, None, [], failure=str(e))

        model = energy_service.model(limit.params, well, grid)
        u0 = model.vector(limit.u)
        n0 = np.sqrt(model.dv_norm2(u0))
        gaps = []
        for sol in solutions:
            x = model.vector(sol.u)
            gap = min(model.dv_norm2(x - u0), model.dv_norm2(x + u0))
            gaps.append(float(np.sqrt(gap) / n0))
        return Continuation(solutions, limit, gaps)

    def mu_sweep(self, params_base: Params, well: Well, grid: Grid, mus: list[float],
                 opts: Optional[MpOptions] = None) -> MuSweep:
        """
        Цепочка μ ↑ со свободным потенциалом; для каждого μ - ∫g u², масса вне Ω₀
        и невязка предельной задачи на Ω₀.
        """
        if any(b <= a for a, b in zip(mus, mus[1:])):
            raise ValueError(f"mu schedule must increase: {mus}")
        entries: list[MuSweepEntry] = []
        prev: Optional[Solution] = None
        try:
            for mu in mus:
                params = params_base.replace(mu=mu)
                if prev is None:
                    sol = self.mountain_pass(params, well, grid, opts, free_space=True)
                else:
                    sol = self.refine_newton(prev.u, params, well, free_space=True, provenance="continuation")
                    if not sol.converged:
                        raise SolverError(f"mu sweep chain broke at mu = {mu:g}")
                entries.append(MuSweepEntry(
                    solution=sol,
                    g_mass=g_weighted_mass(sol.u, well),
                    mass_outside=mass_outside(sol.u, well),
                    limit_residual=limit_problem_residual(sol.u, well, params),
                ))
                logger.info(f"mu sweep mu = {mu:g}: I = {sol.energy.total:.10g}, ∫g u² = {entries[-1].g_mass:.4e}")
                prev = sol
        except Exception as e:
            logger.error(f"mu sweep aborted: {e}", exc_info=True)
            return MuSweep(entries, None, None, failure=str(e))

        direct, direct_residual = None, None
        if well.is_radial():
            radius = well.omega0[0].radius
            inner = Grid.with_spacing("radial", radius, grid.h)
            inner_well = radial_well(radius, well.tau)
            params0 = params_base.replace(mu=0.0)
            direct = self.mountain_pass(params0, inner_well, inner, opts, free_space=True)
            direct_residual = limit_problem_residual(direct.u, inner_well, params0)
        else:
            logger.info("direct Ω₀ solve is only available for a radial well")
        return MuSweep(entries, direct, direct_residual)

    def scan_entry(self, params: Params, well: Well, grid: Grid, opts: Optional[MpOptions] = None) -> ScanEntry:
        try:
            return ScanEntry(params.lam, self.mountain_pass(params, well, grid, opts))
        except SolverError as e:
            logger.info(f"lambda = {params.lam:g}: {e}")
            return ScanEntry(params.lam, None, str(e))

    def lambda_scan(self, params_base: Params, well: Well, grid: Grid, lambdas: list[float],
                    opts: Optional[MpOptions] = None) -> list[ScanEntry]:
        """Независимые решения при λ ↑ из одного и того же семейства концов пути"""
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError(f"lambda schedule must increase: {lambdas}")
        return [self.scan_entry(params_base.replace(lam=lam), well, grid, opts) for lam in lambdas]

    def nonexistence_probe(self, params: Params, well: Well, grid: Grid, n_inits: int, seed: int = 0) -> ProbeResult:
        """Случайные гладкие начальные поля через градиентный поток; сколько ушло в ноль"""
        model = self._model(params, well, grid, False)
        collapsed, survivors, errors = 0, [], []
        for child in SweepTracker.spawn_seeds(seed, n_inits):
            rng = np.random.default_rng(child)
            noise = model.riesz(model.w * rng.standard_normal(model.size))
            amplitude = 10.0 ** rng.uniform(-1.0, 1.5)
            start = amplitude * noise / np.sqrt(max(model.dv_norm2(noise), 1e-300))
            try:
                result = self.gradient_flow(model.field(start), params, well)
            except SolverError as e:
                errors.append(str(e))
                continue
            if result is None:
                collapsed += 1
            else:
                survivors.append(result.energy.total)
        logger.info(f"nonexistence probe {params.to_dict()}: {collapsed}/{n_inits} collapsed")
        return ProbeResult(n_inits, collapsed, survivors, errors)


def summarize_scan(entries: list[ScanEntry]) -> dict:
    """Последнее успешное λ и монотонность энергии (мягкая проверка)"""
    solved = [e for e in entries if e.solution is not None]
    energies = [e.solution.energy.total for e in solved]
    monotone = all(b >= a - config.NEHARI_TOL * max(1.0, abs(a)) for a, b in zip(energies, energies[1:]))
    return {
        "last_success_lambda": solved[-1].lam if solved else None,
        "energies": energies,
        "energy_nondecreasing": monotone,
    }


solver_service = SolverService()
