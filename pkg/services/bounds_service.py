import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from config import config
from services.discretization import Field, Grid, Params, RegimeError, gradient_energy, lq_norm
from services.wells import Well, omega0_mask

logger = logging.getLogger(__name__)

UNIT_BALL = 4.0 * np.pi / 3.0
DECAY_SLACK = 0.85
DECAY_BOUNDARY_LAYER = 2.0


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    tolerance: float
    hard: bool = True
    details: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name: str, lhs: float, rhs: float, tolerance: float, hard: bool = True, **details) -> "BoundCheck":
        """Проверка lhs <= rhs с допуском: pass ⇔ margin >= -tolerance"""
        margin = float(rhs) - float(lhs)
        return cls(name, float(lhs), float(rhs), margin, bool(margin >= -tolerance), float(tolerance), hard, details)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConstantSet:
    p: float
    lam: float
    c_p: Optional[float] = None
    C_p_lambda: Optional[float] = None
    C_p_lambda_alt: Optional[float] = None
    C_gap: Optional[float] = None
    c_of_p: Optional[float] = None
    mu1: Optional[float] = None
    mu2: Optional[float] = None
    mu0: Optional[float] = None
    beta0: float = 3.0
    delta: float = 0.0
    gamma: float = 0.0
    f_inf: float = 0.0
    g_inf: float = 0.0
    r1: Optional[float] = None
    C1: Optional[float] = None
    C2: Optional[float] = None
    s0: Optional[float] = None
    M: Optional[float] = None
    M0: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


# --- замкнутые формулы ---

def c_p(p: float) -> float:
    """c_p = (p-1)(2-p)^{(2-p)/(p-1)}"""
    _require_subquadratic(p)
    return (p - 1.0) * (2.0 - p) ** ((2.0 - p) / (p - 1.0))


def c_of_p(p: float) -> float:
    """Порог несуществования c(p) = ¼ (p-1)² (2-p)^{2(2-p)/(p-1)}"""
    _require_subquadratic(p)
    return 0.25 * (p - 1.0) ** 2 * (2.0 - p) ** (2.0 * (2.0 - p) / (p - 1.0))


def log_C_closed(p: float, lam: float) -> float:
    """log C_{p,λ} = log(2^{2/(p-2)} (2-p)^{(2p-1)/(p-1)} [p(p-1)/λ]^{p/(2-p)})"""
    return (
        2.0 / (p - 2.0) * np.log(2.0)
        + (2.0 * p - 1.0) / (p - 1.0) * np.log(2.0 - p)
        + p / (2.0 - p) * (np.log(p) + np.log(p - 1.0) - np.log(lam))
    )


def log_C_pointwise(p: float, lam: float) -> float:
    """log C_{p,λ} = log(½ (2-p) (p c_p / (2λ))^{p/(2-p)})"""
    return np.log(0.5 * (2.0 - p)) + p / (2.0 - p) * (np.log(p * c_p(p)) - np.log(2.0 * lam))


def C_p_lambda(p: float, lam: float) -> tuple[float, float, float]:
    """Обе формы C_{p,λ} и их относительное расхождение"""
    _require_subquadratic(p)
    if lam <= 0:
        raise ValueError(f"C_p_lambda needs lambda > 0, got {lam}")
    a, b = log_C_closed(p, lam), log_C_pointwise(p, lam)
    return float(np.exp(a)), float(np.exp(b)), float(abs(np.expm1(a - b)))


def _require_subquadratic(p: float):
    if not 1.0 < p < 2.0:
        raise RegimeError(f"constant defined for p in (1, 2) only, got p={p}")


def moser_parameters(p: float) -> dict:
    beta0 = 3.0
    delta = 2.0 * beta0 / (2.0 * beta0 ** 2 + 1.0 - p)
    gamma = (6.0 - p - 1.0) / 6.0
    f_inf = (2.0 * delta ** 2 - delta ** 3) / (1.0 - delta) ** 2
    g_inf = delta ** 2 / (1.0 - delta)
    return {"beta0": beta0, "delta": delta, "gamma": gamma, "f_inf": f_inf, "g_inf": g_inf}


def moser_ladder(p: float, i: int) -> dict:
    """
    f(i) = sum_{l=2}^i l δ^l, g(i) = sum_{l=2}^i δ^l: точные суммы и замкнутые
    выражения в том виде, в каком они выписаны в выводе итерации.
    """
    if i < 2:
        raise ValueError(f"ladder starts at i = 2, got {i}")
    delta = moser_parameters(p)["delta"]
    ls = np.arange(2, i + 1)
    f_sum = float(np.sum(ls * delta ** ls))
    g_sum = float(np.sum(delta ** ls))
    f_closed = (
        2.0 * delta ** 2 / (1.0 - delta)
        + delta ** 3 * (1.0 - delta ** (i - 2)) / (1.0 - delta) ** 2
        + i * delta ** (i + 1) / (1.0 - delta)
    )
    g_closed = delta ** 2 * (1.0 - delta ** (i - 1)) / (1.0 - delta)
    return {"f": f_sum, "g": g_sum, "f_closed": float(f_closed), "g_closed": float(g_closed)}


def moser_radii(p: float, X: float, count: int = 40) -> np.ndarray:
    """r₁ = |B₁|^{-1/3}(68 β₀² X^{p-1} + 1)^{-γ/3}, r_i = (2 + 2^{-i})/4 · r₁"""
    m = moser_parameters(p)
    r1 = UNIT_BALL ** (-1.0 / 3.0) * (68.0 * m["beta0"] ** 2 * X ** (p - 1) + 1.0) ** (-m["gamma"] / 3.0)
    i = np.arange(2, count + 2)
    return np.concatenate([[r1], (2.0 + 2.0 ** (-i)) / 4.0 * r1])


def moser_constants(p: float, s0: float) -> dict:
    m = moser_parameters(p)
    beta0, delta, gamma = m["beta0"], m["delta"], m["gamma"]
    C = np.sqrt(68.0 / s0)
    c_bar = np.sqrt(34.0) * max(2.0, (16.0 * C * beta0 / 7.0) ** ((p - 1) / (2.0 * beta0)) / 32.0)
    c_bar1 = c_bar / np.sqrt(s0)
    e = m["g_inf"] + 1.0 / beta0
    base = UNIT_BALL ** (1.0 / 3.0) * (8.0 * c_bar1 + 16.0 * C * beta0 / 7.0)
    C1 = (2.0 / delta) ** m["f_inf"] * (base * 2.0 * (68.0 * beta0 ** 2 + 1.0) ** (gamma / 3.0)) ** e
    C2 = e * ((p - 1) / 2.0 + (p - 1) * gamma / 3.0)
    return {**m, "C": C, "C_bar1": c_bar1, "exponent": e, "base": base, "C1": float(C1), "C2": float(C2)}


def moser_refined_bound(X: float, p: float, s0: float) -> float:
    """Оценка |u|_∞ до огрубления к C₁(1 + X^{C₂})X"""
    mc = moser_constants(p, s0)
    inner = (
        mc["base"]
        * (1.0 + X ** ((p - 1) / 2.0))
        * (68.0 * mc["beta0"] ** 2 * X ** (p - 1) + 1.0) ** (mc["gamma"] / 3.0)
    )
    return float((2.0 / mc["delta"]) ** mc["f_inf"] * inner ** mc["exponent"] * X)


def moser_relaxed_bound(X: float, p: float, s0: float) -> float:
    mc = moser_constants(p, s0)
    return float(mc["C1"] * (1.0 + X ** mc["C2"]) * X)


def uniform_norm_bounds(c: float, s0: float, s_1225: float, p: float) -> tuple[float, float]:
    """M = 2√c + 4√C c, C = S₀⁻¹ S_{12/5}⁻²; M₀ - оценка Мозера при X = 2√c / √S₀"""
    C = 1.0 / (s0 * s_1225 ** 2)
    M = 2.0 * np.sqrt(c) + 4.0 * np.sqrt(C) * c
    M0 = moser_relaxed_bound(2.0 * np.sqrt(c) / np.sqrt(s0), p, s0)
    return float(M), float(M0)


def pointwise_constant_oracle(p: float, lam: float) -> float:
    """max_{t>=0} (t^p - (λ/c_p) t²) численно"""
    cp = c_p(p)
    t_star = (p * cp / (2.0 * lam)) ** (1.0 / (2.0 - p))
    res = minimize_scalar(
        lambda t: -(t ** p - lam / cp * t ** 2),
        bounds=(0.0, 2.0 * t_star), method="bounded",
        options={"xatol": 1e-12 * t_star},
    )
    return float(-res.fun)


def scalar_inequality_check(p: float, t_max: float = 100.0, samples: int = 10_000) -> BoundCheck:
    """t + c_p t² - t^p >= 0 на [0, t_max]"""
    t = np.linspace(0.0, t_max, samples)
    values = t + c_p(p) * t ** 2 - t ** p
    i = int(np.argmin(values))
    return BoundCheck.build(
        f"scalar_inequality_p{p:g}", 0.0, float(values[i]), config.CLOSED_FORM_TOL, t_at_min=float(t[i])
    )


def constants_agreement(n: int = 50) -> float:
    """Максимальное расхождение двух форм C_{p,λ} на сетке n×n в (1,2)×(0, c(p)]"""
    worst = 0.0
    for p in np.linspace(1.0, 2.0, n + 2)[1:-1]:
        for frac in np.linspace(0.0, 1.0, n + 1)[1:]:
            worst = max(worst, C_p_lambda(p, frac * c_of_p(p))[2])
    return worst


def constants(
    params: Params,
    s0: Optional[float] = None,
    s_1225: Optional[float] = None,
    c_level: Optional[float] = None,
) -> ConstantSet:
    """
    Все явные константы для (p, λ). Зависящие от режима записи остаются None,
    когда режим не подходит; константы Мозера и равномерные оценки требуют
    S₀, S_{12/5} и уровня c.
    """
    p, lam = params.p, params.lam
    values: dict = {"p": p, "lam": lam, **moser_parameters(p)}

    if params.regime == "subquadratic":
        values["c_p"] = c_p(p)
        values["c_of_p"] = c_of_p(p)
        if lam > 0:
            C, C_alt, gap = C_p_lambda(p, lam)
            values.update(C_p_lambda=C, C_p_lambda_alt=C_alt, C_gap=gap)
            values["mu1"] = C ** (p - 1) - 1.0
            values["mu0"] = 3.0 * C ** (p - 1) - 3.0
            if lam >= values["c_of_p"]:
                logger.warning(f"lambda={lam:g} >= c(p)={values['c_of_p']:.6g}: no nontrivial solution is expected")

    if s0 is not None:
        values["s0"] = s0
        mc = moser_constants(p, s0)
        values["C1"], values["C2"] = mc["C1"], mc["C2"]
        if c_level is not None:
            values["r1"] = float(moser_radii(p, 2.0 * np.sqrt(c_level) / np.sqrt(s0))[0])
            if s_1225 is not None:
                M, M0 = uniform_norm_bounds(c_level, s0, s_1225, p)
                values["M"], values["M0"] = M, M0
                if params.regime == "supercubic":
                    values["mu2"] = max(0.0, M0 ** (p - 1) - 1.0)
                    values["mu0"] = 3.0 * M0 ** (p - 1) - 3.0

    return ConstantSet(**values)


# --- проверки на решениях ---

def _worst(grid: Grid, margins: np.ndarray) -> tuple[int, float]:
    i = int(np.argmin(margins))
    return i, float(grid.radius.ravel()[i])


def check_pointwise(u: Field, phi: Field, params: Params) -> list[BoundCheck]:
    """|u| <= c_p φ и |u| <= C_{p,λ} по узлам; допуск 1e-8 плюс h²|u|_∞"""
    if params.regime != "subquadratic":
        raise RegimeError(f"pointwise bounds need p in (1, 2), got p={params.p}")
    grid = u.grid
    cp = c_p(params.p)
    C = C_p_lambda(params.p, params.lam)[0]
    absu = np.abs(u.flat)
    tol = config.POINTWISE_TOL + grid.h ** 2 * u.sup_norm()

    rhs_phi = cp * phi.flat
    i, r = _worst(grid, rhs_phi - absu)
    j, s = _worst(grid, C - absu)
    return [
        BoundCheck.build("pointwise_cp_phi", absu[i], rhs_phi[i], tol, worst_radius=r),
        BoundCheck.build("pointwise_C_p_lambda", absu[j], C, tol, worst_radius=s),
    ]


def ps_device_check(u: Field, phi: Field, params: Params) -> BoundCheck:
    """√λ ∫|u|³ <= ½∫|∇u|² + (λ/2)∫φu²"""
    w = u.grid.weights
    lam = params.lam
    lhs = np.sqrt(lam) * float(np.sum(w * np.abs(u.values) ** 3))
    rhs = 0.5 * gradient_energy(u) + 0.5 * lam * float(np.sum(w * phi.values * u.values ** 2))
    return BoundCheck.build("ps_device", lhs, rhs, config.POINTWISE_TOL * max(1.0, rhs))


def bounded_ps_norm_bound(params: Params, k: float) -> float:
    """Корень ½x² = x + ((2-p)/3)(3√λ/(p+1))^{-(p+1)/(2-p)} |B_k|"""
    p, lam = params.p, params.lam
    _require_subquadratic(p)
    if lam <= 0:
        raise ValueError("bounded PS estimate needs lambda > 0")
    K = (2.0 - p) / 3.0 * (3.0 * np.sqrt(lam) / (p + 1.0)) ** (-(p + 1.0) / (2.0 - p)) * UNIT_BALL * k ** 3
    return float(1.0 + np.sqrt(1.0 + 2.0 * K))


def supercubic_norm_bound(c: float) -> dict:
    """В критической точке ‖u‖ <= 2√c; для PS-последовательностей ‖u‖² <= 8c + 2"""
    return {"critical": float(2.0 * np.sqrt(c)), "ps_squared": float(8.0 * c + 2.0)}


def moser_bound(u: Field, params: Params, s0: float) -> BoundCheck:
    """|u|_∞ <= C₁(1 + X^{C₂}) X, X = |u|_6"""
    X = lq_norm(u, 6.0)
    if X == 0.0:
        raise ValueError("Moser bound is undefined for u = 0")
    rhs = moser_relaxed_bound(X, params.p, s0)
    radii = moser_radii(params.p, X)
    return BoundCheck.build(
        "moser_sup", u.sup_norm(), rhs, config.POINTWISE_TOL * max(1.0, rhs),
        l6_norm=X, r1=float(radii[0]), s0=s0, refined=moser_refined_bound(X, params.p, s0),
    )


def level_checks(total: float, alpha: float, c_lambda: float, tol: Optional[float] = None) -> list[BoundCheck]:
    """α <= I(u) <= c_λ"""
    tol = config.NEHARI_TOL * max(1.0, abs(c_lambda)) if tol is None else tol
    return [
        BoundCheck.build("level_lower", alpha, total, tol),
        BoundCheck.build("level_upper", total, c_lambda, tol),
    ]


@dataclass(frozen=True)
class DecayFit:
    A: float
    slope: float
    check: BoundCheck
    window: tuple[float, float]


def decay_fit(u: Field, params: Params, R0: float) -> DecayFit:
    """
    Подгонка u(r) <= A r^{-1/2} e^{-(√μ/2)(r - R₀)} на окне (R₀, k-2].
    Узлы ниже 1e-10 |u|_∞ отбрасываются, окно - непрерывный отрезок от R₀.
    """
    grid = u.grid
    if grid.kind != "radial":
        raise ValueError("decay_fit expects a radial field")
    r = grid.axis
    in_window = (r > R0) & (r <= grid.k - DECAY_BOUNDARY_LAYER)
    if np.count_nonzero(in_window) < 3:
        raise ValueError(f"decay window ({R0:g}, {grid.k - DECAY_BOUNDARY_LAYER:g}] holds fewer than 3 nodes")
    start = int(np.argmax(in_window))
    values = u.values
    if values[start] <= 0:
        raise ValueError(f"u is nonpositive at the start of the decay window r = {r[start]:g}")

    threshold = 1e-10 * u.sup_norm()
    stop = start
    while stop < len(r) and in_window[stop] and values[stop] > threshold:
        stop += 1
    if stop - start < 3:
        raise ValueError("decay window holds fewer than 3 nodes above the noise floor")

    rw, uw = r[start:stop], values[start:stop]
    rate = 0.5 * np.sqrt(params.mu)
    scaled = uw * np.sqrt(rw) * np.exp(rate * (rw - R0))
    i = int(np.argmax(scaled))
    A = float(scaled[i])
    slope = float(np.polyfit(rw, np.log(uw * np.sqrt(rw)), 1)[0])

    inner = rw[i] <= rw[0] + 0.9 * (rw[-1] - rw[0])
    passed = bool(np.isfinite(A) and inner and slope <= -DECAY_SLACK * rate)
    check = BoundCheck(
        "decay_slope", slope, -DECAY_SLACK * rate, -DECAY_SLACK * rate - slope, passed, 0.0,
        details={"A": A, "argmax_radius": float(rw[i]), "R0": R0, "window_end": float(rw[-1])},
    )
    return DecayFit(A, slope, check, (float(rw[0]), float(rw[-1])))


def tail_mass(u: Field, R: float) -> float:
    """∫_{|x|>R} |∇u|² + u² (рёбра по радиусу середины)"""
    grid = u.grid
    if R >= grid.k:
        raise ValueError(f"tail radius {R} must be below k = {grid.k}")
    G = grid.gradient_matrix
    mid = 0.5 * grid.h * (abs(G) @ grid.points)
    edge_outside = np.linalg.norm(mid, axis=1) > R
    node_outside = grid.radius.ravel() > R
    grad = G @ u.flat
    return float(
        np.sum(grid.edge_weights[edge_outside] * grad[edge_outside] ** 2)
        + np.sum(grid.weights.ravel()[node_outside] * u.flat[node_outside] ** 2)
    )


def interior_mask(mask: Field) -> np.ndarray:
    """Узлы Ω₀, все соседи которых тоже в Ω₀"""
    grid = mask.grid
    inside = mask.flat > 0.5
    G = grid.gradient_matrix
    edges_touching_outside = (abs(G) @ (~inside).astype(float)) > 0
    bad = (abs(G).T @ edges_touching_outside.astype(float)) > 0
    return inside & ~bad & grid.active.ravel()


def limit_problem_residual(u: Field, well: Well, params: Params) -> float:
    """
    L²-норма невязки -Δu + u + λ φ_free u - |u|^{p-1}u на внутренних узлах Ω₀
    для u, обнулённого вне Ω₀.
    """
    from services.energy_service import energy_service

    mask = omega0_mask(well, u.grid)
    interior = interior_mask(mask)
    if not np.any(interior):
        raise ValueError("Ω₀ has no interior nodes on this grid")
    restricted = u * mask
    model = energy_service.model(params.replace(mu=0.0), well, u.grid, free_space=True)
    r = model.residual(model.vector(restricted)).field.flat
    w = u.grid.weights.ravel()
    return float(np.sqrt(np.sum(w[interior] * r[interior] ** 2)))


def mass_outside(u: Field, well: Well) -> float:
    """∫_{R³∖Ω₀} u²"""
    mask = omega0_mask(well, u.grid)
    return float(np.sum(u.grid.weights * (1.0 - mask.values) * u.values ** 2))


def g_weighted_mass(u: Field, well: Well) -> float:
    """∫ g u²"""
    return float(np.sum(u.grid.weights * well.sample(u.grid) * u.values ** 2))
