# -*- coding: utf-8 -*-
"""纯虚协方差的玻色高斯积分

对 R⁴ 上 ∫dμ_φ(ζ) f(ζ)，f 只依赖 r = ‖ζ‖ 和与外场方向夹角的余弦 u：

    I = −(2/π) ∫₀^∞ s e^{−ωs} A(s) ds,   A(s) = ∫₋₁¹ f(√s, u) √(1−u²) du,   ω = i + ε

归一化由 f = 1 ↦ 1 固定。三种求值方式：
- SPE:    驻相展开 Σ_{j<m} d_j Δ^j f(0)，d_j = (−i)^j/(4^j j!)
- ORACLE: 对 ε 序列逐个积分后 Richardson 外推到 ε = 0
- DIRECT: ε = 0 的乘积求积（Filon 型），要求 f 自身有限衰减

求积规则：
- 角向：第二类 Gauss–Chebyshev，n -> 2n+1 嵌套加密
- 径向：等宽 s 面板，每面板 q 个 Gauss–Legendre 节点，
  权重 W_j(β) = ∫ℓ_j(t) e^{−β(t+1)} dt 精确吸收振荡因子
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_legendre

from hsrg.config import QuadConfig
from hsrg.errors import NonIntegrableTailError, OracleDivergenceError, StencilFailureError

logger = logging.getLogger(__name__)

# 衰减半径的定义阈值：|f| < 1e-16·峰值
DECAY_THRESHOLD = 1e-16
# 正则化积分的截断：e^{−ε s} < e^{−40}
REGULATED_CUTOFF = 40.0
# 尾部过大时截断半径的放大倍数
TAIL_EXTENSION = 1.5
# 每块最多同时求值的 s 节点数
_CHUNK = 256


class QuadratureMode(str, enum.Enum):
    SPE = "spe"
    ORACLE = "oracle"
    DIRECT = "direct"


@dataclass(frozen=True)
class ReducedIntegrand:
    """f(ζ) = F(‖ζ‖, u) 的二变量表示

    evaluator(r, u) 需支持广播；components > 0 时输出带长度为 components 的尾轴，
    多个被积函数共用一套节点。
    """

    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    decay_scale: float = math.inf
    coupling: Optional[float] = None
    components: int = 0

    def __call__(self, r: np.ndarray, u: np.ndarray) -> np.ndarray:
        r, u = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(u, dtype=float))
        out = np.asarray(self.evaluator(r, u), dtype=np.complex128)
        shape = r.shape + ((self.components,) if self.components else ())
        return np.broadcast_to(out, shape)

    @property
    def value_shape(self) -> Tuple[int, ...]:
        return (self.components,) if self.components else ()

    @property
    def has_decay(self) -> bool:
        return math.isfinite(self.decay_scale)


@dataclass(frozen=True)
class SpeResult:
    value: np.ndarray
    order: int
    remainder_estimate: float
    d_coeffs: List[complex] = field(default_factory=list)


@dataclass(frozen=True)
class IntegralResult:
    value: np.ndarray
    error: float
    mode: QuadratureMode


def quartic_decay_scale(lam: float, threshold: float = DECAY_THRESHOLD) -> float:
    """e^{−λ r⁴} 降到 threshold 的半径"""
    if lam <= 0:
        return math.inf
    return (-math.log(threshold) / lam) ** 0.25


def d_coefficient(j: int) -> complex:
    """d_j = (−i)^j / (4^j j!)"""
    return (-1j) ** j / (4.0 ** j * math.factorial(j))


# ---------- 角向 ----------

@lru_cache(maxsize=32)
def chebyshev_u_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """第二类 Gauss–Chebyshev：∫ g(u)√(1−u²) du ≈ Σ w_k g(u_k)"""
    k = np.arange(1, n + 1)
    theta = k * np.pi / (n + 1)
    return np.cos(theta), np.pi / (n + 1) * np.sin(theta) ** 2


def _angular_sum(f: ReducedIntegrand, s: np.ndarray, n: int) -> np.ndarray:
    u, w = chebyshev_u_rule(n)
    r = np.sqrt(s)
    out = np.empty(s.shape + f.value_shape, dtype=np.complex128)
    for start in range(0, s.size, _CHUNK):
        stop = min(start + _CHUNK, s.size)
        vals = f(r[start:stop, None], u[None, :])
        out[start:stop] = np.tensordot(w, vals, axes=([0], [1])) if vals.ndim > 2 else vals @ w
    return out


def angular_average(f: ReducedIntegrand, s: np.ndarray, cfg: QuadConfig) -> Tuple[np.ndarray, int]:
    """A(s) = ∫ f(√s,u)√(1−u²) du，嵌套加密直到相邻两级一致"""
    s = np.asarray(s, dtype=float).ravel()
    n = cfg.angular_order
    prev = _angular_sum(f, s, n)
    while 2 * n + 1 <= cfg.angular_max:
        n2 = 2 * n + 1
        cur = _angular_sum(f, s, n2)
        scale = max(float(np.max(np.abs(cur))), 1e-300)
        if float(np.max(np.abs(cur - prev))) <= cfg.tol * scale:
            return cur, n2
        prev, n = cur, n2
    logger.debug("angular rule stopped at n=%d without reaching tol", n)
    return prev, n


# ---------- 径向 ----------

@lru_cache(maxsize=8)
def _panel_rule(q: int, nref: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """面板规则：(节点 t, 参考节点, 参考权重, ℓ_j(参考节点), 值->Legendre 系数矩阵)"""
    t, _ = roots_legendre(q)
    tr, wr = roots_legendre(nref)
    vinv = np.linalg.inv(legendre.legvander(t, q - 1))
    lagrange = legendre.legvander(tr, q - 1) @ vinv
    return t, tr, wr, lagrange, vinv


def filon_weights(beta: complex, q: int, nref: int) -> np.ndarray:
    """W_j(β) = ∫₋₁¹ ℓ_j(t) e^{−β(t+1)} dt"""
    _, tr, wr, lagrange, _ = _panel_rule(q, nref)
    return (wr * np.exp(-beta * (tr + 1.0))) @ lagrange


def filon_radial(
    g: Callable[[np.ndarray], np.ndarray],
    omega: complex,
    s_cut: float,
    cfg: QuadConfig,
    value_shape: Tuple[int, ...] = (),
) -> Tuple[np.ndarray, float, float]:
    """∫₀^{s_cut} g(s) e^{−ωs} ds

    返回 (值, 误差估计, 尾部相对大小)。面板全局加倍直到 Legendre 尾系数足够小。
    """
    q, nref = cfg.panel_nodes, cfg.reference_nodes
    t, _, _, _, vinv = _panel_rule(q, nref)
    panels = max(1, int(math.ceil(s_cut / cfg.max_panel_width)))
    best = None
    for doubling in range(cfg.max_doublings + 1):
        h = s_cut / panels
        left = h * np.arange(panels)
        nodes = (left[:, None] + 0.5 * h * (t[None, :] + 1.0)).ravel()
        vals = np.asarray(g(nodes), dtype=np.complex128).reshape((panels, q) + value_shape)
        phase = 0.5 * h * np.exp(-omega * left)
        weights = filon_weights(omega * 0.5 * h, q, nref)
        value = np.tensordot(phase, np.tensordot(weights, vals, axes=([0], [1])), axes=([0], [0]))
        # Legendre 尾系数 -> 每面板误差上界
        coeffs = np.tensordot(vinv, vals, axes=([1], [1]))
        tail = np.abs(coeffs[-1]) + np.abs(coeffs[-2])
        tail = tail.reshape(panels, -1).max(axis=1)
        error = float(np.sum(2.0 * np.abs(phase) * tail))
        magnitude = float(np.sum(np.abs(phase)[:, None] * np.abs(vals).reshape(panels, q, -1).max(axis=2)))
        damp = np.abs(np.exp(-omega * nodes)).reshape(panels, q)
        envelope = np.abs(vals).reshape(panels, q, -1).max(axis=2) * damp
        peak = float(envelope.max())
        tail_ratio = float(envelope[-1, -1] / peak) if peak > 0 else 0.0
        best = (value, error, tail_ratio)
        if error <= cfg.tol * max(magnitude, 1e-300):
            return best
        logger.debug("radial panels %d -> %d (error %.3e)", panels, 2 * panels, error)
        panels *= 2
    return best


def _radial_integral(f: ReducedIntegrand, eps: float, s_cut: float, cfg: QuadConfig) -> Tuple[np.ndarray, float]:
    """尾部相对大小超过 tail_tol 时截断半径 ×1.5 重算，至多 tail_extensions 次"""
    omega = 1j + eps

    def g(s: np.ndarray) -> np.ndarray:
        avg, _ = angular_average(f, s, cfg)
        return (s.reshape(s.shape + (1,) * len(f.value_shape)) * avg)

    for extension in range(cfg.tail_extensions + 1):
        value, error, tail = filon_radial(g, omega, s_cut, cfg, f.value_shape)
        if tail <= cfg.tail_tol:
            return -(2.0 / np.pi) * value, (2.0 / np.pi) * error
        if extension < cfg.tail_extensions:
            logger.debug("radial tail %.3e at s_cut=%.4g, extending", tail, s_cut)
            s_cut *= TAIL_EXTENSION
    raise NonIntegrableTailError(
        f"radial tail {tail:.3e} above {cfg.tail_tol:.1e} at s_cut={s_cut:.4g} (eps={eps})"
    )


def direct_value(f: ReducedIntegrand, cfg: QuadConfig) -> Tuple[np.ndarray, float]:
    """ε = 0 直接求积，仅适用于有限衰减的 f"""
    if not f.has_decay:
        raise NonIntegrableTailError("direct quadrature needs a finite decay_scale")
    return _radial_integral(f, 0.0, f.decay_scale ** 2, cfg)


def regulated_value(
    f: ReducedIntegrand,
    eps_schedule: Optional[Sequence[float]] = None,
    cfg: Optional[QuadConfig] = None,
) -> Tuple[np.ndarray, float]:
    """I(ε) 逐点积分后对 ε -> 0 做 Neville/Richardson 外推

    使用最小的 p+1 个 ε（p = richardson_order），误差取 |T_p − T_{p−1}|。
    """
    cfg = cfg or QuadConfig()
    schedule = sorted(eps_schedule if eps_schedule is not None else cfg.eps_schedule)
    p = cfg.richardson_order
    if len(schedule) < p + 1:
        raise OracleDivergenceError(f"need at least {p + 1} regulator values, got {len(schedule)}")
    xs = np.asarray(schedule[: p + 1])
    ys = []
    for eps in xs:
        s_cut = REGULATED_CUTOFF / eps
        if f.has_decay:
            s_cut = min(s_cut, f.decay_scale ** 2)
        ys.append(_radial_integral(f, float(eps), s_cut, cfg)[0])
    estimates = _neville_at_zero(xs, ys)
    errors = [float(np.max(np.abs(estimates[j] - estimates[j - 1]))) for j in range(1, p + 1)]
    value = estimates[p]
    floor = 1e-10 * max(1.0, float(np.max(np.abs(value))))
    if p >= 2 and errors[-1] > errors[-2] and errors[-1] > floor:
        raise OracleDivergenceError(
            f"Richardson error grew {errors[-2]:.3e} -> {errors[-1]:.3e}"
        )
    return value, errors[-1]


def _neville_at_zero(xs: np.ndarray, ys: Sequence[np.ndarray]) -> List[np.ndarray]:
    """T_j = 过前 j+1 个点的插值多项式在 0 处的值"""
    table = [np.asarray(y, dtype=np.complex128) for y in ys]
    estimates = [table[0]]
    for j in range(1, len(xs)):
        # table[i] 更新为过 x_i..x_{i+j} 的插值
        for i in range(len(xs) - j):
            table[i] = (xs[i + j] * table[i] - xs[i] * table[i + 1]) / (xs[i + j] - xs[i])
        estimates.append(table[0])
    return estimates


# ---------- 驻相展开 ----------

def spherical_moments(f: ReducedIntegrand, j_max: int, cfg: Optional[QuadConfig] = None) -> np.ndarray:
    """(Δ^j f)(0)，j = 0..j_max

    由球面平均 M(s) = Σ_j Δ^j f(0) s^j / (4^j j! (j+1)!) 在几何模板上最小二乘拟合。
    """
    cfg = cfg or QuadConfig()
    r0 = cfg.stencil_r0 * min(1.0, f.decay_scale)
    radii = r0 * 2.0 ** (np.arange(cfg.stencil_points) / 2.0)
    s = radii ** 2
    mean, _ = angular_average(f, s, cfg)
    mean = (2.0 / np.pi) * mean
    degree = min(j_max + 2, cfg.stencil_points - 1)
    t = s / s[-1]
    vander = t[:, None] ** np.arange(degree + 1)[None, :]
    cond = float(np.linalg.cond(vander))
    if cond > cfg.stencil_cond_max:
        raise StencilFailureError(f"moment fit condition number {cond:.3e}", condition=cond)
    flat = mean.reshape(s.size, -1)
    coef, *_ = np.linalg.lstsq(vander.astype(np.complex128), flat, rcond=None)
    coef = coef / (s[-1] ** np.arange(degree + 1))[:, None]
    j = np.arange(j_max + 1)
    factor = np.array([4.0 ** k * math.factorial(k) * math.factorial(k + 1) for k in j])
    out = np.zeros((j_max + 1, flat.shape[1]), dtype=np.complex128)
    upto = min(j_max, degree) + 1
    out[:upto] = coef[:upto] * factor[:upto, None]
    return out.reshape((j_max + 1,) + f.value_shape)


def l1_norm(f: ReducedIntegrand, cfg: Optional[QuadConfig] = None) -> float:
    """F_W = ∫_{R⁴} |f| = π² ∫ s · [(2/π)∫|f|√(1−u²)du] ds"""
    cfg = cfg or QuadConfig()
    if not f.has_decay:
        return math.inf
    absf = ReducedIntegrand(
        evaluator=lambda r, u: np.abs(f(r, u)).reshape(np.broadcast(r, u).shape + (-1,)).max(axis=-1),
        decay_scale=f.decay_scale,
    )

    def g(s: np.ndarray) -> np.ndarray:
        return s * angular_average(absf, s, cfg)[0]

    value, _, _ = filon_radial(g, 0.0, f.decay_scale ** 2, cfg)
    return float(2.0 * np.pi * np.real(value))


def stationary_phase_value(
    f: ReducedIntegrand,
    m: int,
    cfg: Optional[QuadConfig] = None,
    W: Optional[float] = None,
    F_W: Optional[float] = None,
    grades: Optional[Sequence[int]] = None,
) -> SpeResult:
    """Σ_{j<m} d_j Δ^j f(0)，余项估计 K_m W^{−4−2m} F_W

    grades 给出每个分量已消耗的阶数 g_c（例如费米收缩的阶），该分量只取 j < m − g_c。
    未给 W 且 f 无耦合信息时，余项取下一项 |d_m Δ^m f(0)|。
    """
    cfg = cfg or QuadConfig()
    if m < 1:
        raise ValueError("expansion order must be >= 1")
    moments = spherical_moments(f, m, cfg)
    d = [d_coefficient(j) for j in range(m + 1)]
    if grades is None:
        value = sum(d[j] * moments[j] for j in range(m))
        next_term = np.abs(d[m] * moments[m])
    else:
        g = np.asarray(grades, dtype=int)
        if g.shape != f.value_shape:
            raise ValueError(f"grades shape {g.shape} does not match components {f.value_shape}")
        value = sum(np.where(j < m - g, d[j] * moments[j], 0.0) for j in range(m))
        top = np.clip(m - g, 0, m).reshape(-1)
        flat = moments.reshape(m + 1, -1)
        next_term = np.array([abs(d[k] * flat[k, c]) for c, k in enumerate(top)])
    if W is None and f.coupling is not None and f.coupling > 0:
        W = f.coupling ** (-0.25 + cfg.spe_eps)
    if W is not None:
        if F_W is None:
            F_W = l1_norm(f, cfg)
        remainder = cfg.remainder_constant * W ** (-4 - 2 * m) * F_W
    else:
        remainder = float(np.max(next_term))
    return SpeResult(value=np.asarray(value), order=m, remainder_estimate=float(remainder), d_coeffs=d[:m])


def integrate(
    f: ReducedIntegrand,
    mode: QuadratureMode,
    cfg: Optional[QuadConfig] = None,
    order: Optional[int] = None,
    grades: Optional[Sequence[int]] = None,
) -> IntegralResult:
    """按模式分派；DIRECT 遇到无衰减的 f 时退回 ORACLE。grades 只影响 SPE"""
    cfg = cfg or QuadConfig()
    mode = QuadratureMode(mode)
    if mode is QuadratureMode.SPE:
        res = stationary_phase_value(f, order or cfg.order, cfg, grades=grades)
        return IntegralResult(res.value, res.remainder_estimate, mode)
    if mode is QuadratureMode.DIRECT and f.has_decay:
        value, error = direct_value(f, cfg)
        return IntegralResult(value, error, mode)
    if mode is QuadratureMode.DIRECT:
        logger.debug("integrand without decay, falling back to the regulated oracle")
    value, error = regulated_value(f, cfg=cfg)
    return IntegralResult(value, error, QuadratureMode.ORACLE)
