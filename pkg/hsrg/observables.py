# -*- coding: utf-8 -*-
"""两点关联函数与超对称局域化检验

插入流：在尺度 h 的涨落场上插入 ζ⁺ζ⁻（玻色取自旋平均 ½‖ζ_φ‖²，费米取
½Σζ⁺_ψζ⁻_ψ），减去领头项 ∓i·U(Φ/L)^{L³}（玻色 −i，费米 +i）得到 F̃，再沿存储的
U^{(h+1)}, …, U^{(N−1)} 逐步推进到尺度 N，只在 Φ = 0 处取值。

组装（A 为 parity_x1 符号）：

    ⟨φ⁺_x φ⁻_y⟩ = Σ_{h=k(x,y)}^{N−1} L^{−2h} A_{⌊x/L^h⌋} A_{⌊y/L^h⌋} (−i + F̃_h(0))
    ⟨ψ⁺_x ψ⁻_y⟩ = Σ_{h=k(x,y)}^{N−1} L^{−2h} A_{⌊x/L^h⌋} A_{⌊y/L^h⌋} (+i + F̃^ψ_h(0))

F̃_h(0) 只依赖尺度，不依赖具体的 (x, y)，InsertionFlow 按 h 缓存。
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hsrg import grassmann as gr
from hsrg.config import QuadConfig, RunConfig
from hsrg.errors import FlowTooShortError, ScaleMismatchError
from hsrg.lattice import HierLattice, Site, a_sign
from hsrg.oscillatory import IntegralResult, QuadratureMode, ReducedIntegrand, integrate
from hsrg.radial import RadialFunction
from hsrg.rg_flow import (
    EffectivePotential,
    FlowTrace,
    KernelVariant,
    expand_on_grid,
    integrate_radii,
    reweight,
    strip_prefactor,
)

logger = logging.getLogger(__name__)

KINDS = ("boson", "fermion")

# Cauchy 积分求导：圆周点数与半径
CAUCHY_POINTS = 32
CAUCHY_RADIUS = 0.5


@dataclass(frozen=True, eq=False)
class InsertionState:
    """F̃^{(h)}_k = e^{−λ_h X² − iμ_h X} Σ_n G_n (ψ·ψ)^n

    k 为插入尺度；G 为 None 表示只在原点求值（最后一步）。
    """

    k: int
    h: int
    kind: str
    G: Optional[Tuple[RadialFunction, RadialFunction, RadialFunction]]
    origin: complex
    error: float = 0.0

    @property
    def is_zero(self) -> bool:
        if self.G is None:
            return self.origin == 0
        return all(g.is_constant(0.0) for g in self.G)


def _zero_state(k: int, h: int, kind: str, U_next: EffectivePotential, origin_only: bool) -> InsertionState:
    G = None if origin_only else tuple(RadialFunction.constant(0.0, U_next.grid) for _ in range(3))
    return InsertionState(k=k, h=h, kind=kind, G=G, origin=0j)


def _advance(U: EffectivePotential, U_next: EffectivePotential, L: int, cfg: RunConfig,
             variant: KernelVariant, insertion, mode, origin_only: bool):
    """一步积分 + 剥离前因子 + 用匹配流尺度的 β 重新加权"""
    order = cfg.quad.insertion_order
    beta2 = U_next.coupling.mu - L * U.coupling.mu
    beta4 = U_next.coupling.lam - U.coupling.lam / L
    if origin_only:
        s = np.zeros(1)
        K, error = integrate_radii(U, L, s, cfg, mode, variant, insertion, order)
        E = strip_prefactor(K, s, U.coupling.lam, U.coupling.mu, L)
        return None, complex(reweight(E, s, beta2, beta4)[0, 0]), error
    values = expand_on_grid(U, L, U_next.grid, cfg, mode, variant, insertion, order)
    pts = values.grid.points()
    G_pts = reweight(values.points, pts, beta2, beta4)
    G_sten = reweight(values.stencil, values.grid.taylor_points_s(), beta2, beta4)
    G = tuple(RadialFunction.from_samples(values.grid, G_pts[:, n], G_sten[:, n], cfg.grid.taylor_degree)
              for n in range(3))
    return G, G[0].at_zero, values.error


def insertion_init(U: EffectivePotential, U_next: EffectivePotential, L: int, cfg: RunConfig,
                   kind: str = "boson", mode: Optional[QuadratureMode] = None,
                   origin_only: bool = False) -> InsertionState:
    """在 U^{(k)} 的积分步中插入 ζ⁺ζ⁻ 并减去领头项，得到尺度 k+1 的 F̃"""
    if kind not in KINDS:
        raise ValueError(f"unknown insertion kind {kind!r}")
    k = U.coupling.h
    if U_next.coupling.h != k + 1:
        raise ScaleMismatchError(f"next potential at scale {U_next.coupling.h}, expected {k + 1}")
    if U.is_free():
        return _zero_state(k, k + 1, kind, U_next, origin_only)
    variant = KernelVariant.BOSON if kind == "boson" else KernelVariant.FERMION
    G, origin, error = _advance(U, U_next, L, cfg, variant, None, mode, origin_only)
    return InsertionState(k=k, h=k + 1, kind=kind, G=G, origin=origin, error=error)


def insertion_step(ins: InsertionState, U: EffectivePotential, U_next: EffectivePotential, L: int,
                   cfg: RunConfig, mode: Optional[QuadratureMode] = None,
                   origin_only: bool = False) -> InsertionState:
    """[f₊f₋]^{L³/2−1} f₋ f̃₊ 积分一步"""
    if ins.h != U.coupling.h or U_next.coupling.h != ins.h + 1:
        raise ScaleMismatchError(
            f"insertion at scale {ins.h}, potentials at {U.coupling.h} -> {U_next.coupling.h}"
        )
    if ins.G is None:
        raise ScaleMismatchError("insertion was evaluated at the origin only and cannot be advanced")
    if ins.is_zero or U.is_free():
        return _zero_state(ins.k, ins.h + 1, ins.kind, U_next, origin_only)
    G, origin, error = _advance(U, U_next, L, cfg, KernelVariant.STEP, ins.G, mode, origin_only)
    return InsertionState(k=ins.k, h=ins.h + 1, kind=ins.kind, G=G, origin=origin, error=ins.error + error)


class InsertionFlow:
    """按插入尺度缓存的 F̃_h(0)

    每个 h 只推进一次，所有 k(x,y) = h 的点对共享结果。
    """

    def __init__(self, trace: FlowTrace, cfg: RunConfig, kind: str = "boson",
                 mode: Optional[QuadratureMode] = None):
        if kind not in KINDS:
            raise ValueError(f"unknown insertion kind {kind!r}")
        if len(trace.potentials) < trace.N + 1:
            raise FlowTooShortError(
                f"flow reached scale {len(trace.potentials) - 1}, correlators need scale {trace.N}"
            )
        self.trace = trace
        self.cfg = cfg
        self.kind = kind
        self.mode = mode
        self._states: Dict[int, InsertionState] = {}
        self._history: Dict[int, List[complex]] = {}
        self._lock = threading.Lock()

    def final_state(self, h: int) -> InsertionState:
        with self._lock:
            if h not in self._states:
                self._states[h] = self._run(h)
            return self._states[h]

    def correction(self, h: int) -> complex:
        """F̃_h(0) at scale N"""
        return self.final_state(h).origin

    def history(self, h: int) -> List[complex]:
        """G_0(0) 在 h+1..N 各尺度上的值"""
        self.final_state(h)
        return list(self._history[h])

    def _run(self, h: int) -> InsertionState:
        trace, cfg = self.trace, self.cfg
        N, L = trace.N, trace.L
        if not 0 <= h < N:
            raise FlowTooShortError(f"insertion scale {h} outside 0..{N - 1}")
        pots = trace.potentials
        state = insertion_init(pots[h], pots[h + 1], L, cfg, self.kind, self.mode,
                               origin_only=(h + 1 == N))
        history = [state.origin]
        for j in range(h + 1, N):
            state = insertion_step(state, pots[j], pots[j + 1], L, cfg, self.mode,
                                   origin_only=(j + 1 == N))
            history.append(state.origin)
        self._history[h] = history
        logger.debug("%s insertion at h=%d: F(0)=%r err=%.2e", self.kind, h, state.origin, state.error)
        return state


@dataclass(frozen=True)
class TwoPointResult:
    x: Site
    y: Site
    k: int
    d: int
    value: complex
    free_part: complex
    error_terms: List[complex] = field(default_factory=list)
    theta_certificate: float = 0.0
    integration_error: float = 0.0
    kind: str = "boson"

    @property
    def remainder(self) -> complex:
        """E_N(x,y)"""
        return complex(sum(self.error_terms))

    CSV_COLUMNS = ("x", "y", "k", "d", "value_re", "value_im", "free_re", "free_im",
                   "abs_E_N", "theta_certificate")

    def csv_row(self) -> List[object]:
        return [str(self.x), str(self.y), self.k, self.d, self.value.real, self.value.imag,
                self.free_part.real, self.free_part.imag, abs(self.remainder), self.theta_certificate]

    def to_dict(self) -> Dict[str, object]:
        return {
            "x": list(self.x.coords), "y": list(self.y.coords), "k": self.k, "d": self.d,
            "kind": self.kind,
            "value": [self.value.real, self.value.imag],
            "free_part": [self.free_part.real, self.free_part.imag],
            "error_terms": [[z.real, z.imag] for z in self.error_terms],
            "theta_certificate": self.theta_certificate,
            "integration_error": self.integration_error,
        }


def _assemble(x: Site, y: Site, trace: FlowTrace, cfg: RunConfig, flow: InsertionFlow,
              leading: complex, sigma: int, sigma2: int) -> TwoPointResult:
    lattice = HierLattice(trace.L, trace.N)
    L, N = trace.L, trace.N
    k = lattice.hier_scale(x, y)
    d = lattice.distance(x, y)
    if sigma != sigma2:
        return TwoPointResult(x=x, y=y, k=k, d=d, value=0j, free_part=0j, kind=flow.kind)
    value = 0j
    free = 0j
    terms = []
    error = 0.0
    for h in range(k, N):
        weight = L ** (-2 * h) * a_sign(lattice.block_of(x, h), L) * a_sign(lattice.block_of(y, h), L)
        state = flow.final_state(h)
        free += weight * leading
        terms.append(weight * state.origin)
        value += weight * (leading + state.origin)
        error += L ** (-2 * h) * state.error
    lam = trace.lam
    remainder = abs(sum(terms))
    cert = remainder * d ** cfg.const.theta * lam ** -cfg.const.theta if lam > 0 else 0.0
    return TwoPointResult(x=x, y=y, k=k, d=d, value=value, free_part=free, error_terms=terms,
                          theta_certificate=float(cert), integration_error=error, kind=flow.kind)


def two_point(x: Site, y: Site, trace: FlowTrace, cfg: RunConfig,
              flow: Optional[InsertionFlow] = None, sigma: int = 0, sigma2: int = 0,
              mode: Optional[QuadratureMode] = None) -> TwoPointResult:
    """⟨φ⁺_{x,σ} φ⁻_{y,σ'}⟩_N"""
    flow = flow or InsertionFlow(trace, cfg, "boson", mode)
    if flow.kind != "boson":
        raise ValueError("two_point needs a bosonic insertion flow")
    return _assemble(x, y, trace, cfg, flow, -1j, sigma, sigma2)


def fermion_two_point(x: Site, y: Site, trace: FlowTrace, cfg: RunConfig,
                      flow: Optional[InsertionFlow] = None, sigma: int = 0, sigma2: int = 0,
                      mode: Optional[QuadratureMode] = None) -> TwoPointResult:
    """⟨ψ⁺_{x,σ} ψ⁻_{y,σ'}⟩_N，应等于 −⟨φ⁺_x φ⁻_y⟩_N"""
    flow = flow or InsertionFlow(trace, cfg, "fermion", mode)
    if flow.kind != "fermion":
        raise ValueError("fermion_two_point needs a fermionic insertion flow")
    return _assemble(x, y, trace, cfg, flow, 1j, sigma, sigma2)


def correlator_table(pairs: Iterable[Tuple[Site, Site]], trace: FlowTrace, cfg: RunConfig,
                     fermion: bool = False, mode: Optional[QuadratureMode] = None) -> List[TwoPointResult]:
    kind = "fermion" if fermion else "boson"
    flow = InsertionFlow(trace, cfg, kind, mode)
    fn = fermion_two_point if fermion else two_point
    return [fn(x, y, trace, cfg, flow) for x, y in pairs]


def fit_decay_slope(results: Sequence[TwoPointResult]) -> float:
    """log|value| 对 log d 的斜率（按距离取平均幅值）"""
    by_d: Dict[int, List[float]] = {}
    for r in results:
        if abs(r.value) > 0:
            by_d.setdefault(r.d, []).append(abs(r.value))
    if len(by_d) < 2:
        return float("nan")
    ds = np.array(sorted(by_d), dtype=float)
    mags = np.array([np.mean(by_d[int(d)]) for d in ds])
    return float(np.polyfit(np.log(ds), np.log(mags), 1)[0])


def theta_envelope(results: Sequence[TwoPointResult]) -> float:
    return max((r.theta_certificate for r in results), default=0.0)


# ---------- 局域化 ----------

def cauchy_derivatives(g: Callable[[np.ndarray], np.ndarray], z: np.ndarray, orders: int = 2,
                       radius: float = CAUCHY_RADIUS, points: int = CAUCHY_POINTS) -> List[np.ndarray]:
    """g^{(n)}(z) = n!/(K r^n) Σ_k g(z + r e^{iθ_k}) e^{−inθ_k}，n = 0..orders"""
    z = np.asarray(z, dtype=np.complex128)
    theta = 2.0 * np.pi * np.arange(points) / points
    circle = radius * np.exp(1j * theta)
    samples = g(z[..., None] + circle)
    out = []
    for n in range(orders + 1):
        coeff = np.mean(samples * np.exp(-1j * n * theta), axis=-1)
        out.append(math.factorial(n) * coeff / radius ** n)
    return out


def _fermion_moments() -> Tuple[complex, complex, complex]:
    """∫dμ_ψ 1, ∫ Q, ∫ Q²，Q = Σζ⁺ζ⁻（随当前权重符号）"""
    Q = gr.zeta_dot_zeta()
    vals = [gr.berezin_fluct_integral(p).scalar_part for p in (gr.GrassmannPoly.one(), Q, Q * Q)]
    return tuple(complex(v) for v in vals)


def localized_integral(g: Callable[[np.ndarray], np.ndarray], decay_scale: float,
                       cfg: Optional[QuadConfig] = None, fermionic: bool = True,
                       mode: QuadratureMode = QuadratureMode.ORACLE) -> IntegralResult:
    """∫dμ(ζ) g(ζ·ζ)，ζ·ζ = ‖ζ_φ‖² + Σζ⁺_ψζ⁻_ψ

    费米部分按 Q 的幂展开（Q³ = 0）并用 Berezin 积分精确求出；
    fermionic=False 时只积玻色部分（非超对称对照）。
    """
    cfg = cfg or QuadConfig()
    m0, m1, m2 = _fermion_moments() if fermionic else (1.0, 0.0, 0.0)

    def evaluator(r: np.ndarray, u: np.ndarray) -> np.ndarray:
        s = np.asarray(r, dtype=float) ** 2
        if not fermionic:
            return np.asarray(g(s.astype(np.complex128)))
        g0, g1, g2 = cauchy_derivatives(g, s)
        return m0 * g0 + m1 * g1 + 0.5 * m2 * g2

    f = ReducedIntegrand(evaluator=evaluator, decay_scale=decay_scale)
    return integrate(f, mode, cfg)


def susy_localization_check(g: Callable[[np.ndarray], np.ndarray], decay_scale: float,
                            cfg: Optional[QuadConfig] = None,
                            mode: QuadratureMode = QuadratureMode.ORACLE) -> float:
    """|∫dμ(ζ) g(ζ·ζ) − g(0)|"""
    res = localized_integral(g, decay_scale, cfg, fermionic=True, mode=mode)
    target = complex(np.asarray(g(np.zeros(1, dtype=np.complex128)))[0])
    residual = abs(complex(np.asarray(res.value)) - target)
    logger.debug("localization: value=%r target=%r residual=%.3e", complex(np.asarray(res.value)),
                 target, residual)
    return residual
