# -*- coding: utf-8 -*-
"""单尺度 RG 映射、局域化、耦合更新、N 尺度驱动与 μ(λ) 调参

有效势（X = s + P，s = ‖φ‖²，P = ψ·ψ）：

    U^{(h)}(Φ) = e^{−λ_h X² − iμ_h X} Σ_n R_n(s) P^n

一步积分 [U(Φ/L+ζ) U(Φ/L−ζ)]^{L³/2}：
- 费米部分：U(Φ/L±ζ) 的 P_± 级数系数 g_n(s_±) 取 M = L³/2 次幂，再与精确表
  τ_{ijm} = [P^m] ∫dμ_ψ P₊^i P₋^j 收缩（ψ -> ψ/L 给出 L^{−2m}）
- 玻色部分：标量指数拆成新尺度前因子 e^{−(λ/L)s² − iLμs} 与
  Ṽ_b = 4λLu²s_φs_ζ + 2λLs_φs_ζ + λL³s_ζ² + iμL³s_ζ，后者进入振荡积分
- 剥离 P 方向的前因子级数后得到 E_n，局域化给出 γ，耦合更新后重新加权得到 R'

数值约定：
- 径向函数见 hsrg.radial；每个输出半径独立积分，线程池按下标回填，结果与线程数无关
- 直接 Grassmann 路径（power / exp_even / berezin）保留为 grassmann_integrand，
  用于交叉检验与 (κ,N,M) 抽样证书
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache, partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hsrg import grassmann as gr
from hsrg.config import RunConfig, thread_count
from hsrg.errors import DegenerateFitError, FlowFailure, HsrgError, TuningFailure
from hsrg.oscillatory import QuadratureMode, ReducedIntegrand, integrate
from hsrg.radial import RadialFunction, RadialGrid

logger = logging.getLogger(__name__)

Series = Tuple[np.ndarray, np.ndarray, np.ndarray]

# 扣除增长后的有效衰减率下限（相对 Re λ）
GROWTH_FLOOR = 0.1
# 费米收缩的阶 k = 0, 1, 2（ζ 次数 0, 2, 4）
FERMION_GRADES = 3
_GRADES = np.repeat(np.arange(FERMION_GRADES), 3)


class KernelVariant(str, enum.Enum):
    PLAIN = "plain"        # [G₊G₋]^M
    BOSON = "boson"        # 玻色插入 ½‖ζ_φ‖²，减去 −i·U(Φ/L)^{L³}
    FERMION = "fermion"    # 费米插入 ½Σζ⁺ζ⁻，减去 +i·U(Φ/L)^{L³}
    STEP = "step"          # [G₊G₋]^{M−1} G₋ G̃₊


# 插入的领头项：玻色 −i，费米 +i
INSERTION_LEADING = {KernelVariant.BOSON: -1j, KernelVariant.FERMION: 1j}


# ---------- 状态 ----------

@dataclass(frozen=True)
class CouplingState:
    h: int
    lam: complex
    mu: complex
    c: float = 1.0 / 6.0

    def to_dict(self) -> Dict[str, object]:
        return {"h": self.h, "lambda": _pair(self.lam), "mu": _pair(self.mu), "c": self.c}


@dataclass(frozen=True, eq=False)
class EffectivePotential:
    coupling: CouplingState
    R: Tuple[RadialFunction, RadialFunction, RadialFunction]

    @classmethod
    def initial(cls, lam: complex, mu: complex, cfg: RunConfig) -> "EffectivePotential":
        """U^{(0)} = e^{−λX² − iμX}，R = (1, 0, 0)"""
        grid = RadialGrid.for_coupling(abs(lam), cfg.grid)
        return cls(
            coupling=CouplingState(0, complex(lam), complex(mu)),
            R=(RadialFunction.constant(1.0, grid), RadialFunction.constant(0.0, grid),
               RadialFunction.constant(0.0, grid)),
        )

    @property
    def grid(self) -> RadialGrid:
        return self.R[0].grid

    def is_free(self) -> bool:
        c = self.coupling
        return (c.lam == 0 and c.mu == 0 and self.R[0].is_constant(1.0)
                and self.R[1].is_constant(0.0) and self.R[2].is_constant(0.0))

    def g_coefficients(self, s: np.ndarray) -> Series:
        return g_series(self.coupling.lam, self.coupling.mu, s, *(R(s) for R in self.R))


def g_series(lam: complex, mu: complex, s: np.ndarray, r0, r1, r2) -> Series:
    """e^{−λ(s+P)² − iμ(s+P)} Σ R_n P^n = e^{−λs² − iμs}(g0 + g1 P + g2 P²)"""
    n1 = -(2.0 * lam * s + 1j * mu)
    n2 = -lam
    return r0, r1 + n1 * r0, r2 + n1 * r1 + (n2 + 0.5 * n1 * n1) * r0


def series_power(g: Series, k: int) -> Series:
    """(g0 + g1P + g2P²)^k，P³ = 0"""
    g0, g1, g2 = g
    if k == 0:
        one = np.ones_like(g0)
        return one, np.zeros_like(g0), np.zeros_like(g0)
    if k == 1:
        return g0, g1, g2
    gk2 = g0 ** (k - 2)
    gk1 = gk2 * g0
    return gk1 * g0, k * gk1 * g1, k * gk1 * g2 + 0.5 * k * (k - 1) * gk2 * g1 * g1


def series_mul(a: Series, b: Series) -> Series:
    return a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[0] * b[2] + a[1] * b[1] + a[2] * b[0]


@lru_cache(maxsize=16)
def fermion_table(insertion: bool = False, sign: int = 1, graded: bool = False) -> np.ndarray:
    """τ[i,j,m] = [P^m] ∫dμ_ψ P₊^i P₋^j (× ½Σζ⁺ζ⁻)，P_± = (ψ±ζ)·(ψ±ζ)

    graded=True 时按 ζ 次数 2k 拆开，返回 τ[k,i,j,m]，Σ_k 还原未拆分的表；
    k 即费米收缩的阶，与玻色 Laplace 阶合计截断。
    """
    if sign != gr.current_weight_sign():
        raise HsrgError("fermion table requested for a weight sign that is not active")
    P = gr.psi_dot_psi()
    plus = gr.shift_external(P, +1)
    minus = gr.shift_external(P, -1)
    pp = [gr.GrassmannPoly.one(), plus, plus * plus]
    pm = [gr.GrassmannPoly.one(), minus, minus * minus]
    extra = 0.5 * gr.zeta_dot_zeta() if insertion else None
    tau = np.zeros((FERMION_GRADES, 3, 3, 3), dtype=np.complex128)
    for i in range(3):
        for j in range(3):
            poly = pp[i] * pm[j]
            if extra is not None:
                poly = poly * extra
            for k in range(FERMION_GRADES):
                part = gr.berezin_fluct_integral(gr.zeta_degree_part(poly, 2 * k))
                tau[k, i, j] = np.array(gr.psi_psi_coefficients(part))
    return tau if graded else tau.sum(axis=0)


def _table(insertion: bool = False, graded: bool = False) -> np.ndarray:
    return fermion_table(insertion, gr.current_weight_sign(), graded)


def _contract(a_p: Series, a_m: Series, tau: np.ndarray, L: int) -> np.ndarray:
    out = []
    for m in range(3):
        acc = 0.0
        for i in range(3):
            for j in range(3):
                if tau[i, j, m] != 0:
                    acc = acc + tau[i, j, m] * a_p[i] * a_m[j]
        out.append(acc * float(L) ** (-2 * m))
    return np.stack(np.broadcast_arrays(*out), axis=-1)


def _split_arguments(L: int, s_phi, r, u):
    r_phi = np.sqrt(s_phi)
    cross = 2.0 * u * r_phi * r / L
    base = s_phi / L ** 2 + r * r
    return np.maximum(base + cross, 0.0), np.maximum(base - cross, 0.0)


def boson_exponent(lam: complex, mu: complex, L: int, s_phi, r, u):
    s_z = r * r
    return (4.0 * lam * L * u * u * s_phi * s_z + 2.0 * lam * L * s_phi * s_z
            + lam * L ** 3 * s_z * s_z + 1j * mu * L ** 3 * s_z)


def kernel_components(U: EffectivePotential, L: int, s_phi, r, u,
                      variant: KernelVariant = KernelVariant.PLAIN,
                      insertion: Optional[Tuple[RadialFunction, ...]] = None,
                      graded: bool = False) -> np.ndarray:
    """约化被积函数 C_m(s_φ, r_ζ, u)·e^{−Ṽ_b}，尾轴 m = 0, 1, 2

    graded=True 时尾轴长 9，下标 3k + m，k 为费米收缩的阶。
    """
    lam, mu = U.coupling.lam, U.coupling.mu
    M = L ** 3 // 2
    s_p, s_m = _split_arguments(L, s_phi, r, u)
    g_p = U.g_coefficients(s_p)
    g_m = U.g_coefficients(s_m)
    a_m = series_power(g_m, M)
    if variant is KernelVariant.STEP:
        gt_p = g_series(lam, mu, s_p, *(G(s_p) for G in insertion))
        a_p = series_mul(series_power(g_p, M - 1), gt_p)
    else:
        a_p = series_power(g_p, M)

    def contract(tau: np.ndarray) -> np.ndarray:
        if not graded:
            return _contract(a_p, a_m, tau, L)
        return np.concatenate([_contract(a_p, a_m, t, L) for t in tau], axis=-1)

    comps = contract(_table(graded=graded))
    if variant is KernelVariant.BOSON:
        comps = comps * (0.5 * r * r)[..., None]
    elif variant is KernelVariant.FERMION:
        comps = contract(_table(insertion=True, graded=graded))
    weight = np.exp(-boson_exponent(lam, mu, L, s_phi, r, u))
    return comps * weight[..., None]


def radial_growth_rate(U: EffectivePotential) -> float:
    """R_n(s) 相对 R(0) 的最大指数增长率 κ：max_n |R_n(s)| ≲ |R(0)| e^{κs²}（取网格上半段）"""
    pts = U.grid.points()
    upper = pts[pts >= 0.5 * U.grid.s_max]
    if upper.size == 0 or upper.max() <= 0:
        return 0.0
    mags = np.max([np.abs(R(upper)) for R in U.R], axis=0)
    base = max(abs(R.at_zero) for R in U.R)
    if base == 0 or not np.any(mags > base):
        return 0.0
    with np.errstate(divide="ignore"):
        rates = np.log(mags / base) / (upper * upper)
    return float(max(0.0, np.max(rates[np.isfinite(rates)], initial=0.0)))


def integrand_decay(U: EffectivePotential, L: int, truncation: float) -> float:
    """ζ 方向的截断半径：λ_eff L³ s_ζ² = truncation

    λ_eff = Re λ − κ 扣除 R_n 的增长（[G₊G₋]^{L³/2} 中共 L³ 个因子），下限 0.1·Re λ。
    """
    re_lam = float(np.real(U.coupling.lam))
    if re_lam <= 0:
        return math.inf
    lam_eff = max(re_lam - radial_growth_rate(U), GROWTH_FLOOR * re_lam)
    return (truncation / (lam_eff * L ** 3)) ** 0.25


def integrand_at(U: EffectivePotential, L: int, phi_vec: np.ndarray, zeta_vec: np.ndarray) -> np.ndarray:
    """以 R⁴ 向量求约化被积函数（旋转不变性检验用）"""
    phi_vec = np.asarray(phi_vec, dtype=float)
    zeta_vec = np.asarray(zeta_vec, dtype=float)
    s_phi = np.sum(phi_vec ** 2, axis=-1)
    r = np.sqrt(np.sum(zeta_vec ** 2, axis=-1))
    denom = np.sqrt(s_phi) * r
    dot = np.sum(phi_vec * zeta_vec, axis=-1)
    u = np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
    return kernel_components(U, L, s_phi, r, np.clip(u, -1.0, 1.0))


def grassmann_integrand(U: EffectivePotential, L: int, s_phi, r, u) -> gr.GrassmannPoly:
    """直接路径：exp_even 构造 U(Φ/L±ζ) 的费米部分，power 取 L³/2 次幂（未积分）"""
    lam, mu = U.coupling.lam, U.coupling.mu
    s_p, s_m = _split_arguments(L, np.asarray(s_phi, dtype=float), np.asarray(r, dtype=float),
                                np.asarray(u, dtype=float))
    P = gr.psi_dot_psi()
    factors = []
    for sign, x in ((+1, s_p), (-1, s_m)):
        Px = gr.scale_external(gr.shift_external(P, sign), 1.0 / L)
        Px2 = Px * Px
        expo = gr.exp_even(Px * (-(2.0 * lam * x + 1j * mu)) + Px2 * np.full(x.shape, -lam))
        body = gr.GrassmannPoly.scalar(U.R[0](x)) + Px * U.R[1](x) + Px2 * U.R[2](x)
        factors.append(expo * body)
    return gr.power(factors[0] * factors[1], L ** 3 // 2)


def direct_components(U: EffectivePotential, L: int, s_phi, r, u) -> np.ndarray:
    """直接路径积分后的 C_m·e^{−Ṽ_b}，应与 kernel_components 一致"""
    poly = gr.berezin_fluct_integral(grassmann_integrand(U, L, s_phi, r, u))
    comps = np.stack(gr.psi_psi_coefficients(poly), axis=-1)
    weight = np.exp(-boson_exponent(U.coupling.lam, U.coupling.mu, L, np.asarray(s_phi, dtype=float),
                                    np.asarray(r, dtype=float), np.asarray(u, dtype=float)))
    return comps * weight[..., None]


# ---------- 逐半径积分 ----------

@dataclass(frozen=True)
class GridValues:
    """网格与 Taylor 模板上的三分量值"""

    grid: RadialGrid
    points: np.ndarray    # (n, 3)
    stencil: np.ndarray   # (t, 3)
    error: float

    def functions(self, degree: int) -> Tuple[RadialFunction, RadialFunction, RadialFunction]:
        return tuple(RadialFunction.from_samples(self.grid, self.points[:, n], self.stencil[:, n], degree)
                     for n in range(3))


def _integrate_radius(U, L, variant, insertion, mode, settings, order, decay, s_phi):
    graded = mode is QuadratureMode.SPE
    f = ReducedIntegrand(
        evaluator=partial(_evaluate, U, L, float(s_phi), variant, insertion, graded),
        decay_scale=decay,
        coupling=abs(U.coupling.lam),
        components=3 * FERMION_GRADES if graded else 3,
    )
    if not graded:
        res = integrate(f, mode, settings, order=order)
        value = np.asarray(res.value)
    else:
        res = integrate(f, mode, settings, order=spe_order(variant, order or settings.order), grades=_GRADES)
        value = np.asarray(res.value).reshape(FERMION_GRADES, 3).sum(axis=0)
    if variant in INSERTION_LEADING:
        value = value - INSERTION_LEADING[variant] * leading_term(U, L, float(s_phi))
    return value, res.error


def leading_term(U: EffectivePotential, L: int, s_phi: float) -> np.ndarray:
    """U(Φ/L)^{L³} 的 (ψ·ψ)^m 系数（已含 L^{−2m}），即 ζ = 0 处不做费米收缩的被积函数"""
    zero = np.zeros(1)
    comps = kernel_components(U, L, np.full(1, s_phi), zero, zero, graded=True)
    return comps[0, :3]


def _evaluate(U, L, s_phi, variant, insertion, graded, r, u):
    return kernel_components(U, L, s_phi, r, u, variant, insertion, graded)


def spe_order(variant: KernelVariant, order: int) -> int:
    """玻色阶 j 与费米收缩阶 k 合计截断 j + k < m；插入的 ζ 双线性占一阶"""
    if variant in (KernelVariant.BOSON, KernelVariant.FERMION):
        return order + 1
    return order


def integrate_radii(U: EffectivePotential, L: int, s_values: np.ndarray, cfg: RunConfig,
                    mode: Optional[QuadratureMode] = None,
                    variant: KernelVariant = KernelVariant.PLAIN,
                    insertion: Optional[Tuple[RadialFunction, ...]] = None,
                    order: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """K_m(s_φ) 在一组半径上的积分，返回 ((n,3), 最大误差估计)"""
    settings = cfg.quad_settings()
    mode = QuadratureMode(mode or settings.mode)
    decay = integrand_decay(U, L, settings.truncation)
    task = partial(_integrate_radius, U, L, variant, insertion, mode, settings, order, decay)
    s_values = np.asarray(s_values, dtype=float)
    workers = min(thread_count(), max(1, s_values.size))
    if workers == 1:
        results = [task(s) for s in s_values]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, s_values))
    values = np.stack([r[0] for r in results]) if results else np.zeros((0, 3), dtype=np.complex128)
    error = max((r[1] for r in results), default=0.0)
    return values, float(error)


def strip_prefactor(K: np.ndarray, s: np.ndarray, lam: complex, mu: complex, L: int) -> np.ndarray:
    """乘以 e^{(λ/L)[(s+P)²−s²] + iLμP} 的 P 级数，得到相对新前因子的 E_n"""
    e1 = 2.0 * lam * s / L + 1j * L * mu
    e2 = lam / L + 0.5 * e1 * e1
    out = np.empty_like(K)
    out[:, 0] = K[:, 0]
    out[:, 1] = K[:, 1] + e1 * K[:, 0]
    out[:, 2] = K[:, 2] + e1 * K[:, 1] + e2 * K[:, 0]
    return out


def reweight(E: np.ndarray, s: np.ndarray, beta2: complex, beta4: complex) -> np.ndarray:
    """e^{β₄(s+P)² + iβ₂(s+P)} Σ E_n P^n，按 P 幂重新分配"""
    w0 = np.exp(beta4 * s * s + 1j * beta2 * s)
    q1 = 2.0 * beta4 * s + 1j * beta2
    w = (w0, w0 * q1, w0 * (beta4 + 0.5 * q1 * q1))
    out = np.empty_like(E)
    out[:, 0] = w[0] * E[:, 0]
    out[:, 1] = w[0] * E[:, 1] + w[1] * E[:, 0]
    out[:, 2] = w[0] * E[:, 2] + w[1] * E[:, 1] + w[2] * E[:, 0]
    return out


def expand_on_grid(U: EffectivePotential, L: int, grid: RadialGrid, cfg: RunConfig,
                   mode: Optional[QuadratureMode] = None,
                   variant: KernelVariant = KernelVariant.PLAIN,
                   insertion: Optional[Tuple[RadialFunction, ...]] = None,
                   order: Optional[int] = None) -> GridValues:
    pts = grid.points()
    stencil = grid.taylor_points_s()
    s_all = np.concatenate([pts, stencil])
    K, error = integrate_radii(U, L, s_all, cfg, mode, variant, insertion, order)
    E = strip_prefactor(K, s_all, U.coupling.lam, U.coupling.mu, L)
    return GridValues(grid=grid, points=E[: pts.size], stencil=E[pts.size:], error=error)


def compute_En(U: EffectivePotential, L: int, grid: RadialGrid, cfg: RunConfig,
               mode: Optional[QuadratureMode] = None) -> Tuple[Tuple[RadialFunction, ...], float]:
    """E_n^{(h)} 在输出网格上的径向函数及积分误差估计"""
    if U.is_free():
        return tuple(RadialFunction.constant(v, grid) for v in (1.0, 0.0, 0.0)), 0.0
    values = expand_on_grid(U, L, grid, cfg, mode, order=cfg.quad.order)
    return values.functions(cfg.grid.taylor_degree), values.error


# ---------- 局域化与耦合 ----------

@dataclass(frozen=True)
class Gammas:
    psi2: complex
    phi2: complex
    psipsi4: complex
    phipsi4: complex
    phiphi4: complex

    @property
    def gamma2(self) -> complex:
        return self.psi2

    @property
    def gamma4(self) -> complex:
        return self.psipsi4

    def susy_residuals(self) -> Tuple[float, float, float]:
        return (abs(self.psi2 - self.phi2),
                abs(self.psipsi4 - 0.5 * self.phipsi4),
                abs(0.5 * self.phipsi4 - self.phiphi4))


def localize(E: Sequence[RadialFunction]) -> Tuple[Gammas, Tuple[RadialFunction, ...]]:
    """提取 γ 并返回 δ_{n0} + R E_n（重新加权之前）"""
    for n, fn in enumerate(E):
        if fn.taylor is None or len(fn.taylor) < 3 or not np.all(np.isfinite(fn.taylor[:3])):
            raise DegenerateFitError(f"E_{n} lacks the Taylor orders needed for localization")
    t0, t1, t2 = (np.asarray(fn.taylor) for fn in E)
    gammas = Gammas(psi2=complex(t1[0]), phi2=complex(t0[1]), psipsi4=complex(t2[0]),
                    phipsi4=complex(t1[1]), phiphi4=complex(t0[2]))
    grid = E[0].grid
    s = grid.points()
    local = (
        1.0 + gammas.phi2 * s + gammas.phiphi4 * s * s,
        gammas.psi2 + gammas.phipsi4 * s,
        np.full(s.shape, gammas.psipsi4, dtype=np.complex128),
    )
    local_taylor = (
        np.array([1.0, gammas.phi2, gammas.phiphi4, 0.0], dtype=np.complex128),
        np.array([gammas.psi2, gammas.phipsi4, 0.0, 0.0], dtype=np.complex128),
        np.array([gammas.psipsi4, 0.0, 0.0, 0.0], dtype=np.complex128),
    )
    delta = (1.0, 0.0, 0.0)
    remainders = tuple(
        RadialFunction(grid=grid, values=E[n].values - local[n] + delta[n],
                       taylor=np.asarray(E[n].taylor) - local_taylor[n] + np.array([delta[n], 0, 0, 0]))
        for n in range(3)
    )
    return gammas, remainders


def beta_functions(gamma2: complex, gamma4: complex, convention: str = "printed") -> Tuple[complex, complex]:
    """β₂ = iγ₂；β₄ = −γ₄ + γ₂²/2（exact）或 −γ₄ − γ₂²/2（printed）"""
    beta2 = 1j * gamma2
    if convention == "printed":
        return beta2, -gamma4 - 0.5 * gamma2 * gamma2
    return beta2, -gamma4 + 0.5 * gamma2 * gamma2


def update_couplings(state: CouplingState, gamma2: complex, gamma4: complex, L: int,
                     cfg: Optional[RunConfig] = None) -> CouplingState:
    """λ' = λ/L + β₄，μ' = Lμ + β₂，c' = c + c_growth(|λ|^{1/2} + |λ|^{4ε})"""
    cfg = cfg or RunConfig()
    beta2, beta4 = beta_functions(gamma2, gamma4, cfg.flow.beta4_convention)
    lam_abs = abs(state.lam)
    growth = cfg.const.c_growth * (lam_abs ** 0.5 + lam_abs ** (4.0 * cfg.const.eps)) if lam_abs else 0.0
    return CouplingState(
        h=state.h + 1,
        lam=state.lam / L + beta4,
        mu=L * state.mu + beta2,
        c=state.c + growth,
    )


# ---------- 单步 ----------

@dataclass(frozen=True)
class FlowDiagnostics:
    h: int
    gamma_psi2: complex = 0j
    gamma_phi2: complex = 0j
    gamma_psipsi4: complex = 0j
    gamma_phipsi4: complex = 0j
    gamma_phiphi4: complex = 0j
    beta2: complex = 0j
    beta4: complex = 0j
    susy_residuals: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    e0_at_zero: complex = 1.0 + 0j
    bound_certificates: Dict[str, float] = field(default_factory=dict)
    quad_error: float = 0.0
    growth_exponent: float = 0.0
    im_lambda_ratio: float = 0.0

    @property
    def gamma2(self) -> complex:
        return self.gamma_psi2

    @property
    def gamma4(self) -> complex:
        return self.gamma_psipsi4

    def to_dict(self) -> Dict[str, object]:
        out = {}
        for key, value in asdict(self).items():
            out[key] = _pair(value) if isinstance(value, complex) else value
        out["susy_residuals"] = list(self.susy_residuals)
        return out


def _small_field_margins(R: Sequence[np.ndarray], s: np.ndarray, lam_abs: float) -> Dict[str, float]:
    """|R₂| ≤ λ²s，|R₁| ≤ λ²s²，|R₀−1| ≤ λ²s³（‖φ‖ ≤ λ^{−1/4}），返回最大比值"""
    if lam_abs == 0:
        return {"small_R0": 0.0, "small_R1": 0.0, "small_R2": 0.0}
    mask = (s > 0) & (s <= lam_abs ** -0.5)
    if not np.any(mask):
        return {"small_R0": 0.0, "small_R1": 0.0, "small_R2": 0.0}
    x = s[mask]
    l2 = lam_abs ** 2
    return {
        "small_R0": float(np.max(np.abs(R[0][mask] - 1.0) / (l2 * x ** 3))),
        "small_R1": float(np.max(np.abs(R[1][mask]) / (l2 * x ** 2))),
        "small_R2": float(np.max(np.abs(R[2][mask]) / (l2 * x))),
    }


def _growth_exponent(R0: np.ndarray, s: np.ndarray, lam_abs: float) -> float:
    """大场区 log|R₀| ≈ κ s² 的最小二乘斜率"""
    if lam_abs == 0:
        return 0.0
    mask = (s > lam_abs ** -0.5) & (np.abs(R0) > 0)
    if np.count_nonzero(mask) < 2:
        return 0.0
    x = s[mask] ** 2
    y = np.log(np.abs(R0[mask]))
    return float(np.dot(x, y) / np.dot(x, x))


def _sampled_certificates(U: EffectivePotential, L: int, decay: float) -> Dict[str, float]:
    """少量节点上的 (κ,N,M) 证书：积分后 κ 与 κ(1+12M²+2M⁴) 之比（应 ≤ 1）"""
    r = np.array([0.5, 1.0]) * min(1.0, decay)
    poly = grassmann_integrand(U, L, np.zeros_like(r), r, np.full(r.shape, 0.3))
    n_w, m_w = 1.0 / L, 1.0
    before = gr.knm_certify(poly, n_w, m_w)
    after = gr.knm_certify(gr.berezin_fluct_integral(poly), n_w, m_w)
    bound = before.kappa * gr.integration_bound_factor(m_w, gr.has_zeta_free_part(poly))
    return {"integration_kappa_ratio": after.kappa / bound if bound else 0.0}


def rg_step(U: EffectivePotential, cfg: RunConfig,
            mode: Optional[QuadratureMode] = None) -> Tuple[EffectivePotential, FlowDiagnostics]:
    """U^{(h)} -> U^{(h+1)}，附带诊断"""
    L = cfg.lattice.L
    state = U.coupling
    if U.is_free():
        grid = RadialGrid.for_coupling(0.0, cfg.grid)
        free = EffectivePotential(
            coupling=CouplingState(state.h + 1, 0j, 0j, state.c),
            R=(RadialFunction.constant(1.0, grid), RadialFunction.constant(0.0, grid),
               RadialFunction.constant(0.0, grid)),
        )
        return free, FlowDiagnostics(h=state.h)

    grid = RadialGrid.for_coupling(abs(state.lam) / L, cfg.grid)
    values = expand_on_grid(U, L, grid, cfg, mode, order=cfg.quad.order)
    E = values.functions(cfg.grid.taylor_degree)
    gammas, _ = localize(E)
    new_state = update_couplings(state, gammas.gamma2, gammas.gamma4, L, cfg)
    beta2 = new_state.mu - L * state.mu
    beta4 = new_state.lam - state.lam / L

    e0 = E[0].at_zero
    drift = abs(e0 - 1.0)
    if drift > cfg.flow.drift_tol:
        logger.error("scale %d: E0(0) = %r drifts by %.3e", state.h, e0, drift)
        raise FlowFailure(state.h, f"E0(0) drift {drift:.3e} exceeds {cfg.flow.drift_tol:.1e}")

    pts = grid.points()
    stencil = grid.taylor_points_s()
    R_pts = reweight(values.points, pts, beta2, beta4)
    R_sten = reweight(values.stencil, stencil, beta2, beta4)
    R_new = tuple(RadialFunction.from_samples(grid, R_pts[:, n], R_sten[:, n], cfg.grid.taylor_degree)
                  for n in range(3))
    U_new = EffectivePotential(coupling=new_state, R=R_new)

    lam_new = abs(new_state.lam)
    certificates = _small_field_margins([R_pts[:, n] for n in range(3)], pts, lam_new)
    worst = max(certificates.values())
    if worst > 1.0:
        logger.warning("scale %d: small-field certificate margin %.3g > 1", state.h + 1, worst)
    if cfg.flow.certificates:
        certificates.update(_sampled_certificates(U, L, integrand_decay(U, L, cfg.quad.truncation)))
    growth = _growth_exponent(R_pts[:, 0], pts, lam_new)
    certificates["large_field_ratio"] = growth / (new_state.c * lam_new) if lam_new else 0.0
    lam_old = abs(state.lam)
    if lam_old:
        certificates["beta2_ratio"] = abs(beta2) / (L * lam_old)
        certificates["beta4_ratio"] = abs(beta4) * L / lam_old ** 1.5

    diag = FlowDiagnostics(
        h=state.h,
        gamma_psi2=gammas.psi2,
        gamma_phi2=gammas.phi2,
        gamma_psipsi4=gammas.psipsi4,
        gamma_phipsi4=gammas.phipsi4,
        gamma_phiphi4=gammas.phiphi4,
        beta2=beta2,
        beta4=beta4,
        susy_residuals=gammas.susy_residuals(),
        e0_at_zero=e0,
        bound_certificates=certificates,
        quad_error=values.error,
        growth_exponent=growth,
        im_lambda_ratio=abs(new_state.lam.imag) / lam_new if lam_new else 0.0,
    )
    logger.info("h=%d lambda=%.6e%+.2ej mu=%.6e%+.2ej E0(0)-1=%.2e susy=%.2e",
                new_state.h, new_state.lam.real, new_state.lam.imag, new_state.mu.real,
                new_state.mu.imag, abs(e0 - 1.0), max(diag.susy_residuals))
    return U_new, diag


# ---------- 流 ----------

@dataclass
class FlowTrace:
    L: int
    N: int
    lam: float
    mu0: complex
    couplings: List[CouplingState] = field(default_factory=list)
    diagnostics: List[FlowDiagnostics] = field(default_factory=list)
    potentials: List[EffectivePotential] = field(default_factory=list)
    config: Dict[str, str] = field(default_factory=dict)
    termination: str = "completed"
    failing_scale: Optional[int] = None
    reason: str = ""

    @property
    def completed(self) -> bool:
        return self.termination == "completed"

    def survival_depth(self) -> int:
        """首个越出圆盘（或失败）的尺度；全部存活时为 N+1"""
        return self.N + 1 if self.completed else int(self.failing_scale)

    def step_diagnostics(self, h: int) -> Optional[FlowDiagnostics]:
        return self.diagnostics[h] if h < len(self.diagnostics) else None

    def to_json_dict(self) -> Dict[str, object]:
        scales = []
        for state in self.couplings:
            diag = self.step_diagnostics(state.h)
            entry = {"h": state.h, "lambda": _pair(state.lam), "mu": _pair(state.mu), "c": state.c}
            if diag is not None:
                entry.update({
                    "gamma2": _pair(diag.gamma2),
                    "gamma4": _pair(diag.gamma4),
                    "beta2": _pair(diag.beta2),
                    "beta4": _pair(diag.beta4),
                    "susy_residuals": list(diag.susy_residuals),
                    "e0_at_zero": _pair(diag.e0_at_zero),
                    "diagnostics": diag.to_dict(),
                })
            else:
                entry.update({"gamma2": None, "gamma4": None, "beta2": None, "beta4": None,
                              "susy_residuals": None, "e0_at_zero": None})
            scales.append(entry)
        return {
            "L": self.L, "N": self.N, "lambda": self.lam, "mu0": _pair(self.mu0),
            "termination": self.termination, "failing_scale": self.failing_scale,
            "reason": self.reason, "scales": scales, "config": dict(self.config),
        }

    CSV_COLUMNS = ("h", "lambda_re", "lambda_im", "mu_re", "mu_im", "gamma2_re", "gamma2_im",
                   "gamma4_re", "gamma4_im", "beta2_re", "beta2_im", "beta4_re", "beta4_im",
                   "susy_res_psi2", "susy_res_psipsi4", "susy_res_phipsi4", "e0_re", "e0_im")

    def csv_rows(self) -> List[List[object]]:
        rows = []
        nan = float("nan")
        for state in self.couplings:
            diag = self.step_diagnostics(state.h)
            row: List[object] = [state.h, state.lam.real, state.lam.imag, state.mu.real, state.mu.imag]
            if diag is None:
                row += [nan] * 13
            else:
                for z in (diag.gamma2, diag.gamma4, diag.beta2, diag.beta4):
                    row += [z.real, z.imag]
                row += list(diag.susy_residuals)
                row += [diag.e0_at_zero.real, diag.e0_at_zero.imag]
            rows.append(row)
        return rows


def in_disk(state: CouplingState, cbar: float) -> bool:
    """|μ_h| ≤ 2C̄|λ_h|"""
    return abs(state.mu) <= 2.0 * cbar * abs(state.lam)


def run_flow(lam: complex, mu: complex, L: int, N: int, cfg: RunConfig,
             mode: Optional[QuadratureMode] = None) -> FlowTrace:
    """迭代 rg_step，直到 N 步、μ 越出圆盘或硬失败"""
    if cfg.lattice.L != L:
        cfg = replace(cfg, lattice=replace(cfg.lattice, L=L))
    U = EffectivePotential.initial(lam, mu, cfg)
    trace = FlowTrace(L=L, N=N, lam=float(np.real(lam)), mu0=complex(mu), config=cfg.to_flat())
    trace.couplings.append(U.coupling)
    trace.potentials.append(U)
    cbar = cfg.const.cbar
    for h in range(N + 1):
        if not in_disk(U.coupling, cbar):
            trace.termination = "mu_outside_disk"
            trace.failing_scale = h
            trace.reason = (f"|mu_{h}| = {abs(U.coupling.mu):.3e} exceeds 2*Cbar*|lambda_{h}| = "
                            f"{2.0 * cbar * abs(U.coupling.lam):.3e} (expanding direction)")
            logger.info("flow leaves the disk at scale %d", h)
            break
        if h == N:
            break
        try:
            U, diag = rg_step(U, cfg, mode)
        except HsrgError as e:
            trace.termination = "failed"
            trace.failing_scale = h
            trace.reason = str(e)
            logger.error("flow failed at scale %d: %s", h, e)
            break
        trace.couplings.append(U.coupling)
        trace.diagnostics.append(diag)
        trace.potentials.append(U)
    return trace


# ---------- 调参 ----------

@dataclass
class TuneResult:
    mu_star: complex
    trace: FlowTrace
    survival_depth: int
    secant_iterations: int
    grid_depths: List[Tuple[complex, int]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        lam = self.trace.lam
        return {
            "lambda": lam,
            "mu_star": _pair(self.mu_star),
            "survival_depth": self.survival_depth,
            "secant_iterations": self.secant_iterations,
            "im_mu_star": self.mu_star.imag,
            "mu_over_lambda": abs(self.mu_star) / lam if lam else 0.0,
            "termination": self.trace.termination,
            "grid": [{"mu": _pair(m), "depth": d} for m, d in self.grid_depths],
        }


def _objective(trace: FlowTrace) -> Tuple[int, float]:
    depth = trace.survival_depth()
    H = min(depth, trace.N, len(trace.couplings) - 1)
    state = trace.couplings[H]
    ratio = abs(state.mu) / abs(state.lam) if state.lam else abs(state.mu)
    return depth, ratio


def tune_mu(lam: float, L: int, N: int, cfg: RunConfig,
            mode: Optional[QuadratureMode] = None) -> TuneResult:
    """网格粗选 + 复割线法求 μ*，使 |μ_h| ≤ 2C̄|λ_h| 对所有 h ≤ N 成立

    同一 μ 的流只算一次；首个存活到 N 的流即为结果，割线容差 secant_tol·λ 只作为停止条件。
    """
    if lam == 0:
        trace = run_flow(0.0, 0j, L, N, cfg, mode)
        return TuneResult(mu_star=0j, trace=trace, survival_depth=trace.survival_depth(), secant_iterations=0)

    cache: Dict[complex, FlowTrace] = {}

    def flow(mu0: complex) -> FlowTrace:
        if mu0 not in cache:
            cache[mu0] = run_flow(lam, mu0, L, N, cfg, mode)
        return cache[mu0]

    radius = 2.0 * cfg.const.cbar * lam
    axis = np.linspace(-radius, radius, cfg.tune.grid)
    candidates = [0j, complex(0.5 * radius)]
    for a in axis:
        for b in axis:
            z = complex(a, b)
            if abs(z) <= radius * (1 + 1e-12) and z not in candidates:
                candidates.append(z)
    runs = [(mu0, flow(mu0)) for mu0 in candidates]
    grid_depths = [(m, t.survival_depth()) for m, t in runs]
    runs.sort(key=lambda item: (-_objective(item[1])[0], _objective(item[1])[1]))
    best_mu, best_trace = runs[0]
    if best_trace.survival_depth() < 1:
        raise TuningFailure("no grid point survives the first scale", best_mu, best_trace.survival_depth())
    logger.info("tuning grid: best mu=%r depth=%d", best_mu, best_trace.survival_depth())
    if best_trace.completed:
        return TuneResult(mu_star=best_mu, trace=best_trace, survival_depth=best_trace.survival_depth(),
                          secant_iterations=0, grid_depths=grid_depths)

    a_mu, a_tr = runs[1]
    b_mu, b_tr = best_mu, best_trace
    tol = cfg.tune.secant_tol * lam
    iterations = 0
    for iterations in range(1, cfg.tune.max_iter + 1):
        H = min(a_tr.survival_depth(), b_tr.survival_depth(), N,
                len(a_tr.couplings) - 1, len(b_tr.couplings) - 1)
        fa, fb = a_tr.couplings[H].mu, b_tr.couplings[H].mu
        if fb == fa:
            break
        c_mu = b_mu - fb * (b_mu - a_mu) / (fb - fa)
        c_tr = flow(c_mu)
        logger.debug("secant %d: H=%d mu=%r depth=%d", iterations, H, c_mu, c_tr.survival_depth())
        a_mu, a_tr, b_mu, b_tr = b_mu, b_tr, c_mu, c_tr
        if b_tr.completed or abs(b_mu - a_mu) <= tol:
            break
    if not b_tr.completed and a_tr.completed:
        b_mu, b_tr = a_mu, a_tr
    if not b_tr.completed:
        logger.warning("tuning ended without a surviving flow (depth %d)", b_tr.survival_depth())
    return TuneResult(mu_star=b_mu, trace=b_tr, survival_depth=b_tr.survival_depth(),
                      secant_iterations=iterations, grid_depths=grid_depths)


# ---------- 拟合 ----------

def fit_lambda_envelope(traces: Sequence[FlowTrace]) -> Dict[str, float]:
    """|L^h λ_h − λ| ≤ C λ^{3/2} 中的 C，及 log|λ_h| 对 h 的斜率"""
    C = 0.0
    slopes = []
    for trace in traces:
        if trace.lam <= 0:
            continue
        L = trace.L
        hs = np.array([c.h for c in trace.couplings], dtype=float)
        lams = np.array([c.lam for c in trace.couplings])
        dev = np.abs(L ** hs * lams - trace.lam) / trace.lam ** 1.5
        C = max(C, float(dev.max()))
        if hs.size >= 2:
            slopes.append(float(np.polyfit(hs, np.log(np.abs(lams)), 1)[0]))
    L = traces[0].L if traces else 2
    slope = float(np.mean(slopes)) if slopes else 0.0
    return {"C": C, "decay_exponent": slope, "log_L": math.log(L),
            "relative_deviation": abs(slope + math.log(L)) / math.log(L) if slopes else 0.0}


def fit_beta_constant(trace: FlowTrace) -> float:
    """K：|β₂| ≤ K L|λ_h|，|β₄| ≤ K L^{−1}|λ_h|^{3/2}"""
    K = 0.0
    for diag in trace.diagnostics:
        lam = abs(trace.couplings[diag.h].lam)
        if lam == 0:
            continue
        K = max(K, abs(diag.beta2) / (trace.L * lam), abs(diag.beta4) * trace.L / lam ** 1.5)
    return K


def cbar_condition(K: float, L: int, cbar: float) -> bool:
    """L(C̄ − K) > 4C̄ L^{−1}

    等价于 K < C̄(1 − 4/L²)：L = 2 时右端为 0，任何 K ≥ 0 都不满足；L ≥ 4 才有可行区间。
    """
    return L * (cbar - K) > 4.0 * cbar / L


def _pair(z) -> List[float]:
    z = complex(z)
    return [z.real, z.imag]
