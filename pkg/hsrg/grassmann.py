# -*- coding: utf-8 -*-
"""有限 Grassmann 代数与 Berezin 积分

8 个反对易生成元，固定全序（位号即顺序）：

    bit 0..3: ψ⁺↑ ψ⁻↑ ψ⁺↓ ψ⁻↓      外场
    bit 4..7: ζ⁺↑ ζ⁻↑ ζ⁺↓ ζ⁻↓      涨落场

单项式用 8 位掩码表示，按位号升序排列生成元。两个不相交单项式 a·b 的符号
等于 “a 中位号大于 b 中位号” 的对数的奇偶性。

设计：
- 系数存为稠密复数数组，形状 (..., 256)，前导维度是批量（每个求积节点一个多项式）
- 乘法表只保存 3⁸ = 6561 对不相交掩码，按目标掩码排序后用 np.add.reduceat 归约
- 求和顺序固定，结果与线程数无关

性能：
- 单次乘法 = 一次 gather + 一次 reduceat，批量 N 时开销 O(6561·N)
- 偶子代数 (128 维) 不单独实现，语义以全代数为准
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, Mapping, Sequence, Tuple, Union

import numpy as np

from hsrg.errors import GrassmannDomainError, InfeasibleCertificateError, SymmetryViolationError

logger = logging.getLogger(__name__)

DIM = 256
PSI_BITS = 0x0F
ZETA_BITS = 0xF0

GENERATORS: Tuple[str, ...] = (
    "psi+up", "psi-up", "psi+dn", "psi-dn",
    "zeta+up", "zeta-up", "zeta+dn", "zeta-dn",
)
GENERATOR_BIT: Dict[str, int] = {name: i for i, name in enumerate(GENERATORS)}

POPCOUNT = np.array([bin(m).count("1") for m in range(DIM)], dtype=np.int64)
PSI_DEGREE = np.array([bin(m & PSI_BITS).count("1") for m in range(DIM)], dtype=np.int64)
ZETA_DEGREE = np.array([bin(m & ZETA_BITS).count("1") for m in range(DIM)], dtype=np.int64)
ODD_MASKS = np.flatnonzero(POPCOUNT % 2 == 1)

# (ψ·ψ) 相关掩码
_PP_UP = 0b0011
_PP_DN = 0b1100
_PP_SQ = 0b1111

# Berezin 权重符号：+1 为正确约定，-1 仅供 check 的变异对照
_WEIGHT_SIGN = 1

Scalar = Union[int, float, complex, np.ndarray]


def merge_sign(a: int, b: int) -> int:
    """不相交单项式 a·b 排序到规范顺序所需的符号"""
    inversions = 0
    for j in range(8):
        if b & (1 << j):
            # a 中位号大于 j 的生成元都要与 b 的第 j 个交换
            inversions += bin(a >> (j + 1)).count("1")
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=1)
def _product_table() -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """乘法表：(left, right, sign, starts)，按目标掩码排序"""
    rows = []
    for a in range(DIM):
        for b in range(DIM):
            if a & b:
                continue
            rows.append((a | b, a, b, merge_sign(a, b)))
    rows.sort()
    target = np.array([r[0] for r in rows], dtype=np.int64)
    left = np.array([r[1] for r in rows], dtype=np.int64)
    right = np.array([r[2] for r in rows], dtype=np.int64)
    sign = np.array([r[3] for r in rows], dtype=np.float64)
    starts = np.flatnonzero(np.r_[True, target[1:] != target[:-1]])
    return left, right, sign, starts


class GrassmannPoly:
    """Grassmann 多项式（可批量）

    coeffs[..., m] 为单项式 m 的复系数。运算均返回新对象，不做原地修改。
    """

    __slots__ = ("coeffs",)

    # 让 ndarray * poly 走 __rmul__
    __array_ufunc__ = None

    def __init__(self, coeffs):
        arr = np.asarray(coeffs, dtype=np.complex128)
        if arr.shape[-1:] != (DIM,):
            raise GrassmannDomainError(f"coefficient array must end with {DIM}, got {arr.shape}")
        self.coeffs = arr

    # ---------- 构造 ----------

    @classmethod
    def zero(cls, shape: Tuple[int, ...] = ()) -> "GrassmannPoly":
        return cls(np.zeros(shape + (DIM,), dtype=np.complex128))

    @classmethod
    def scalar(cls, value: Scalar = 1.0) -> "GrassmannPoly":
        value = np.asarray(value, dtype=np.complex128)
        out = np.zeros(value.shape + (DIM,), dtype=np.complex128)
        out[..., 0] = value
        return cls(out)

    @classmethod
    def one(cls) -> "GrassmannPoly":
        return cls.scalar(1.0)

    @classmethod
    def from_terms(cls, terms: Mapping[int, complex]) -> "GrassmannPoly":
        out = np.zeros(DIM, dtype=np.complex128)
        for mask, value in terms.items():
            out[int(mask)] += value
        return cls(out)

    @classmethod
    def monomial(cls, *names: str, coeff: complex = 1.0) -> "GrassmannPoly":
        """按给定顺序相乘的生成元乘积，例如 monomial('psi-up', 'psi+up')"""
        poly = cls.scalar(coeff)
        for name in names:
            poly = poly * generator(name)
        return poly

    @classmethod
    def from_psi_psi(cls, c0: Scalar, c1: Scalar, c2: Scalar) -> "GrassmannPoly":
        """c0 + c1 (ψ·ψ) + c2 (ψ·ψ)²，系数可以是数组（批量）"""
        c0, c1, c2 = np.broadcast_arrays(
            np.asarray(c0, dtype=np.complex128),
            np.asarray(c1, dtype=np.complex128),
            np.asarray(c2, dtype=np.complex128),
        )
        out = np.zeros(c0.shape + (DIM,), dtype=np.complex128)
        out[..., 0] = c0
        out[..., _PP_UP] = c1
        out[..., _PP_DN] = c1
        out[..., _PP_SQ] = 2.0 * c2
        return cls(out)

    # ---------- 视图 ----------

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.coeffs.shape[:-1]

    @property
    def scalar_part(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def terms(self, tol: float = 0.0) -> Dict[int, complex]:
        """稀疏视图：掩码 -> 系数（仅非批量多项式）"""
        if self.batch_shape:
            raise GrassmannDomainError("terms() needs an unbatched polynomial")
        return {int(m): complex(self.coeffs[m]) for m in np.flatnonzero(np.abs(self.coeffs) > tol)}

    def is_even(self) -> bool:
        return not np.any(self.coeffs[..., ODD_MASKS])

    def __getitem__(self, index) -> "GrassmannPoly":
        return GrassmannPoly(self.coeffs[index])

    def __repr__(self) -> str:
        if self.batch_shape:
            return f"GrassmannPoly(batch={self.batch_shape})"
        parts = []
        for mask, value in sorted(self.terms().items()):
            names = [GENERATORS[i] for i in range(8) if mask & (1 << i)]
            parts.append(f"{value:.6g}*{'*'.join(names) or '1'}")
        return "GrassmannPoly(" + (" + ".join(parts) or "0") + ")"

    # ---------- 运算 ----------

    def __add__(self, other) -> "GrassmannPoly":
        if isinstance(other, GrassmannPoly):
            return GrassmannPoly(self.coeffs + other.coeffs)
        return self + GrassmannPoly.scalar(other)

    __radd__ = __add__

    def __neg__(self) -> "GrassmannPoly":
        return GrassmannPoly(-self.coeffs)

    def __sub__(self, other) -> "GrassmannPoly":
        return self + (-other)

    def __rsub__(self, other) -> "GrassmannPoly":
        return (-self) + other

    def __mul__(self, other) -> "GrassmannPoly":
        if isinstance(other, GrassmannPoly):
            return mul(self, other)
        return GrassmannPoly(self.coeffs * np.asarray(other, dtype=np.complex128)[..., None])

    def __rmul__(self, other) -> "GrassmannPoly":
        # 标量乘法与左右无关
        return GrassmannPoly(self.coeffs * np.asarray(other, dtype=np.complex128)[..., None])

    def __truediv__(self, other) -> "GrassmannPoly":
        return GrassmannPoly(self.coeffs / np.asarray(other, dtype=np.complex128)[..., None])


@lru_cache(maxsize=None)
def generator(name: str) -> GrassmannPoly:
    """单个生成元"""
    if name not in GENERATOR_BIT:
        raise GrassmannDomainError(f"unknown generator {name!r}")
    out = np.zeros(DIM, dtype=np.complex128)
    out[1 << GENERATOR_BIT[name]] = 1.0
    return GrassmannPoly(out)


def psi_dot_psi() -> GrassmannPoly:
    """(ψ·ψ) = Σ_σ ψ⁺_σ ψ⁻_σ"""
    return GrassmannPoly.from_terms({_PP_UP: 1.0, _PP_DN: 1.0})


def zeta_dot_zeta() -> GrassmannPoly:
    """涨落场的费米双线性 Σ_σ ζ⁺_σ ζ⁻_σ"""
    return GrassmannPoly.from_terms({_PP_UP << 4: 1.0, _PP_DN << 4: 1.0})


def mul(p: GrassmannPoly, q: GrassmannPoly) -> GrassmannPoly:
    """分次乘积，批量维度按 numpy 规则广播"""
    left, right, sign, starts = _product_table()
    terms = p.coeffs[..., left] * q.coeffs[..., right] * sign
    return GrassmannPoly(np.add.reduceat(terms, starts, axis=-1))


def exp_even(p: GrassmannPoly) -> GrassmannPoly:
    """exp(p)，p 为零标量部分的偶元素；级数在 j = 4 处截断是精确的"""
    if not p.is_even():
        raise GrassmannDomainError("exp_even requires an even polynomial")
    if np.any(p.scalar_part != 0):
        raise GrassmannDomainError("exp_even requires a zero scalar part")
    result = GrassmannPoly.scalar(np.ones(p.batch_shape))
    term = result
    for j in range(1, 5):
        term = mul(term, p) / j
        result = result + term
    return result


def power(p: GrassmannPoly, k: int) -> GrassmannPoly:
    """p^k，反复平方"""
    if int(k) != k or k < 1:
        raise GrassmannDomainError(f"power exponent must be a positive integer, got {k!r}")
    k = int(k)
    result = None
    base = p
    while k:
        if k & 1:
            result = base if result is None else mul(result, base)
        k >>= 1
        if k:
            base = mul(base, base)
    return result


def set_weight_sign(sign: int) -> int:
    """设置 Berezin 权重 exp(∓iΣζ⁺ζ⁻) 的符号，返回旧值"""
    global _WEIGHT_SIGN
    if sign not in (1, -1):
        raise GrassmannDomainError("weight sign must be +1 or -1")
    old, _WEIGHT_SIGN = _WEIGHT_SIGN, sign
    _fluct_weight.cache_clear()
    return old


@contextlib.contextmanager
def weight_sign(sign: int) -> Iterator[None]:
    """临时翻转权重符号（变异对照用）"""
    old = set_weight_sign(sign)
    try:
        yield
    finally:
        set_weight_sign(old)


@lru_cache(maxsize=2)
def _fluct_weight() -> GrassmannPoly:
    return exp_even(-1j * _WEIGHT_SIGN * zeta_dot_zeta())


def berezin_fluct_integral(p: GrassmannPoly) -> GrassmannPoly:
    """∫dμ_ψ(ζ) p，dμ_ψ = −[∏dζ⁺dζ⁻] e^{−iΣζ⁺ζ⁻}

    归一化使 ∫1 = 1；结果只含外场 ψ。测度含偶数个 dζ，与 ψ 交换无符号。
    """
    weighted = mul(_fluct_weight(), p)
    out = np.zeros(p.batch_shape + (DIM,), dtype=np.complex128)
    out[..., :16] = -weighted.coeffs[..., ZETA_BITS:ZETA_BITS + 16]
    return GrassmannPoly(out)


def psi_psi_coefficients(p: GrassmannPoly, rtol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """分解 p = C₀ + C₁(ψ·ψ) + C₂(ψ·ψ)²

    不变子代数之外的残差超过 rtol·max|系数| 时报 SymmetryViolationError。
    """
    c = p.coeffs
    scale = np.max(np.abs(c), axis=-1)
    outside = np.abs(c).copy()
    outside[..., [0, _PP_UP, _PP_DN, _PP_SQ]] = 0.0
    residual = np.maximum(np.max(outside, axis=-1), np.abs(c[..., _PP_UP] - c[..., _PP_DN]))
    bad = residual > rtol * scale
    if np.any(bad):
        worst = float(np.max(np.where(bad, residual, 0.0)))
        raise SymmetryViolationError(
            f"polynomial leaves span{{1, ψ·ψ, (ψ·ψ)²}}: residual {worst:.3e}", residual=worst
        )
    c1 = 0.5 * (c[..., _PP_UP] + c[..., _PP_DN])
    return c[..., 0].copy(), c1, 0.5 * c[..., _PP_SQ]


# ---------- 代入 ----------

@lru_cache(maxsize=4)
def _shift_matrix(sign: int) -> np.ndarray:
    """ψ_i -> ψ_i + sign·ζ_i 的线性映射，T[new, old]"""
    images = []
    for i in range(4):
        img = np.zeros(DIM, dtype=np.complex128)
        img[1 << i] = 1.0
        img[1 << (i + 4)] = sign
        images.append(GrassmannPoly(img))
    images += [generator(GENERATORS[i]) for i in range(4, 8)]
    # 逐个单项式展开，批量一次算完 256 个
    cols = GrassmannPoly.scalar(np.ones(DIM))
    for bit in range(8):
        has = ((np.arange(DIM) >> bit) & 1).astype(bool)
        factor = np.where(has[:, None], images[bit].coeffs[None, :], np.eye(1, DIM, 0)[0][None, :])
        cols = mul(cols, GrassmannPoly(factor))
    return cols.coeffs.T.copy()


def shift_external(p: GrassmannPoly, sign: int = 1) -> GrassmannPoly:
    """代入 ψ -> ψ ± ζ_ψ（同自旋同电荷配对），对应 U(Φ/L ± ζ) 的费米部分"""
    if sign not in (1, -1):
        raise GrassmannDomainError("shift sign must be +1 or -1")
    return GrassmannPoly(p.coeffs @ _shift_matrix(sign).T)


def scale_external(p: GrassmannPoly, c: complex) -> GrassmannPoly:
    """ψ -> cψ，ψ 次数为 d 的项乘以 c^d"""
    return GrassmannPoly(p.coeffs * (complex(c) ** PSI_DEGREE))


def zeta_degree_part(p: GrassmannPoly, degree: int) -> GrassmannPoly:
    """p 中 ζ 次数恰为 degree 的部分"""
    return GrassmannPoly(p.coeffs * (ZETA_DEGREE == degree))


# ---------- (κ,N,M) 界 ----------

@dataclass(frozen=True)
class KnmCertificate:
    """|f_{a,b}| ≤ κ N^{|a|} M^{|b|}"""

    kappa: float
    N: float
    M: float

    def weights(self) -> np.ndarray:
        # numpy 中 0.0**0 == 1，与约定 0⁰ = 1 一致
        return float(self.N) ** PSI_DEGREE * float(self.M) ** ZETA_DEGREE

    def holds(self, p: GrassmannPoly) -> bool:
        return bool(np.all(np.abs(p.coeffs) <= self.kappa * self.weights()))


def knm_certify(p: GrassmannPoly, N: float, M: float) -> KnmCertificate:
    """最小 κ，使 p 满足 (κ,N,M) 界；批量多项式取全批最大值"""
    if N < 0 or M < 0:
        raise InfeasibleCertificateError("weights must be nonnegative")
    weights = float(N) ** PSI_DEGREE * float(M) ** ZETA_DEGREE
    mags = np.abs(p.coeffs).reshape(-1, DIM)
    zero_w = weights == 0.0
    if np.any(mags[:, zero_w] > 0):
        raise InfeasibleCertificateError(
            f"nonzero coefficient where weight vanishes (N={N}, M={M})"
        )
    ratios = mags[:, ~zero_w] / weights[~zero_w]
    kappa = float(ratios.max()) if ratios.size else 0.0
    # 舍入后 κ·w 可能略小于 |f|，逐 ulp 上调直到 holds 成立
    bound = mags[:, ~zero_w]
    while np.any(bound > kappa * weights[~zero_w]):
        kappa = float(np.nextafter(kappa, np.inf))
    return KnmCertificate(kappa=kappa, N=float(N), M=float(M))


def integration_bound_factor(M: float, zeta_free_part: bool = True) -> float:
    """Berezin 积分后 κ 的放大因子 1 + 12M² + 2M⁴（无 ζ-自由部分时去掉 1）"""
    return (1.0 if zeta_free_part else 0.0) + 12.0 * M ** 2 + 2.0 * M ** 4


def power_bound_factor(p: int, kappa: float, terms: int = 80) -> float:
    """(1+f)^p − 1 的 κ 放大常数 K·p，K = Σ_{i≥1} i⁸/i! (pκ)^{i−1}"""
    x = p * kappa
    total = 0.0
    term = 1.0  # x^{i-1}/i! 在 i = 1 时
    for i in range(1, terms + 1):
        total += i ** 8 * term
        term *= x / (i + 1)
    return p * total


def has_zeta_free_part(p: GrassmannPoly) -> bool:
    return bool(np.any(p.coeffs[..., :16] != 0))


def random_poly(rng: np.random.Generator, density: float = 0.15, scale: float = 1.0,
                even: bool = False, integer: bool = False, masks: Sequence[int] = ()) -> GrassmannPoly:
    """随机稀疏多项式（测试与证书抽样用）

    integer=True 时系数为小高斯整数，乘法结果在浮点下是精确的。
    """
    pool = np.asarray(masks if len(masks) else np.arange(DIM))
    if even:
        pool = pool[POPCOUNT[pool] % 2 == 0]
    keep = pool[rng.random(pool.size) < density]
    out = np.zeros(DIM, dtype=np.complex128)
    if integer:
        out[keep] = rng.integers(-3, 4, keep.size) + 1j * rng.integers(-3, 4, keep.size)
    else:
        out[keep] = scale * (rng.standard_normal(keep.size) + 1j * rng.standard_normal(keep.size))
    return GrassmannPoly(out)


def current_weight_sign() -> int:
    return _WEIGHT_SIGN
