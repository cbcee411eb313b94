# -*- coding: utf-8 -*-
"""径向函数：s = ‖φ‖² 上的分段 Chebyshev–Lobatto 表示

- [0, s_max] 均分为 elements 段，每段 nodes 个 Lobatto 点（端点共享）
- 段内插值系数由 Chebyshev–Vandermonde 逆矩阵一次得到，求值用 chebval 形式的求和
- s > s_max 时取边界值（该区域由显式指数前因子控制）
- Taylor 数据来自单独的小 s 模板：常数项固定为 s = 0 处的值，最小二乘拟合，
  保留到 s³
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial import chebyshev

from hsrg.config import GridConfig
from hsrg.errors import DegenerateFitError

logger = logging.getLogger(__name__)

TAYLOR_ORDERS = 4  # s⁰..s³


@lru_cache(maxsize=16)
def _lobatto(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """[-1,1] 上升序的 Lobatto 点及其值 -> Chebyshev 系数矩阵"""
    x = -np.cos(np.pi * np.arange(nodes) / (nodes - 1))
    return x, np.linalg.inv(chebyshev.chebvander(x, nodes - 1))


@dataclass(frozen=True)
class RadialGrid:
    s_max: float
    elements: int = 4
    nodes: int = 24
    taylor_width: float = 0.0
    taylor_points: int = 8

    @classmethod
    def for_coupling(cls, lam_abs: float, cfg: GridConfig) -> "RadialGrid":
        """s_max = (margin·ρ·|λ|^{−1/4})²，Taylor 模板宽度 taylor_width·|λ|^{−1/2}"""
        if lam_abs <= 0:
            return cls(s_max=(cfg.margin * cfg.rho) ** 2, elements=cfg.elements, nodes=cfg.nodes,
                       taylor_width=cfg.taylor_width, taylor_points=cfg.taylor_points)
        r_max = cfg.margin * cfg.rho * lam_abs ** -0.25
        return cls(s_max=r_max ** 2, elements=cfg.elements, nodes=cfg.nodes,
                   taylor_width=cfg.taylor_width * lam_abs ** -0.5, taylor_points=cfg.taylor_points)

    @property
    def width(self) -> float:
        return self.s_max / self.elements

    def points(self) -> np.ndarray:
        """全部不重复节点（升序，首个为 0）"""
        x, _ = _lobatto(self.nodes)
        local = 0.5 * (x + 1.0) * self.width
        pts = [0.0]
        for e in range(self.elements):
            pts.extend(e * self.width + local[1:])
        return np.asarray(pts)

    @property
    def radii(self) -> np.ndarray:
        return np.sqrt(self.points())

    def taylor_points_s(self) -> np.ndarray:
        """[0, taylor_width] 上的 Chebyshev 点（不含 0）"""
        k = np.arange(self.taylor_points)
        return 0.5 * self.taylor_width * (1.0 - np.cos(np.pi * (k + 0.5) / self.taylor_points))

    def element_indices(self) -> np.ndarray:
        """(elements, nodes) -> points() 的下标"""
        step = self.nodes - 1
        return np.arange(self.elements)[:, None] * step + np.arange(self.nodes)[None, :]


def taylor_fit(s: np.ndarray, values: np.ndarray, v0: complex, degree: int) -> np.ndarray:
    """约束最小二乘：values − v0 = Σ_{k=1}^{degree} c_k s^k，返回 [v0, c1, c2, c3]"""
    s = np.asarray(s, dtype=float)
    if s.size < degree or degree < TAYLOR_ORDERS - 1:
        raise DegenerateFitError(f"need {degree} stencil points for degree {degree}, got {s.size}")
    scale = float(s.max())
    if scale <= 0:
        raise DegenerateFitError("Taylor stencil has zero width")
    t = s / scale
    vander = t[:, None] ** np.arange(1, degree + 1)[None, :]
    cond = float(np.linalg.cond(vander))
    if not np.isfinite(cond) or cond > 1e10:
        raise DegenerateFitError(f"Taylor fit condition number {cond:.3e}")
    rhs = np.asarray(values, dtype=np.complex128) - v0
    coef, *_ = np.linalg.lstsq(vander.astype(np.complex128), rhs, rcond=None)
    coef = coef / scale ** np.arange(1, degree + 1)
    out = np.zeros(TAYLOR_ORDERS, dtype=np.complex128)
    out[0] = v0
    out[1:] = coef[: TAYLOR_ORDERS - 1]
    return out


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """R(s)，s = r²"""

    grid: RadialGrid
    values: np.ndarray
    taylor: np.ndarray

    @classmethod
    def from_samples(cls, grid: RadialGrid, values: np.ndarray, stencil_values: np.ndarray,
                     degree: int = 5) -> "RadialFunction":
        values = np.asarray(values, dtype=np.complex128)
        taylor = taylor_fit(grid.taylor_points_s(), stencil_values, values[0], degree)
        return cls(grid=grid, values=values, taylor=taylor)

    @classmethod
    def constant(cls, value: complex, grid: RadialGrid) -> "RadialFunction":
        n = grid.points().size
        taylor = np.zeros(TAYLOR_ORDERS, dtype=np.complex128)
        taylor[0] = value
        return cls(grid=grid, values=np.full(n, value, dtype=np.complex128), taylor=taylor)

    @property
    def at_zero(self) -> complex:
        return complex(self.values[0])

    def is_constant(self, value: Optional[complex] = None) -> bool:
        ref = self.values[0] if value is None else value
        return bool(np.all(self.values == ref) and np.all(self.taylor[1:] == 0))

    def coefficients(self) -> np.ndarray:
        """(elements, nodes) Chebyshev 系数"""
        _, vinv = _lobatto(self.grid.nodes)
        per_element = self.values[self.grid.element_indices()]
        return per_element @ vinv.T

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        grid = self.grid
        coef = _cached_coefficients(self)
        clipped = np.clip(s, 0.0, grid.s_max)
        elem = np.minimum((clipped / grid.width).astype(np.int64), grid.elements - 1)
        x = 2.0 * (clipped - elem * grid.width) / grid.width - 1.0
        basis = chebyshev.chebvander(x, grid.nodes - 1)
        return np.einsum("...k,...k->...", basis, coef[elem])


def _cached_coefficients(fn: RadialFunction) -> np.ndarray:
    # frozen dataclass：系数缓存挂在实例字典上
    cached = fn.__dict__.get("_coef")
    if cached is None:
        cached = fn.coefficients()
        object.__setattr__(fn, "_coef", cached)
    return cached
