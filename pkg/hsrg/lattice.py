# -*- coding: utf-8 -*-
"""层级格点几何与自由协方差

Λ = {x ∈ N³ : 0 ≤ x_i < L^N}，层级 k 的块是边长 L^k 的立方体。
层级距离 k(x,y) = min{k : ⌊x/L^{k+1}⌋ = ⌊y/L^{k+1}⌋}，d(x,y) = L^k。

符号函数约定 parity_x1：A_x = (−1)^{x₁ mod L}。取值 ±1，L 为偶数时
每个一级块内求和为零，沿各方向平移 L 不变。

自由协方差（精确的尺度和）：

    C(x,y) = −i δ_{σσ'} Σ_{h=k(x,y)}^{N−1} L^{−2h} A_{⌊x/L^h⌋} A_{⌊y/L^h⌋}
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np

from hsrg.errors import ConfigError

logger = logging.getLogger(__name__)

A_CONVENTION = "parity_x1"


@dataclass(frozen=True)
class Site:
    coords: Tuple[int, int, int]
    level: int = 0

    def coarsen(self, L: int, levels: int = 1) -> "Site":
        """所在 levels 级块的坐标 ⌊x/L^levels⌋"""
        f = L ** levels
        return Site(tuple(c // f for c in self.coords), self.level + levels)

    def __str__(self) -> str:
        return ",".join(str(c) for c in self.coords)


@dataclass(frozen=True)
class HierLattice:
    L: int
    N: int

    def __post_init__(self):
        if self.L < 2 or self.L % 2:
            raise ConfigError("L must be an even integer >= 2", "lattice.L")
        if self.N < 1:
            raise ConfigError("N must be >= 1", "lattice.N")

    @property
    def side(self) -> int:
        return self.L ** self.N

    def site(self, *coords: int, level: int = 0) -> Site:
        bound = self.L ** (self.N - level)
        if len(coords) != 3 or any(not 0 <= c < bound for c in coords):
            raise ValueError(f"coordinates {coords} outside [0, {bound})^3 at level {level}")
        return Site(tuple(int(c) for c in coords), level)

    def sites(self, level: int = 0) -> Iterator[Site]:
        bound = self.L ** (self.N - level)
        for c in itertools.product(range(bound), repeat=3):
            yield Site(c, level)

    def block_of(self, x: Site, level: int) -> Site:
        """x 所在的 level 级块"""
        if not x.level <= level <= self.N:
            raise ValueError(f"level {level} outside [{x.level}, {self.N}]")
        return x.coarsen(self.L, level - x.level)

    def block(self, z: Site) -> List[Site]:
        """z 所在的 B^{(1)}_z：z 下一层的 L³ 个子格点"""
        base = [c * self.L for c in z.coords]
        return [Site((base[0] + a, base[1] + b, base[2] + c), z.level - 1)
                for a, b, c in itertools.product(range(self.L), repeat=3)]

    # ---------- 几何 ----------

    def hier_scale(self, x: Site, y: Site) -> int:
        """k(x,y)"""
        if x.level != 0 or y.level != 0:
            raise ValueError("hier_scale expects level-0 sites")
        k = 0
        while k <= self.N:
            f = self.L ** (k + 1)
            if all(a // f == b // f for a, b in zip(x.coords, y.coords)):
                return k
            k += 1
        return self.N

    def distance(self, x: Site, y: Site) -> int:
        return self.L ** self.hier_scale(x, y)

    def a_sign(self, x: Site) -> int:
        return a_sign(x, self.L)

    # ---------- 协方差 ----------

    def free_covariance(self, x: Site, y: Site, sigma: int = 0, sigma2: int = 0) -> complex:
        if sigma != sigma2:
            return 0j
        k = self.hier_scale(x, y)
        total = 0.0
        for h in range(k, self.N):
            total += self.L ** (-2 * h) * a_sign(self.block_of(x, h), self.L) * a_sign(self.block_of(y, h), self.L)
        return -1j * total

    def covariance_from_scales(self) -> np.ndarray:
        """由单尺度规则 ⟨ζ^{(h)−}ζ^{(h)+}⟩ = −i 经分解 φ_x = Σ_h L^{−h} A ζ^{(h)} 组装的协方差矩阵

        行列按 sites() 的顺序。
        """
        sites = list(self.sites())
        n = len(sites)
        cov = np.zeros((n, n), dtype=np.complex128)
        for h in range(self.N):
            f = self.L ** (h + 1)
            blocks = {}
            index = np.empty(n, dtype=np.int64)
            weight = np.empty(n)
            for i, x in enumerate(sites):
                key = tuple(c // f for c in x.coords)
                index[i] = blocks.setdefault(key, len(blocks))
                weight[i] = self.L ** (-h) * a_sign(x.coarsen(self.L, h), self.L)
            # B_h[x, b] = L^{-h} A_{⌊x/L^h⌋} 1[⌊x/L^{h+1}⌋ = b]
            B = np.zeros((n, len(blocks)))
            B[np.arange(n), index] = weight
            cov += -1j * (B @ B.T)
        return cov

    def pairs(self, limit: int = 0) -> Iterator[Tuple[Site, Site]]:
        sites = list(self.sites())
        count = 0
        for x in sites:
            for y in sites:
                yield x, y
                count += 1
                if limit and count >= limit:
                    return


def a_sign(x: Site, L: int) -> int:
    """A_x = (−1)^{x₁ mod L}"""
    return -1 if (x.coords[0] % L) % 2 else 1


def block_sum(z: Site, lattice: HierLattice) -> int:
    return sum(a_sign(y, lattice.L) for y in lattice.block(z))
