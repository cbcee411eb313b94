# -*- coding: utf-8 -*-
"""异常层次

所有库内异常都派生自 HsrgError，CLI 按类别映射退出码：
- ConfigError                                  -> 1
- FlowFailure / TuningFailure / FlowTooShort   -> 2
- 校验失败（check 命令）                         -> 3
"""

from __future__ import annotations

from typing import Optional


class HsrgError(Exception):
    """hsrg 所有异常的基类"""


class ConfigError(HsrgError, ValueError):
    """配置解析或校验失败"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class GrassmannDomainError(HsrgError, ValueError):
    """Grassmann 运算的输入不在定义域内（如 exp_even 的奇次项）"""


class SymmetryViolationError(HsrgError):
    """多项式不在 (ψ·ψ) 生成的不变子代数中"""

    def __init__(self, message: str, residual: float = 0.0):
        self.residual = residual
        super().__init__(message)


class InfeasibleCertificateError(HsrgError):
    """(κ,N,M) 界不可行：零权重遇到非零系数"""


class StencilFailureError(HsrgError):
    """球面矩拟合病态"""

    def __init__(self, message: str, condition: float = 0.0):
        self.condition = condition
        super().__init__(message)


class OracleDivergenceError(HsrgError):
    """正则化外推不收敛"""


class NonIntegrableTailError(HsrgError):
    """径向积分尾部估计超过阈值"""


class DegenerateFitError(HsrgError):
    """Taylor 拟合缺少阶数或病态"""


class FlowFailure(HsrgError):
    """RG 流硬失败，记录失败尺度与原因"""

    def __init__(self, scale: int, reason: str):
        self.scale = scale
        self.reason = reason
        super().__init__(f"flow failed at scale {scale}: {reason}")


class TuningFailure(HsrgError):
    """μ 调参失败：网格上没有存活点"""

    def __init__(self, message: str, best_mu: complex = 0j, depth: int = 0):
        self.best_mu = best_mu
        self.depth = depth
        super().__init__(f"{message} (best mu={best_mu!r}, depth={depth})")


class ScaleMismatchError(HsrgError, ValueError):
    """插入态与有效势的尺度不一致"""


class FlowTooShortError(HsrgError):
    """流的长度不足以计算所需的关联函数"""
