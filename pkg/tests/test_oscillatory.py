#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试纯虚协方差下的玻色积分

验证要点：
1. 归一化 ∫1 = 1（正则化外推）与角向、Filon 权重的精确性
2. 驻相展开对多项式精确，余项估计随耦合减小
3. ε = 0 直接求积与外推结果一致
4. 错误路径：外推点数不足、无衰减的直接求积
"""

import sys
import os

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math
from dataclasses import replace

import numpy as np
import pytest

from hsrg.config import QuadConfig
from hsrg.errors import NonIntegrableTailError, OracleDivergenceError
from hsrg.oscillatory import (
    QuadratureMode,
    ReducedIntegrand,
    angular_average,
    chebyshev_u_rule,
    d_coefficient,
    direct_value,
    filon_weights,
    integrate,
    quartic_decay_scale,
    regulated_value,
    stationary_phase_value,
)


def _quartic(lam, poly=lambda r, u: 1.0):
    return ReducedIntegrand(
        evaluator=lambda r, u: np.exp(-lam * r ** 4) * poly(r, u),
        decay_scale=quartic_decay_scale(lam),
        coupling=lam,
    )


def test_angular_rule():
    """∫√(1−u²)du = π/2，∫u²√(1−u²)du = π/8"""
    print("=" * 60)
    print("测试1: 角向求积")
    print("=" * 60)

    u, w = chebyshev_u_rule(12)
    assert abs(w.sum() - math.pi / 2) < 1e-14
    assert abs(np.dot(w, u ** 2) - math.pi / 8) < 1e-14

    f = ReducedIntegrand(evaluator=lambda r, u: u ** 2 * r)
    avg, _ = angular_average(f, np.array([4.0]), QuadConfig())
    assert abs(avg[0] - 2.0 * math.pi / 8) < 1e-13
    print("✓ 测试通过！")


def test_filon_weights_constant():
    """β = 0 时权重之和为 2"""
    print("=" * 60)
    print("测试2: Filon 权重")
    print("=" * 60)

    w = filon_weights(0.0, 16, 128)
    assert abs(w.sum() - 2.0) < 1e-13
    # e^{−β(t+1)} 的精确积分
    beta = 0.7j
    w = filon_weights(beta, 16, 128)
    exact = (1.0 - np.exp(-2.0 * beta)) / beta
    assert abs(w.sum() - exact) < 1e-13
    print("✓ 测试通过！")


def test_regulated_normalization():
    """∫1 = 1"""
    print("=" * 60)
    print("测试3: 正则化外推")
    print("=" * 60)

    one = ReducedIntegrand(evaluator=lambda r, u: np.ones_like(r))
    value, err = regulated_value(one)
    print(f"  ∫1 = {complex(value)} (err {err:.2e})")
    assert abs(complex(value) - 1.0) < 1e-7

    with pytest.raises(OracleDivergenceError):
        regulated_value(one, eps_schedule=[0.1, 0.05])
    print("✓ 测试通过！")


def test_stationary_phase_polynomial():
    """f = 1 + ‖ζ‖²：d₀ + d₁Δf(0) = 1 − 2i，余项（下一项）为零"""
    print("=" * 60)
    print("测试4: 驻相展开")
    print("=" * 60)

    assert d_coefficient(0) == 1
    assert d_coefficient(1) == -0.25j
    f = ReducedIntegrand(evaluator=lambda r, u: 1.0 + r * r)
    res = stationary_phase_value(f, 2)
    assert abs(complex(res.value) - (1 - 2j)) < 1e-9
    assert res.remainder_estimate < 1e-8

    with pytest.raises(ValueError):
        stationary_phase_value(f, 0)
    print("✓ 测试通过！")


def test_spe_remainder_shrinks():
    """余项估计 K W^{−4−2m} F_W 随 λ 减小而减小"""
    print("=" * 60)
    print("测试5: 余项估计随耦合缩放")
    print("=" * 60)

    cfg = QuadConfig()
    rem = [stationary_phase_value(_quartic(lam), 2, cfg).remainder_estimate for lam in (1e-1, 1e-2, 1e-3)]
    print(f"  remainders: {rem}")
    assert rem[0] > rem[1] > rem[2]
    print("✓ 测试通过！")


def test_spe_error_order():
    """e^{−λ‖ζ‖⁴}：Δf(0) = 0，m=2 的误差 ≈ d₂Δ²f(0) = 6λ，m=3 的误差每十倍 λ 降约两个量级，且都在余项界内"""
    print("=" * 60)
    print("测试6: 驻相展开的误差阶")
    print("=" * 60)

    cfg = QuadConfig()
    errors = {2: {}, 3: {}}
    for lam in (1e-1, 1e-2, 1e-3):
        f = _quartic(lam)
        ref = complex(integrate(f, QuadratureMode.DIRECT, cfg).value)
        for m in (2, 3):
            if m == 3 and lam == 1e-1:
                continue
            res = stationary_phase_value(f, m, cfg)
            err = abs(complex(res.value) - ref)
            errors[m][lam] = err
            print(f"  λ={lam:g}, m={m}: err={err:.3e}, remainder={res.remainder_estimate:.3e}")
            assert err <= res.remainder_estimate
        assert abs(complex(stationary_phase_value(f, 2, cfg).value) - 1.0) < 1e-8

    assert abs(errors[2][1e-3] - 6e-3) < 0.05 * 6e-3
    assert errors[2][1e-2] / errors[2][1e-3] > 8.0
    assert errors[3][1e-2] / errors[3][1e-3] > 10.0 ** 1.5
    print("✓ 测试通过！")


def test_modes_agree():
    """e^{−λ‖ζ‖⁴}(1 + ½r²u²)：SPE(m=2) 与外推在合并误差内一致，直接求积与外推高度一致"""
    print("=" * 60)
    print("测试7: 三种求积方式交叉校验")
    print("=" * 60)

    cfg = QuadConfig()
    for lam in (1e-1, 1e-2):
        f = _quartic(lam, lambda r, u: 1.0 + 0.5 * r * r * u * u)
        spe = integrate(f, QuadratureMode.SPE, cfg, order=2)
        oracle = integrate(f, QuadratureMode.ORACLE, cfg)
        direct = integrate(f, QuadratureMode.DIRECT, cfg)
        assert oracle.mode is QuadratureMode.ORACLE and direct.mode is QuadratureMode.DIRECT
        diff = abs(complex(spe.value) - complex(oracle.value))
        print(f"  λ={lam}: |spe-oracle|={diff:.2e}, bound={spe.error + oracle.error:.2e}")
        assert diff <= spe.error + oracle.error
        assert abs(complex(direct.value) - complex(oracle.value)) < 1e-7
    print("✓ 测试通过！")


def test_direct_requires_decay():
    """无衰减的 f 不能直接求积；integrate 会退回外推"""
    print("=" * 60)
    print("测试8: 直接求积的前提")
    print("=" * 60)

    one = ReducedIntegrand(evaluator=lambda r, u: np.ones_like(r))
    with pytest.raises(NonIntegrableTailError):
        direct_value(one, QuadConfig())
    res = integrate(one, QuadratureMode.DIRECT)
    assert res.mode is QuadratureMode.ORACLE
    assert quartic_decay_scale(0.0) == math.inf
    print("✓ 测试通过！")


def test_component_axis():
    """多个被积函数共用节点，与分别积分一致"""
    print("=" * 60)
    print("测试9: 分量轴")
    print("=" * 60)

    lam = 0.1
    f1 = _quartic(lam)
    f2 = _quartic(lam, lambda r, u: r * r)
    both = ReducedIntegrand(
        evaluator=lambda r, u: np.stack([f1(r, u), f2(r, u)], axis=-1),
        decay_scale=f1.decay_scale,
        components=2,
    )
    cfg = QuadConfig()
    joint = integrate(both, QuadratureMode.DIRECT, cfg).value
    assert joint.shape == (2,)
    assert abs(joint[0] - complex(integrate(f1, QuadratureMode.DIRECT, cfg).value)) < 1e-11
    assert abs(joint[1] - complex(integrate(f2, QuadratureMode.DIRECT, cfg).value)) < 1e-11
    print("✓ 测试通过！")


def test_graded_components():
    """grades 逐分量降低截断阶：1 + ‖ζ‖² 在 g = 0 取 1 − 2i，g = 1 只剩 f(0) = 1"""
    print("=" * 60)
    print("测试10: 分阶截断")
    print("=" * 60)

    f = ReducedIntegrand(
        evaluator=lambda r, u: np.stack(np.broadcast_arrays(1.0 + r * r, 1.0 + r * r), axis=-1),
        components=2,
    )
    res = stationary_phase_value(f, 2, grades=[0, 1])
    assert abs(res.value[0] - (1 - 2j)) < 1e-9
    assert abs(res.value[1] - 1.0) < 1e-9
    with pytest.raises(ValueError):
        stationary_phase_value(f, 2, grades=[0, 1, 2])
    print("✓ 测试通过！")


def test_tail_extension():
    """截断半径偏小时按 1.5 倍外延；不允许外延则报 NonIntegrableTailError"""
    print("=" * 60)
    print("测试11: 径向截断外延")
    print("=" * 60)

    lam = 0.1
    full = _quartic(lam)
    short = ReducedIntegrand(evaluator=full.evaluator, decay_scale=0.8 * full.decay_scale, coupling=lam)
    cfg = QuadConfig()
    expected = complex(direct_value(full, cfg)[0])
    value, _ = direct_value(short, cfg)
    assert abs(complex(value) - expected) < 1e-10
    with pytest.raises(NonIntegrableTailError):
        direct_value(short, replace(cfg, tail_extensions=0))
    print("✓ 测试通过！")


def main():
    """运行所有测试"""
    print("开始测试振荡积分...\n")

    try:
        test_angular_rule()
        test_filon_weights_constant()
        test_regulated_normalization()
        test_stationary_phase_polynomial()
        test_spe_remainder_shrinks()
        test_spe_error_order()
        test_modes_agree()
        test_direct_requires_decay()
        test_component_axis()
        test_graded_components()
        test_tail_extension()

        print("\n" + "=" * 60)
        print("✅ 所有测试通过！")
        print("=" * 60)
        return 0
    except AssertionError as e:
        print(f"\n❌ 测试失败: {e}")
        return 1
    except Exception as e:
        print(f"\n❌ 测试出错: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
