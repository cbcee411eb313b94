#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试两点关联函数与局域化

验证要点：
1. 自由流：⟨φ⁺_x φ⁻_y⟩ 等于层级自由协方差，费米两点函数反号
2. 插入流的尺度检查与流长度检查
3. 超对称局域化 ∫dμ(ζ) g(ζ·ζ) = g(0)，去掉费米部分或翻转权重后失效
4. 相互作用流上玻色与费米两点函数之和为零（三个距离）
5. 插入修正随 λ 缩小；驻相模式下一阶插入与领头项相消
"""

import sys
import os

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from hsrg import grassmann as gr
from hsrg.config import QuadConfig, RunConfig
from hsrg.errors import FlowTooShortError, ScaleMismatchError
from hsrg.lattice import HierLattice
from hsrg.observables import (
    InsertionFlow,
    InsertionState,
    cauchy_derivatives,
    correlator_table,
    fermion_two_point,
    fit_decay_slope,
    insertion_init,
    insertion_step,
    localized_integral,
    susy_localization_check,
    two_point,
)
from hsrg.oscillatory import quartic_decay_scale
from hsrg.rg_flow import run_flow


def test_free_two_point():
    """λ = 0：关联函数 = 自由协方差，修正项为零"""
    print("=" * 60)
    print("测试1: 自由两点函数")
    print("=" * 60)

    cfg = RunConfig()
    lattice = HierLattice(2, 3)
    trace = run_flow(0.0, 0j, 2, 3, cfg)
    pairs = list(lattice.pairs(limit=300))
    pairs.append((lattice.site(0, 0, 0), lattice.site(7, 7, 7)))
    results = correlator_table(pairs, trace, cfg)
    fermions = correlator_table(pairs, trace, cfg, fermion=True)
    for r, f in zip(results, fermions):
        expected = lattice.free_covariance(r.x, r.y)
        assert abs(r.value - expected) < 1e-15, f"{r.x} {r.y}: {r.value} != {expected}"
        assert r.remainder == 0
        assert abs(f.value + r.value) < 1e-15
        assert r.d == lattice.distance(r.x, r.y)
    assert fit_decay_slope(results) < 0

    o = lattice.site(0, 0, 0)
    assert two_point(o, o, trace, cfg, sigma=0, sigma2=1).value == 0
    print("✓ 测试通过！")


def test_insertion_flow_guards():
    """流太短、尺度不匹配、只在原点求值的状态不能推进"""
    print("=" * 60)
    print("测试2: 插入流检查")
    print("=" * 60)

    cfg = RunConfig()
    short = run_flow(1e-3, 0.1, 2, 3, cfg)
    with pytest.raises(FlowTooShortError):
        InsertionFlow(short, cfg)

    trace = run_flow(0.0, 0j, 2, 3, cfg)
    pots = trace.potentials
    with pytest.raises(ScaleMismatchError):
        insertion_init(pots[0], pots[2], 2, cfg)
    with pytest.raises(ValueError):
        insertion_init(pots[0], pots[1], 2, cfg, kind="gluon")

    origin_only = InsertionState(k=0, h=1, kind="boson", G=None, origin=0j)
    with pytest.raises(ScaleMismatchError):
        insertion_step(origin_only, pots[1], pots[2], 2, cfg)

    flow = InsertionFlow(trace, cfg)
    with pytest.raises(FlowTooShortError):
        flow.correction(3)
    assert flow.correction(0) == 0
    assert len(flow.history(0)) == 3
    # 玻色插入流不能用于费米两点函数
    o = HierLattice(2, 3).site(0, 0, 0)
    with pytest.raises(ValueError):
        fermion_two_point(o, o, trace, cfg, flow)
    print("✓ 测试通过！")


def test_localization():
    """g(z) = e^{−z²} 与 e^{−z² − iμz}：∫dμ(ζ) g(ζ·ζ) = g(0)"""
    print("=" * 60)
    print("测试3: 超对称局域化")
    print("=" * 60)

    decay = quartic_decay_scale(1.0)
    cfg = QuadConfig()
    for mu in (0.0, 1e-3, 1e-6):
        residual = susy_localization_check(lambda z, mu=mu: np.exp(-z * z - 1j * mu * z), decay, cfg)
        print(f"  mu={mu:g}: residual {residual:.2e}")
        assert residual < 1e-6

    # 只积玻色部分不是超对称积分
    boson_only = localized_integral(lambda z: np.exp(-z * z), decay, cfg, fermionic=False)
    print(f"  boson only: {complex(np.asarray(boson_only.value))}")
    assert abs(complex(np.asarray(boson_only.value)) - 1.0) > 1e-2
    print("✓ 测试通过！")


def test_localization_sign_flip():
    """翻转费米权重符号后局域化失效"""
    print("=" * 60)
    print("测试4: 符号翻转")
    print("=" * 60)

    decay = quartic_decay_scale(1.0)
    with gr.weight_sign(-1):
        residual = susy_localization_check(lambda z: np.exp(-z * z), decay, QuadConfig())
    print(f"  residual with flipped sign: {residual:.2e}")
    assert residual > 1e-3
    print("✓ 测试通过！")


def test_cauchy_derivatives():
    """e^z 的各阶导数都是 e^z"""
    print("=" * 60)
    print("测试5: Cauchy 求导")
    print("=" * 60)

    z = np.array([0.0, 0.3, 2.0])
    derivs = cauchy_derivatives(np.exp, z, orders=3)
    assert len(derivs) == 4
    for d in derivs:
        assert np.allclose(d, np.exp(z), rtol=1e-12)
    print("✓ 测试通过！")


def test_interacting_susy_pair():
    """λ = 10⁻², N = 2：⟨φ⁺φ⁻⟩ + ⟨ψ⁺ψ⁻⟩ = 0（积分误差内），修正项非零"""
    print("=" * 60)
    print("测试6: 相互作用流上的超对称配对")
    print("=" * 60)

    cfg = RunConfig().with_overrides([("quad.mode", "direct")])
    lattice = HierLattice(2, 2)
    # μ 未调参：末尺度可能越出圆盘，但两步势都已算出
    trace = run_flow(1e-2, 0j, 2, 2, cfg)
    assert len(trace.potentials) == 3, trace.reason
    bos = InsertionFlow(trace, cfg, "boson")
    fer = InsertionFlow(trace, cfg, "fermion")
    pairs = [(lattice.site(0, 0, 0), lattice.site(0, 0, 0)),
             (lattice.site(0, 0, 0), lattice.site(3, 1, 2))]
    for x, y in pairs:
        b = two_point(x, y, trace, cfg, bos)
        f = fermion_two_point(x, y, trace, cfg, fer)
        tol = 2.0 * (b.integration_error + f.integration_error) + 1e-7
        print(f"  {x} {y}: boson {b.value:.10f}, fermion {f.value:.10f}, |sum| {abs(b.value + f.value):.2e}")
        assert abs(b.value + f.value) <= tol
        assert abs(b.remainder) > 0
        assert b.theta_certificate > 0
    print("✓ 测试通过！")


def test_susy_pair_distances():
    """λ = 10⁻³，N = 2：三个距离上玻色与费米两点函数之和为零"""
    print("=" * 60)
    print("测试7: 三个距离上的超对称配对")
    print("=" * 60)

    cfg = RunConfig().with_overrides([("quad.mode", "direct")])
    lattice = HierLattice(2, 2)
    trace = run_flow(1e-3, 0j, 2, 2, cfg)
    assert len(trace.potentials) == 3, trace.reason
    bos = InsertionFlow(trace, cfg, "boson")
    fer = InsertionFlow(trace, cfg, "fermion")
    o = lattice.site(0, 0, 0)
    pairs = [(o, o), (o, lattice.site(1, 0, 0)), (o, lattice.site(3, 1, 2))]
    distances = set()
    for x, y in pairs:
        b = two_point(x, y, trace, cfg, bos)
        f = fermion_two_point(x, y, trace, cfg, fer)
        tol = 2.0 * (b.integration_error + f.integration_error) + 1e-7
        print(f"  d={b.d} k={b.k}: boson {b.value:.10f}, |sum| {abs(b.value + f.value):.2e}")
        assert abs(b.value + f.value) <= tol
        assert abs(b.free_part + f.free_part) < 1e-15
        distances.add(b.d)
    assert len(distances) == 3
    print("✓ 测试通过！")


def test_insertion_scaling():
    """修正项 E_N 随 λ 至少按 λ^{1/2} 缩小，θ 证书随 λ 减小"""
    print("=" * 60)
    print("测试8: 插入修正的 λ 依赖")
    print("=" * 60)

    cfg = RunConfig().with_overrides([("quad.mode", "direct")])
    lattice = HierLattice(2, 2)
    x, y = lattice.site(0, 0, 0), lattice.site(1, 0, 0)
    results = {}
    for lam in (1e-2, 1e-3):
        trace = run_flow(lam, 0j, 2, 2, cfg)
        assert len(trace.potentials) == 3, trace.reason
        r = two_point(x, y, trace, cfg)
        assert r.k == 1 and r.d == 1
        assert len(r.error_terms) == 1
        print(f"  lambda={lam:g}: |E_N| = {abs(r.remainder):.3e}, theta certificate {r.theta_certificate:.3e}")
        results[lam] = r
    strong, weak = results[1e-2], results[1e-3]
    assert abs(weak.remainder) > 0
    assert abs(strong.remainder) >= 10 ** 0.5 * abs(weak.remainder)
    assert strong.theta_certificate > weak.theta_certificate
    print("✓ 测试通过！")


def test_spe_insertion_leading_term():
    """驻相模式下插入的一阶展开恰好等于领头项 ∓i·U^{L³}，减去后 F̃ ≈ 0"""
    print("=" * 60)
    print("测试9: 驻相插入与领头项")
    print("=" * 60)

    cfg = RunConfig()
    trace = run_flow(1e-3, 0j, 2, 1, cfg)
    pots = trace.potentials
    for kind in ("boson", "fermion"):
        state = insertion_init(pots[0], pots[1], 2, cfg, kind, origin_only=True)
        print(f"  {kind}: F(0) = {state.origin:.3e}")
        assert abs(state.origin) < 1e-8
    print("✓ 测试通过！")


def main():
    """运行所有测试"""
    print("开始测试关联函数...\n")

    try:
        test_free_two_point()
        test_insertion_flow_guards()
        test_localization()
        test_localization_sign_flip()
        test_cauchy_derivatives()
        test_interacting_susy_pair()
        test_susy_pair_distances()
        test_insertion_scaling()
        test_spe_insertion_leading_term()

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
