#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试 Grassmann 代数与 Berezin 积分

验证要点：
1. 生成元反对易、平方为零，乘法结合律（整数系数下精确）
2. Berezin 积分的归一化与二阶矩
3. exp_even / power / psi_psi_coefficients 的定义域与错误路径
4. (κ,N,M) 证书在乘积、积分、幂次下的界
"""

import sys
import os

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from hsrg import grassmann as gr
from hsrg.errors import GrassmannDomainError, InfeasibleCertificateError, SymmetryViolationError

SLACK = 4.0 * np.finfo(float).eps


def test_anticommutation():
    """生成元两两反对易，自身平方为零"""
    print("=" * 60)
    print("测试1: 反对易关系")
    print("=" * 60)

    for a in gr.GENERATORS:
        ga = gr.generator(a)
        assert not np.any((ga * ga).coeffs), f"{a}² 应为零"
        for b in gr.GENERATORS:
            gb = gr.generator(b)
            total = ga * gb + gb * ga
            assert not np.any(total.coeffs), f"{a}{b} + {b}{a} 应为零"

    with pytest.raises(GrassmannDomainError):
        gr.generator("psi+left")
    print("✓ 测试通过！")


def test_associativity_integer():
    """整数系数随机多项式：(pq)r == p(qr) 逐位相等"""
    print("=" * 60)
    print("测试2: 结合律")
    print("=" * 60)

    rng = np.random.default_rng(7)
    for _ in range(50):
        p, q, r = (gr.random_poly(rng, integer=True) for _ in range(3))
        left = (p * q) * r
        right = p * (q * r)
        assert np.array_equal(left.coeffs, right.coeffs)
    print("✓ 测试通过！")


def test_berezin_moments():
    """∫1 = 1，⟨ζ⁻ζ⁺⟩ = −i，⟨ζ⁺ζ⁻⟩ = +i，⟨Q⟩ = 2i，⟨Q²⟩ = −2"""
    print("=" * 60)
    print("测试3: Berezin 积分")
    print("=" * 60)

    integral = lambda p: complex(gr.berezin_fluct_integral(p).scalar_part)
    assert integral(gr.GrassmannPoly.one()) == pytest.approx(1.0)
    assert integral(gr.GrassmannPoly.monomial("zeta-up", "zeta+up")) == pytest.approx(-1j)
    assert integral(gr.GrassmannPoly.monomial("zeta+up", "zeta-up")) == pytest.approx(1j)
    Q = gr.zeta_dot_zeta()
    assert integral(Q) == pytest.approx(2j)
    assert integral(Q * Q) == pytest.approx(-2.0)
    # 奇次项积分为零
    assert integral(gr.generator("zeta+dn")) == 0

    # 积分结果只含外场
    p = gr.psi_dot_psi() * Q
    out = gr.berezin_fluct_integral(p)
    assert not np.any(out.coeffs[16:])
    print("✓ 测试通过！")


def test_weight_sign_hook():
    """翻转权重符号后 ⟨Q⟩ 变号，退出后恢复"""
    print("=" * 60)
    print("测试4: 权重符号钩子")
    print("=" * 60)

    Q = gr.zeta_dot_zeta()
    with gr.weight_sign(-1):
        assert gr.current_weight_sign() == -1
        assert complex(gr.berezin_fluct_integral(Q).scalar_part) == pytest.approx(-2j)
    assert gr.current_weight_sign() == 1
    assert complex(gr.berezin_fluct_integral(Q).scalar_part) == pytest.approx(2j)
    with pytest.raises(GrassmannDomainError):
        gr.set_weight_sign(0)
    print("✓ 测试通过！")


def test_exp_even_and_power():
    """exp(aP) = 1 + aP + a²P²/2；定义域检查"""
    print("=" * 60)
    print("测试5: exp_even / power")
    print("=" * 60)

    a = 0.3 - 0.2j
    P = gr.psi_dot_psi()
    got = gr.exp_even(a * P)
    want = gr.GrassmannPoly.from_psi_psi(1.0, a, 0.5 * a * a)
    assert np.allclose(got.coeffs, want.coeffs, atol=1e-15)

    # P³ = 0
    assert not np.any(gr.power(P, 3).coeffs)
    assert np.allclose(gr.power(1.0 + P, 4).coeffs, gr.GrassmannPoly.from_psi_psi(1, 4, 6).coeffs)

    with pytest.raises(GrassmannDomainError):
        gr.exp_even(gr.generator("psi+up"))
    with pytest.raises(GrassmannDomainError):
        gr.exp_even(1.0 + P)
    with pytest.raises(GrassmannDomainError):
        gr.power(P, 0)
    print("✓ 测试通过！")


def test_batched_product():
    """批量多项式逐元素相乘，与逐个计算一致"""
    print("=" * 60)
    print("测试6: 批量运算")
    print("=" * 60)

    rng = np.random.default_rng(11)
    ps = [gr.random_poly(rng, integer=True) for _ in range(3)]
    qs = [gr.random_poly(rng, integer=True) for _ in range(3)]
    batch_p = gr.GrassmannPoly(np.stack([p.coeffs for p in ps]))
    batch_q = gr.GrassmannPoly(np.stack([q.coeffs for q in qs]))
    prod = batch_p * batch_q
    assert prod.batch_shape == (3,)
    for i in range(3):
        assert np.array_equal(prod[i].coeffs, (ps[i] * qs[i]).coeffs)
    print("✓ 测试通过！")


def test_psi_psi_decomposition():
    """不变子代数分解及越界报错"""
    print("=" * 60)
    print("测试7: ψ·ψ 分解")
    print("=" * 60)

    p = gr.GrassmannPoly.from_psi_psi(2.0, -1j, 0.5)
    c0, c1, c2 = gr.psi_psi_coefficients(p)
    assert complex(c0) == 2.0 and complex(c1) == -1j and complex(c2) == 0.5

    with pytest.raises(SymmetryViolationError) as info:
        gr.psi_psi_coefficients(gr.GrassmannPoly.monomial("psi+up", "psi-dn"))
    assert info.value.residual > 0
    print("✓ 测试通过！")


def test_shift_and_scale():
    """[P^m]∫(ψ+ζ)·(ψ+ζ) = (2i, 1, 0)；ψ -> ψ/2 把 P 系数缩小 4 倍"""
    print("=" * 60)
    print("测试8: 外场代入")
    print("=" * 60)

    P = gr.psi_dot_psi()
    shifted = gr.shift_external(P, +1)
    c0, c1, c2 = gr.psi_psi_coefficients(gr.berezin_fluct_integral(shifted))
    assert complex(c0) == pytest.approx(2j)
    assert complex(c1) == pytest.approx(1.0)
    assert abs(complex(c2)) < 1e-15

    # ψ 与 ζ 同号代入后再反号代入回到原式
    back = gr.shift_external(gr.shift_external(P, +1), -1)
    assert np.allclose(back.coeffs, P.coeffs)

    half = gr.scale_external(P * P, 0.5)
    _, _, c2 = gr.psi_psi_coefficients(half)
    assert complex(c2) == pytest.approx(1.0 / 16.0)
    print("✓ 测试通过！")


def test_knm_certificates():
    """乘积：κ₁κ₂ @ (N₁+N₂, M₁+M₂)；积分：κ(1+12M²+2M⁴)；幂：K p κ"""
    print("=" * 60)
    print("测试9: (κ,N,M) 证书")
    print("=" * 60)

    rng = np.random.default_rng(2024)
    for _ in range(200):
        p = gr.random_poly(rng, density=0.2, scale=0.5)
        q = gr.random_poly(rng, density=0.2, scale=0.5)
        n1, m1, n2, m2 = rng.uniform(0.2, 1.5, 4)
        c1 = gr.knm_certify(p, n1, m1)
        c2 = gr.knm_certify(q, n2, m2)
        assert c1.holds(p)
        c12 = gr.knm_certify(p * q, n1 + n2, m1 + m2)
        assert c12.kappa <= c1.kappa * c2.kappa * (1 + SLACK)

        ci = gr.knm_certify(gr.berezin_fluct_integral(p), n1, 0.0)
        assert ci.kappa <= c1.kappa * gr.integration_bound_factor(m1, gr.has_zeta_free_part(p)) * (1 + SLACK)

        f = gr.random_poly(rng, density=0.1, scale=0.05, even=True)
        f = f - f.scalar_part
        cf = gr.knm_certify(f, n1, m1)
        k = int(rng.integers(2, 5))
        ch = gr.knm_certify(gr.power(1.0 + f, k) - 1.0, n1, m1)
        assert ch.kappa <= cf.kappa * gr.power_bound_factor(k, cf.kappa) * (1 + SLACK)

    with pytest.raises(InfeasibleCertificateError):
        gr.knm_certify(gr.psi_dot_psi(), 0.0, 1.0)
    print("✓ 测试通过！")


def test_knm_certify_holds_after_rounding():
    """任意 (N, M) 下 knm_certify 给出的 κ 自身通过 holds，且只比最小比值大几个 ulp"""
    print("=" * 60)
    print("测试10: 证书在舍入下自洽")
    print("=" * 60)

    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = gr.random_poly(rng, density=0.3, scale=rng.uniform(0.1, 3.0))
        n, m = rng.uniform(0.05, 2.5, 2)
        cert = gr.knm_certify(p, n, m)
        assert cert.holds(p), f"N={n!r}, M={m!r}, kappa={cert.kappa!r}"
        ratio = float(np.max(np.abs(p.coeffs) / cert.weights()))
        assert cert.kappa <= ratio * (1 + 1e-14)
    print("✓ 测试通过！")


def main():
    """运行所有测试"""
    print("开始测试 Grassmann 代数...\n")

    try:
        test_anticommutation()
        test_associativity_integer()
        test_berezin_moments()
        test_weight_sign_hook()
        test_exp_even_and_power()
        test_batched_product()
        test_psi_psi_decomposition()
        test_shift_and_scale()
        test_knm_certificates()
        test_knm_certify_holds_after_rounding()

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
