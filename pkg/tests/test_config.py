#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试运行配置

验证要点：
1. 默认值与扁平键值往返
2. 配置文件 + --set 覆盖（后者优先）
3. 校验失败时 ConfigError 指明出错的键
4. HSRG_THREADS 环境变量
"""

import sys
import os

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math
import tempfile

import pytest

from hsrg.config import RunConfig, load_config, parse_complex, parse_config_text, thread_count
from hsrg.errors import ConfigError


def test_defaults_and_round_trip():
    """to_flat -> from_flat 复现同一配置"""
    print("=" * 60)
    print("测试1: 默认值与往返")
    print("=" * 60)

    cfg = RunConfig()
    assert cfg.lattice.L == 2 and cfg.lattice.N == 4
    assert cfg.flow.lam == 1e-3 and cfg.flow.mu is None
    assert cfg.quad.mode == "spe" and cfg.quad.order == 2
    assert cfg.flow.beta4_convention == "printed"
    assert (cfg.tune.grid, cfg.tune.secant_tol, cfg.tune.max_iter) == (3, 1e-6, 8)
    assert cfg.const.delta == pytest.approx(math.exp(-1.0 / 8.0))
    assert len(cfg.quad.eps_schedule) == 11

    flat = cfg.to_flat()
    assert flat["flow.lambda"] == "0.001"
    assert flat["flow.mu"] == "none"
    again = RunConfig.from_flat(flat)
    assert again == cfg

    tuned = cfg.with_overrides([("flow.mu", "1e-3+2e-4j"), ("flow.certificates", "false")])
    assert tuned.flow.mu == complex(1e-3, 2e-4)
    assert tuned.flow.certificates is False
    assert RunConfig.from_flat(tuned.to_flat()) == tuned
    print("✓ 测试通过！")


def test_quad_settings_sync():
    """余项常数取自 const.k_remainder；W 的指数 spe_eps 独立于小场区指数 const.eps"""
    print("=" * 60)
    print("测试2: 求积参数同步")
    print("=" * 60)

    q = RunConfig().quad_settings()
    assert q.spe_eps == 0.0 and q.remainder_constant == 4.0

    cfg = RunConfig().with_overrides([("const.eps", "0.05"), ("const.k_remainder", "3.5")])
    q = cfg.quad_settings()
    assert q.spe_eps == 0.0 and q.remainder_constant == 3.5
    q = cfg.with_overrides([("quad.spe_eps", "0.1")]).quad_settings()
    assert q.spe_eps == 0.1
    print("✓ 测试通过！")


def test_load_with_overrides():
    """文件值被 --set 覆盖，注释与空行被忽略"""
    print("=" * 60)
    print("测试3: 文件与覆盖")
    print("=" * 60)

    text = "# desk run\nlattice.N = 3\nflow.lambda = 1e-2   # quartic\n\nquad.mode = oracle\n"
    assert parse_config_text(text)["flow.lambda"] == "1e-2"
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.cfg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        cfg = load_config(path, ["lattice.N=5", "lattice.N=6"])
    assert cfg.lattice.N == 6
    assert cfg.flow.lam == 1e-2
    assert cfg.quad.mode == "oracle"

    with pytest.raises(ConfigError):
        load_config(os.path.join("/nonexistent", "missing.cfg"))
    print("✓ 测试通过！")


def test_validation_errors():
    """ConfigError 携带键名"""
    print("=" * 60)
    print("测试4: 校验")
    print("=" * 60)

    cases = [
        ("lattice.L=3", "lattice.L"),
        ("flow.lambda=-1", "flow.lambda"),
        ("const.eps=0.3", "const.eps"),
        ("const.theta=0.5", "const.theta"),
        ("quad.mode=simpson", "quad.mode"),
        ("quad.spe_eps=0.3", "quad.spe_eps"),
        ("quad.tail_extensions=-1", "quad.tail_extensions"),
        ("lattice.N=many", "lattice.N"),
        ("no.such=1", "no.such"),
    ]
    for item, key in cases:
        with pytest.raises(ConfigError) as info:
            load_config(None, [item])
        assert info.value.key == key, f"{item}: {info.value.key}"

    with pytest.raises(ConfigError):
        load_config(None, ["lattice.N"])
    with pytest.raises(ConfigError):
        parse_config_text("just a line")
    print("✓ 测试通过！")


def test_parse_complex():
    """三种复数写法"""
    print("=" * 60)
    print("测试5: 复数解析")
    print("=" * 60)

    assert parse_complex("1e-3+2e-4j") == complex(1e-3, 2e-4)
    assert parse_complex("(1e-3+0j)") == complex(1e-3, 0)
    assert parse_complex("0.5, -0.25") == complex(0.5, -0.25)
    print("✓ 测试通过！")


def test_thread_count_env():
    """HSRG_THREADS：0 为自动，负数或非整数报错"""
    print("=" * 60)
    print("测试6: 线程数")
    print("=" * 60)

    old = os.environ.get("HSRG_THREADS")
    try:
        os.environ["HSRG_THREADS"] = "3"
        assert thread_count() == 3
        os.environ["HSRG_THREADS"] = "0"
        assert thread_count() >= 1
        os.environ["HSRG_THREADS"] = "-1"
        with pytest.raises(ConfigError):
            thread_count()
        os.environ["HSRG_THREADS"] = "four"
        with pytest.raises(ConfigError):
            thread_count()
    finally:
        if old is None:
            os.environ.pop("HSRG_THREADS", None)
        else:
            os.environ["HSRG_THREADS"] = old
    print("✓ 测试通过！")


def main():
    """运行所有测试"""
    print("开始测试运行配置...\n")

    try:
        test_defaults_and_round_trip()
        test_quad_settings_sync()
        test_load_with_overrides()
        test_validation_errors()
        test_parse_complex()
        test_thread_count_env()

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
