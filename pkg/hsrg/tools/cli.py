#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
hsrg 命令行：RG 流、μ 调参、两点关联函数、数值校验。

子命令：
- flow        迭代 N 个尺度，写 flow.json / flow.csv（未给 flow.mu 时先调参）
- tune        求 μ*(λ)，写 tune.json
- correlator  组装 ⟨φ⁺_x φ⁻_y⟩（--fermion 同时算 ⟨ψ⁺_x ψ⁻_y⟩），写 correlator.csv /
              correlator_plot.csv / correlator.json
- check       局域化、Grassmann 性质、振荡积分交叉校验，写 check.json

退出码：0 正常，1 配置错误，2 流失败，3 校验失败。

示例：
python -m hsrg.tools.cli flow --set flow.lambda=1e-3 --set lattice.N=10 --out out/flow
python -m hsrg.tools.cli correlator --set flow.lambda=0 --set lattice.N=3 --pairs all
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hsrg import grassmann as gr
from hsrg.config import RunConfig, load_config
from hsrg.errors import ConfigError, FlowTooShortError, HsrgError, TuningFailure
from hsrg.lattice import HierLattice, Site
from hsrg.observables import (
    InsertionFlow,
    TwoPointResult,
    fermion_two_point,
    fit_decay_slope,
    susy_localization_check,
    theta_envelope,
    two_point,
)
from hsrg.oscillatory import QuadratureMode, ReducedIntegrand, quartic_decay_scale, integrate
from hsrg.rg_flow import (
    FlowTrace,
    cbar_condition,
    fit_beta_constant,
    fit_lambda_envelope,
    run_flow,
    tune_mu,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FLOW = 2
EXIT_CHECK = 3

# 容差（check 子命令）
LOCALIZATION_TOL = 1e-6
NORMALIZATION_TOL = 1e-6
# SPE(m=2) 误差相对 6λ 的偏差
SPE_LEADING_TOL = 0.05
# 证书比较的浮点余量
CERT_SLACK = 4.0 * np.finfo(float).eps


# ---------- 输出 ----------

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: str, payload: Dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")


def _out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.run.out, exist_ok=True)
    return cfg.run.out


def _mode(cfg: RunConfig) -> QuadratureMode:
    return QuadratureMode(cfg.quad.mode)


# ---------- flow / tune ----------

def _flow_for(cfg: RunConfig) -> Tuple[FlowTrace, Optional[Dict[str, object]]]:
    """给定 μ 直接迭代，否则先调参"""
    L, N, lam = cfg.lattice.L, cfg.lattice.N, cfg.flow.lam
    if cfg.flow.mu is not None:
        return run_flow(lam, cfg.flow.mu, L, N, cfg, _mode(cfg)), None
    result = tune_mu(lam, L, N, cfg, _mode(cfg))
    return result.trace, result.to_dict()


def _flow_summary(trace: FlowTrace, cfg: RunConfig) -> Dict[str, object]:
    K = fit_beta_constant(trace)
    ok = cbar_condition(K, trace.L, cfg.const.cbar)
    if not ok:
        logger.warning("L(Cbar - K) > 4 Cbar / L not met: K=%.3g, Cbar=%.3g, L=%d (needs K < %.3g)",
                       K, cfg.const.cbar, trace.L, cfg.const.cbar * (1.0 - 4.0 / trace.L ** 2))
    e0_drift = max((abs(d.e0_at_zero - 1.0) for d in trace.diagnostics), default=0.0)
    susy = max((max(d.susy_residuals) for d in trace.diagnostics), default=0.0)
    return {
        "survival_depth": trace.survival_depth(),
        "beta_constant": K,
        "cbar_condition": ok,
        "lambda_envelope": fit_lambda_envelope([trace]),
        "max_e0_drift": e0_drift,
        "max_susy_residual": susy,
    }


def cmd_flow(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    trace, tuned = _flow_for(cfg)
    payload = trace.to_json_dict()
    payload["summary"] = _flow_summary(trace, cfg)
    if tuned is not None:
        payload["tune"] = tuned
    write_json(os.path.join(out, "flow.json"), payload)
    write_csv(os.path.join(out, "flow.csv"), FlowTrace.CSV_COLUMNS, trace.csv_rows())
    if not trace.completed:
        print(f"flow stopped at scale {trace.failing_scale} ({trace.termination}): {trace.reason}")
        return EXIT_FLOW
    print(f"flow completed: N={trace.N}, lambda_N={trace.couplings[-1].lam:.6e}")
    return EXIT_OK


def cmd_tune(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    result = tune_mu(cfg.flow.lam, cfg.lattice.L, cfg.lattice.N, cfg, _mode(cfg))
    payload = result.to_dict()
    payload["config"] = cfg.to_flat()
    write_json(os.path.join(out, "tune.json"), payload)
    print(f"mu* = {result.mu_star.real:.17g}{result.mu_star.imag:+.17g}j  depth={result.survival_depth}")
    return EXIT_OK if result.trace.completed else EXIT_FLOW


# ---------- correlator ----------

def parse_pairs(text: str, lattice: HierLattice) -> List[Tuple[Site, Site]]:
    """'x1,y1,z1:x2,y2,z2;…' 或 'all'"""
    text = (text or "all").strip()
    if text.lower() == "all":
        return list(lattice.pairs())
    pairs = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            left, right = item.split(":")
            a = [int(v) for v in left.split(",")]
            b = [int(v) for v in right.split(",")]
            pairs.append((lattice.site(*a), lattice.site(*b)))
        except ValueError as e:
            raise ConfigError(f"bad pair {item!r}: {e}", "--pairs") from e
    if not pairs:
        raise ConfigError("empty pair list", "--pairs")
    return pairs


def cmd_correlator(cfg: RunConfig, pairs_text: str, fermion: bool) -> int:
    out = _out_dir(cfg)
    lattice = HierLattice(cfg.lattice.L, cfg.lattice.N)
    pairs = parse_pairs(pairs_text, lattice)
    trace, _ = _flow_for(cfg)
    bos_flow = InsertionFlow(trace, cfg, "boson", _mode(cfg))
    results = [two_point(x, y, trace, cfg, bos_flow) for x, y in pairs]
    fer_results: List[TwoPointResult] = []
    if fermion:
        fer_flow = InsertionFlow(trace, cfg, "fermion", _mode(cfg))
        fer_results = [fermion_two_point(x, y, trace, cfg, fer_flow) for x, y in pairs]

    header = list(TwoPointResult.CSV_COLUMNS)
    rows = [r.csv_row() for r in results]
    pair_residual = 0.0
    if fermion:
        header += ["fermion_re", "fermion_im", "susy_pair_residual"]
        for row, b, f in zip(rows, results, fer_results):
            res = abs(b.value + f.value)
            pair_residual = max(pair_residual, res)
            row += [f.value.real, f.value.imag, res]
    write_csv(os.path.join(out, "correlator.csv"), header, rows)

    plot_rows = [[math.log(r.d), math.log(abs(r.value)) if abs(r.value) > 0 else float("-inf"),
                  r.theta_certificate] for r in results]
    write_csv(os.path.join(out, "correlator_plot.csv"), ["log_d", "log_abs_value", "theta_certificate"],
              plot_rows)

    slope = fit_decay_slope(results)
    summary = {
        "pairs": len(results),
        "decay_slope": slope,
        "theta": cfg.const.theta,
        "theta_envelope": theta_envelope(results),
        "termination": trace.termination,
    }
    if fermion:
        summary["susy_pair_residual"] = pair_residual
        summary["integration_error"] = max((b.integration_error + f.integration_error
                                            for b, f in zip(results, fer_results)), default=0.0)
    write_json(os.path.join(out, "correlator.json"), {"summary": summary, "config": cfg.to_flat()})
    print(f"{len(results)} pairs, decay slope {slope:.4f}, theta envelope {summary['theta_envelope']:.4g}")
    return EXIT_OK


# ---------- check ----------

def _entry(name: str, value: float, tolerance: float) -> Dict[str, object]:
    return {"name": name, "value": float(value), "tolerance": float(tolerance),
            "margin": float(tolerance - value), "passed": bool(value <= tolerance)}


def _localization_checks(cfg: RunConfig) -> List[Dict[str, object]]:
    settings = cfg.quad_settings()
    tol = cfg.check.tolerance_override or LOCALIZATION_TOL
    decay = quartic_decay_scale(1.0)
    mu = 1e-3
    cases = [
        ("localization exp(-z^2)", lambda z: np.exp(-z * z)),
        ("localization exp(-z^2 - i mu z)", lambda z: np.exp(-z * z - 1j * mu * z)),
    ]
    out = []
    sign = -1 if cfg.check.inject_sign_flip else 1
    with gr.weight_sign(sign):
        for name, g in cases:
            residual = susy_localization_check(g, decay, settings, QuadratureMode.ORACLE)
            out.append(_entry(name, residual, tol))
    return out


def _grassmann_checks(cfg: RunConfig) -> List[Dict[str, object]]:
    rng = np.random.default_rng(cfg.run.seed)
    out = []

    worst = 0.0
    for a in gr.GENERATORS:
        ga = gr.generator(a)
        for b in gr.GENERATORS:
            gb = gr.generator(b)
            worst = max(worst, float(np.max(np.abs((ga * gb + gb * ga).coeffs))))
    out.append(_entry("anticommutation", worst, 0.0))

    worst = 0.0
    for _ in range(cfg.check.samples):
        p, q, r = (gr.random_poly(rng, integer=True) for _ in range(3))
        worst = max(worst, float(np.max(np.abs(((p * q) * r - p * (q * r)).coeffs))))
    out.append(_entry("associativity", worst, 0.0))

    prod = integ = powr = 0.0
    for _ in range(cfg.check.samples):
        p = gr.random_poly(rng, density=0.2, scale=0.5)
        q = gr.random_poly(rng, density=0.2, scale=0.5)
        n1, m1, n2, m2 = rng.uniform(0.2, 1.5, 4)
        c1 = gr.knm_certify(p, n1, m1)
        c2 = gr.knm_certify(q, n2, m2)
        c12 = gr.knm_certify(p * q, n1 + n2, m1 + m2)
        prod = max(prod, c12.kappa / (c1.kappa * c2.kappa) - 1.0 if c1.kappa * c2.kappa else 0.0)

        ci = gr.knm_certify(gr.berezin_fluct_integral(p), n1, 0.0)
        bound = c1.kappa * gr.integration_bound_factor(m1, gr.has_zeta_free_part(p))
        integ = max(integ, ci.kappa / bound - 1.0 if bound else 0.0)

        f = gr.random_poly(rng, density=0.1, scale=0.05, even=True)
        f = f - f.scalar_part
        cf = gr.knm_certify(f, n1, m1)
        k = int(rng.integers(2, 5))
        h = gr.power(1.0 + f, k) - 1.0
        ch = gr.knm_certify(h, n1, m1)
        bound = cf.kappa * gr.power_bound_factor(k, cf.kappa)
        powr = max(powr, ch.kappa / bound - 1.0 if bound else 0.0)
    out.append(_entry("certificate product", prod, CERT_SLACK))
    out.append(_entry("certificate integration", integ, CERT_SLACK))
    out.append(_entry("certificate power", powr, CERT_SLACK))
    return out


def _oscillatory_checks(cfg: RunConfig) -> List[Dict[str, object]]:
    """f_λ = e^{−λ‖ζ‖⁴}：SPE(m=2) 与外推之差不超过余项界加外推误差；λ = 1e-3 时误差应接近 d₂Δ²f(0) = 6λ"""
    settings = cfg.quad_settings()
    out = []
    for lam in (1e-1, 1e-2, 1e-3):
        f = ReducedIntegrand(
            evaluator=lambda r, u, lam=lam: np.exp(-lam * r ** 4) * np.ones_like(u),
            decay_scale=quartic_decay_scale(lam),
            coupling=lam,
        )
        spe = integrate(f, QuadratureMode.SPE, settings, order=2)
        oracle = integrate(f, QuadratureMode.ORACLE, settings)
        diff = float(abs(complex(spe.value) - complex(oracle.value)))
        tol = cfg.check.tolerance_override or (spe.error + oracle.error)
        out.append(_entry(f"spe vs oracle lambda={lam:g}", diff, tol))
        if lam == 1e-3:
            leading = 6.0 * lam
            out.append(_entry("spe leading error lambda=0.001", abs(diff - leading) / leading,
                              cfg.check.tolerance_override or SPE_LEADING_TOL))
    return out


def _normalization_checks(cfg: RunConfig) -> List[Dict[str, object]]:
    N = min(cfg.lattice.N, 2)
    trace = run_flow(cfg.flow.lam, 0j, cfg.lattice.L, N, cfg, _mode(cfg))
    if trace.termination == "failed":
        return [_entry("normalization E0(0)", float("inf"), NORMALIZATION_TOL)]
    drift = max((abs(d.e0_at_zero - 1.0) for d in trace.diagnostics), default=0.0)
    return [_entry("normalization E0(0)", drift, NORMALIZATION_TOL)]


def run_checks(cfg: RunConfig) -> List[Dict[str, object]]:
    checks = []
    checks += _localization_checks(cfg)
    checks += _grassmann_checks(cfg)
    checks += _oscillatory_checks(cfg)
    checks += _normalization_checks(cfg)
    for c in checks:
        level = logging.INFO if c["passed"] else logging.WARNING
        logger.log(level, "check %-36s value=%.3e tol=%.1e", c["name"], c["value"], c["tolerance"])
    return checks


def cmd_check(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    checks = run_checks(cfg)
    passed = all(c["passed"] for c in checks)
    write_json(os.path.join(out, "check.json"), {"passed": passed, "checks": checks, "config": cfg.to_flat()})
    for c in checks:
        mark = "ok  " if c["passed"] else "FAIL"
        print(f"[{mark}] {c['name']:<36} {c['value']:.3e} (tol {c['tolerance']:.1e})")
    return EXIT_OK if passed else EXIT_CHECK


# ---------- 入口 ----------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="配置文件（key = value）")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖配置项，可重复；后者优先")
    common.add_argument("--out", default=None, help="输出目录（等价于 --set run.out=DIR）")
    common.add_argument("--mode", choices=[m.value for m in QuadratureMode], default=None,
                        help="玻色积分方式（等价于 --set quad.mode=MODE）")
    common.add_argument("--log-level", default="INFO", help="日志级别（默认 INFO）")
    common.add_argument("--quiet", action="store_true", help="只输出错误日志")

    ap = argparse.ArgumentParser(prog="hsrg", description="层级超对称模型的 RG 流与关联函数")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("flow", parents=[common], help="迭代 RG 流")
    sub.add_parser("tune", parents=[common], help="调参求 mu*")
    corr = sub.add_parser("correlator", parents=[common], help="两点关联函数")
    corr.add_argument("--pairs", default="all", help="'x1,y1,z1:x2,y2,z2;…' 或 all")
    corr.add_argument("--fermion", action="store_true", help="同时计算费米两点函数")
    sub.add_parser("check", parents=[common], help="数值校验")
    return ap


def _setup_logging(level: str, quiet: bool) -> None:
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format="%(asctime)s - %(levelname)s - %(message)s")
    if quiet:
        logging.getLogger().setLevel(logging.ERROR)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    _setup_logging(args.log_level, args.quiet)

    overrides = list(args.set)
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.mode:
        overrides.append(f"quad.mode={args.mode}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG

    try:
        if args.command == "flow":
            return cmd_flow(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "correlator":
            return cmd_correlator(cfg, args.pairs, args.fermion)
        return cmd_check(cfg)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG
    except (TuningFailure, FlowTooShortError) as e:
        logger.error("%s", e)
        return EXIT_FLOW
    except HsrgError as e:
        logger.error("run failed: %s", e)
        return EXIT_FLOW


if __name__ == "__main__":
    sys.exit(main())
