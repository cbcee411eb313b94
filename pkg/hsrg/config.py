# -*- coding: utf-8 -*-
"""运行配置

格式：扁平 ``key = value`` 文本，``#`` 开头为注释，键按模块命名空间划分
（``lattice.L``、``flow.lambda``、``quad.mode`` ...）。命令行 ``--set KEY=VALUE``
覆盖文件值，后者优先。

每个命名空间对应一个 dataclass；RunConfig.to_flat() 给出完整解析后的键值表，
所有输出文件都嵌入它，RunConfig.from_flat() 可以原样复现。

环境变量：
- HSRG_THREADS: 径向并行线程数（0 或未设置 = os.cpu_count()）
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Iterable, Optional, Tuple

from hsrg.errors import ConfigError

DEFAULT_EPS_SCHEDULE: Tuple[float, ...] = tuple(0.5 * 2.0 ** -k for k in range(11))


def _key(name: str, kind: Optional[str] = None) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"key": name}
    if kind:
        meta["kind"] = kind
    return meta


@dataclass(frozen=True)
class LatticeConfig:
    L: int = field(default=2, metadata=_key("L"))
    N: int = field(default=4, metadata=_key("N"))
    a_convention: str = field(default="parity_x1", metadata=_key("a_convention"))

    def validate(self) -> None:
        if self.L < 2 or self.L % 2:
            raise ConfigError("L must be an even integer >= 2", "lattice.L")
        if self.N < 1:
            raise ConfigError("N must be >= 1", "lattice.N")
        if self.a_convention != "parity_x1":
            raise ConfigError("only the parity_x1 sign convention is available", "lattice.a_convention")


@dataclass(frozen=True)
class FlowConfig:
    lam: float = field(default=1e-3, metadata=_key("lambda"))
    mu: Optional[complex] = field(default=None, metadata=_key("mu", "complex?"))
    beta4_convention: str = field(default="printed", metadata=_key("beta4_convention"))
    drift_tol: float = field(default=1e-4, metadata=_key("drift_tol"))
    certificates: bool = field(default=True, metadata=_key("certificates"))

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0", "flow.lambda")
        if self.beta4_convention not in ("exact", "printed"):
            raise ConfigError("expected 'exact' or 'printed'", "flow.beta4_convention")
        if self.drift_tol <= 0:
            raise ConfigError("must be positive", "flow.drift_tol")


@dataclass(frozen=True)
class GridConfig:
    elements: int = field(default=4, metadata=_key("elements"))
    nodes: int = field(default=24, metadata=_key("nodes"))
    rho: float = field(default=3.0, metadata=_key("rho"))
    margin: float = field(default=1.1, metadata=_key("margin"))
    taylor_points: int = field(default=8, metadata=_key("taylor_points"))
    taylor_width: float = field(default=0.02, metadata=_key("taylor_width"))
    taylor_degree: int = field(default=5, metadata=_key("taylor_degree"))

    def validate(self) -> None:
        if self.elements < 1 or self.nodes < 4:
            raise ConfigError("need >= 1 element and >= 4 nodes", "grid.nodes")
        if self.rho <= 0 or self.margin < 1.0:
            raise ConfigError("rho > 0 and margin >= 1 required", "grid.rho")
        if not 3 <= self.taylor_degree < self.taylor_points:
            raise ConfigError("need 3 <= taylor_degree < taylor_points", "grid.taylor_degree")
        if self.taylor_width <= 0:
            raise ConfigError("must be positive", "grid.taylor_width")


@dataclass(frozen=True)
class QuadConfig:
    mode: str = field(default="spe", metadata=_key("mode"))
    order: int = field(default=2, metadata=_key("order"))
    insertion_order: int = field(default=1, metadata=_key("insertion_order"))
    eps_schedule: Tuple[float, ...] = field(default=DEFAULT_EPS_SCHEDULE, metadata=_key("eps_schedule", "floats"))
    richardson_order: int = field(default=3, metadata=_key("richardson_order"))
    angular_order: int = field(default=12, metadata=_key("angular_order"))
    angular_max: int = field(default=415, metadata=_key("angular_max"))
    panel_nodes: int = field(default=16, metadata=_key("panel_nodes"))
    reference_nodes: int = field(default=128, metadata=_key("reference_nodes"))
    max_panel_width: float = field(default=64.0, metadata=_key("max_panel_width"))
    max_doublings: int = field(default=10, metadata=_key("max_doublings"))
    tol: float = field(default=1e-13, metadata=_key("tol"))
    tail_tol: float = field(default=1e-10, metadata=_key("tail_tol"))
    tail_extensions: int = field(default=3, metadata=_key("tail_extensions"))
    truncation: float = field(default=53.0, metadata=_key("truncation"))
    stencil_points: int = field(default=8, metadata=_key("stencil_points"))
    stencil_r0: float = field(default=1e-2, metadata=_key("stencil_r0"))
    stencil_cond_max: float = field(default=1e12, metadata=_key("stencil_cond_max"))
    # W = |λ|^{−1/4+spe_eps}；remainder_constant 由 RunConfig.quad_settings() 从 const.k_remainder 同步
    spe_eps: float = field(default=0.0, metadata=_key("spe_eps"))
    remainder_constant: float = field(default=4.0, metadata=_key("remainder_constant"))

    def validate(self) -> None:
        if self.mode not in ("spe", "oracle", "direct"):
            raise ConfigError("expected spe, oracle or direct", "quad.mode")
        if self.order < 1 or self.insertion_order < 1:
            raise ConfigError("expansion order must be >= 1", "quad.order")
        sched = self.eps_schedule
        if len(sched) < self.richardson_order + 1 or any(e <= 0 for e in sched):
            raise ConfigError("need richardson_order+1 positive values", "quad.eps_schedule")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("schedule must be strictly decreasing", "quad.eps_schedule")
        if self.angular_order < 1 or self.angular_max < self.angular_order:
            raise ConfigError("invalid angular orders", "quad.angular_order")
        if self.panel_nodes < 4 or self.reference_nodes < 2 * self.panel_nodes:
            raise ConfigError("invalid radial node counts", "quad.panel_nodes")
        if self.stencil_points < 3:
            raise ConfigError("need >= 3 stencil radii", "quad.stencil_points")
        if self.tail_extensions < 0:
            raise ConfigError("must be >= 0", "quad.tail_extensions")
        if not 0.0 <= self.spe_eps < 0.25:
            raise ConfigError("need 0 <= spe_eps < 1/4", "quad.spe_eps")


@dataclass(frozen=True)
class ConstConfig:
    eps: float = field(default=0.1, metadata=_key("eps"))
    theta: float = field(default=0.4, metadata=_key("theta"))
    delta: float = field(default=math.exp(-1.0 / 8.0), metadata=_key("delta"))
    cbar: float = field(default=16.0, metadata=_key("cbar"))
    c_growth: float = field(default=1.0, metadata=_key("c_growth"))
    k_remainder: float = field(default=4.0, metadata=_key("k_remainder"))

    def validate(self) -> None:
        if not 0.0 < self.eps < 0.25:
            raise ConfigError("need 0 < eps < 1/4", "const.eps")
        if not 0.0 < self.theta < 0.5:
            raise ConfigError("need 0 < theta < 1/2", "const.theta")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("need 0 < delta < 1", "const.delta")
        if self.cbar <= 0 or self.c_growth < 0 or self.k_remainder <= 0:
            raise ConfigError("constants must be positive", "const.cbar")


@dataclass(frozen=True)
class TuneConfig:
    grid: int = field(default=3, metadata=_key("grid"))
    secant_tol: float = field(default=1e-6, metadata=_key("secant_tol"))
    max_iter: int = field(default=8, metadata=_key("max_iter"))

    def validate(self) -> None:
        if self.grid < 2:
            raise ConfigError("grid must be >= 2", "tune.grid")
        if self.secant_tol <= 0 or self.max_iter < 1:
            raise ConfigError("invalid secant settings", "tune.secant_tol")


@dataclass(frozen=True)
class CheckConfig:
    tolerance_override: float = field(default=0.0, metadata=_key("tolerance_override"))
    inject_sign_flip: bool = field(default=False, metadata=_key("inject_sign_flip"))
    samples: int = field(default=1000, metadata=_key("samples"))

    def validate(self) -> None:
        if self.tolerance_override < 0:
            raise ConfigError("must be >= 0", "check.tolerance_override")
        if self.samples < 1:
            raise ConfigError("must be >= 1", "check.samples")


@dataclass(frozen=True)
class RunSection:
    seed: int = field(default=1234, metadata=_key("seed"))
    out: str = field(default="out", metadata=_key("out"))


_SECTIONS = ("lattice", "flow", "grid", "quad", "const", "tune", "check", "run")


@dataclass(frozen=True)
class RunConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    const: ConstConfig = field(default_factory=ConstConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    check: CheckConfig = field(default_factory=CheckConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        for name in _SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def quad_settings(self) -> QuadConfig:
        """求积参数，SPE 余项常数取自 const 段"""
        return replace(self.quad, remainder_constant=self.const.k_remainder)

    def with_overrides(self, pairs: Iterable[Tuple[str, str]]) -> "RunConfig":
        flat = self.to_flat()
        for key, value in pairs:
            if key not in flat:
                raise ConfigError("unknown key", key)
            flat[key] = value
        return RunConfig.from_flat(flat)

    # ---------- 扁平键值 ----------

    def to_flat(self) -> Dict[str, str]:
        out: Dict[str, str] = {}
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                out[f"{name}.{f.metadata['key']}"] = _format_value(getattr(section, f.name))
        return out

    @classmethod
    def from_flat(cls, flat: Dict[str, str]) -> "RunConfig":
        base = cls()
        kwargs = {}
        seen = set()
        for name in _SECTIONS:
            section = getattr(base, name)
            values = {}
            for f in fields(section):
                key = f"{name}.{f.metadata['key']}"
                if key in flat:
                    seen.add(key)
                    values[f.name] = _parse_value(flat[key], getattr(section, f.name), f.metadata.get("kind"), key)
            kwargs[name] = replace(section, **values)
        unknown = sorted(set(flat) - seen)
        if unknown:
            raise ConfigError("unknown key", unknown[0])
        return cls(**kwargs).validate()


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, complex):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str, default: Any, kind: Optional[str], key: str) -> Any:
    text = str(text).strip()
    try:
        if kind == "complex?":
            if text.lower() in ("", "none", "tune"):
                return None
            return parse_complex(text)
        if kind == "floats":
            values = tuple(float(v) for v in text.split(",") if v.strip())
            if not values:
                raise ValueError("empty list")
            return values
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(str(e), key) from e


def parse_complex(text: str) -> complex:
    """解析复数：'1e-3+2e-4j'、'(1e-3+0j)' 或 're,im'"""
    text = text.strip()
    if "," in text:
        re_part, im_part = text.split(",", 1)
        return complex(float(re_part), float(im_part))
    return complex(text.replace(" ", ""))


def parse_config_text(text: str) -> Dict[str, str]:
    """解析 key = value 文本为扁平字典"""
    flat: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def parse_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """读取配置文件（可选）并应用覆盖项"""
    flat = RunConfig().to_flat()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for key, value in parse_config_text(text).items():
            if key not in flat:
                raise ConfigError("unknown key", key)
            flat[key] = value
    for item in overrides:
        key, value = parse_override(item)
        if key not in flat:
            raise ConfigError("unknown key", key)
        flat[key] = value
    return RunConfig.from_flat(flat)


def thread_count() -> int:
    """HSRG_THREADS，0 或未设置时取 CPU 数"""
    raw = os.environ.get("HSRG_THREADS", "").strip()
    try:
        n = int(raw) if raw else 0
    except ValueError:
        raise ConfigError(f"HSRG_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError("HSRG_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)
