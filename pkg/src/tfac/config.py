"""Run configuration: ``key = value`` files, presets and validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

__all__ = ["ConfigError", "RunConfig", "PRESETS", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    pass


def _float(v: str) -> float:
    v = v.strip().lower()
    env = {"pi": math.pi}
    try:
        return float(v)
    except ValueError:
        pass
    # tiny expression support for things like 1/(8*pi^2) or -pi
    if not set(v) <= set("0123456789.e+-*/()^ pi"):
        raise ConfigError(f"not a number: {v!r}")
    try:
        return float(eval(v.replace("^", "**"), {"__builtins__": {}}, env))  # noqa: S307
    except Exception as exc:
        raise ConfigError(f"not a number: {v!r}") from exc


def _floats(v: str) -> list[float]:
    return [_float(x) for x in v.replace(";", ",").split(",") if x.strip()]


def _ints(v: str) -> list[int]:
    return [int(x) for x in v.replace(";", ",").split(",") if x.strip()]


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _choice(*opts: str) -> Callable[[str], str]:
    def parse(v: str) -> str:
        v = v.strip()
        if v not in opts:
            raise ConfigError(f"expected one of {opts}, got {v!r}")
        return v

    return parse


KEYS: dict[str, Callable[[str], Any]] = {
    "experiment": str,
    "alpha": _float,
    "sigma": _float,
    "epsilon2": _float,
    "scheme": _choice("backward-euler", "stabilized"),
    "S": _float,
    "picard_tol": _float,
    "picard_max_iter": int,
    "soe_eps": _float,
    "solver": _choice("fft", "cg"),
    "grid.M": int,
    "domain": _floats,
    "initial": _choice("bubbles", "zero"),
    "T": _float,
    "Ns": _ints,
    "gammas": _floats,
    "mesh.kind": _choice("graded", "graded+random", "graded+adaptive"),
    "mesh.T0": _float,
    "mesh.N0": int,
    "mesh.gamma": _float,
    "mesh.N1": int,
    "mesh.seed": int,
    "adapt.tol": _float,
    "adapt.beta": _float,
    "adapt.tau_min": _float,
    "adapt.tau_max": _float,
    "adapt.reject": _bool,
    "out_dir": str,
    "snapshot_times": _floats,
    "soe.dt": _float,
    "check.eps": _float,
    "check.N": int,
    "fit.t_lo": _float,
    "fit.decades": _float,
}

_MMS = {
    "alpha": 0.8,
    "epsilon2": 1.0 / (8.0 * math.pi**2),
    "grid.M": 256,
    "domain": [0.0, 1.0, 0.0, 1.0],
    "initial": "zero",
    "T": 1.0,
    "Ns": [64, 128, 256, 512],
    "mesh.kind": "graded+random",
    "mesh.seed": 42,
    "picard_tol": 1e-12,
    "soe_eps": 1e-12,
}

_BUBBLES = {
    "alpha": 0.7,
    "epsilon2": 0.01,
    "scheme": "backward-euler",
    "S": 0.0,
    "grid.M": 128,
    "domain": [-math.pi, math.pi, -math.pi, math.pi],
    "initial": "bubbles",
    "T": 100.0,
    "mesh.kind": "graded+adaptive",
    "mesh.T0": 0.1,
    "mesh.N0": 300,
    "mesh.gamma": 3.0,
    "adapt.tol": 0.15,
    "adapt.beta": 200.0,
    "adapt.tau_min": 1e-3,
    "adapt.tau_max": 0.1,
    "snapshot_times": [0.0, 1.0, 10.0, 50.0, 100.0],
    "picard_tol": 1e-12,
    "soe_eps": 1e-12,
}

PRESETS: dict[str, dict[str, Any]] = {
    "table1": {**_MMS, "scheme": "backward-euler", "sigma": 0.8, "gammas": [1.25, 1.5, 2.0]},
    "table2": {**_MMS, "scheme": "backward-euler", "sigma": 0.4, "gammas": [2.0, 3.0, 4.0]},
    "table3": {**_MMS, "scheme": "stabilized", "S": 0.1, "sigma": 0.8, "gammas": [1.0, 1.25, 2.0]},
    "table4": {**_MMS, "scheme": "stabilized", "S": 0.1, "sigma": 0.4, "gammas": [2.0, 2.5, 3.0]},
    "bubbles": dict(_BUBBLES),
    "bubbles-stabilized": {
        **_BUBBLES,
        "scheme": "stabilized",
        "S": 0.1,
        "adapt.tol": 1.5,
        "adapt.tau_max": 1.0,
    },
    # u_t ~ t^(alpha-1) near t = 0 on t_k = (k/N)^gamma
    "fig1": {
        **_BUBBLES,
        "T": 1.0,
        "mesh.kind": "graded",
        "mesh.T0": 1.0,
        "mesh.N0": 1000,
        "mesh.gamma": 3.0,
        "snapshot_times": [],
        "fit.t_lo": 1e-6,
        "fit.decades": 1.0,
    },
    "kernels": {"alpha": 0.5, "soe_eps": 1e-12, "soe.dt": 1e-6, "check.N": 128, "mesh.seed": 42, "T": 1.0},
}

REQUIRED = {
    "convergence": ["alpha", "sigma", "epsilon2", "scheme", "grid.M", "T", "Ns", "gammas", "mesh.seed"],
    "bubbles": ["alpha", "epsilon2", "scheme", "grid.M", "domain", "T", "mesh.kind", "mesh.T0", "mesh.N0",
                "mesh.gamma"],
    "singularity": ["alpha", "epsilon2", "scheme", "grid.M", "domain", "T", "mesh.kind", "mesh.T0",
                    "mesh.N0", "mesh.gamma"],
    "kernel-check": ["alpha", "soe_eps", "check.N", "mesh.seed", "T"],
    "soe-table": ["alpha", "soe_eps", "soe.dt", "T"],
}

DEFAULT_PRESET = {
    "convergence": "table1",
    "bubbles": "bubbles",
    "singularity": "fig1",
    "kernel-check": "kernels",
    "soe-table": "kernels",
}


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, val)
    return out


def parse_value(key: str, val: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return KEYS[key](val)
    except ConfigError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text())


@dataclass
class RunConfig:
    """Resolved configuration: preset <- file <- overrides."""

    command: str
    values: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def resolve(cls, command: str, file_values: Mapping[str, Any] | None = None,
                overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        file_values = dict(file_values or {})
        overrides = dict(overrides or {})
        preset = overrides.get("experiment") or file_values.get("experiment") or DEFAULT_PRESET[command]
        if preset not in PRESETS:
            raise ConfigError(f"unknown experiment preset {preset!r}; known: {sorted(PRESETS)}")
        values = {**PRESETS[preset], **file_values, **overrides, "experiment": preset}
        for k in values:
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
        missing = [k for k in REQUIRED[command] if k not in values]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join(missing)}")
        return cls(command, values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def header(self) -> str:
        """Comment block echoing every resolved key (sorted)."""
        lines = [f"# command = {self.command}"]
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            else:
                v = repr(v) if isinstance(v, float) else v
            lines.append(f"# {k} = {v}")
        return "\n".join(lines) + "\n"
