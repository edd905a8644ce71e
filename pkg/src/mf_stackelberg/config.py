"""Strict JSON run configuration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .assembly import CONVENTIONS
from .model import ModelError, ModelParams, validate_params

SECTIONS: dict[str, dict[str, Any]] = {
    "grid": {"steps": 2400},
    "simulate": {"N": 100, "runs": 200, "seed": 1},
    "converge": {"N_values": [5, 10, 20, 40, 80], "runs_per_N": 100},
    "probe": {"directions": 50, "step": 0.05, "runs": 20},
    "assembly": {"convention": "example"},
}
TOP_LEVEL = ("model", "output_dir", *SECTIONS)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RunConfig:
    model: ModelParams
    steps: int = 2400
    N: int = 100
    runs: int = 200
    seed: int = 1
    N_values: list[int] = field(default_factory=lambda: [5, 10, 20, 40, 80])
    runs_per_N: int = 100
    directions: int = 50
    step: float = 0.05
    probe_runs: int = 20
    convention: str = "example"
    output_dir: str | None = None


def _reject_constant(name: str):
    raise ConfigError(f"non-finite number {name} not allowed")


def _check_finite(node: Any, path: str) -> None:
    if isinstance(node, float) and not math.isfinite(node):
        raise ConfigError(f"non-finite number at {path or '<root>'}")
    if isinstance(node, dict):
        for k, v in node.items():
            _check_finite(v, f"{path}.{k}" if path else k)
    elif isinstance(node, list):
        for i, v in enumerate(node):
            _check_finite(v, f"{path}[{i}]")


def _int(value: Any, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{path} must be at least {minimum}, got {value}")
    return value


def parse_config(text: str) -> RunConfig:
    if not text.strip():
        raise ConfigError("model required")
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_finite(doc, "")
    for key in doc:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown key {key}")
    if "model" not in doc:
        raise ConfigError("model required")

    merged: dict[str, Any] = {}
    for name, defaults in SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name} must be an object")
        for key in section:
            if key not in defaults:
                raise ConfigError(f"unknown key {name}.{key}")
        merged[name] = {**defaults, **section}

    raw_model = doc["model"]
    if not isinstance(raw_model, dict):
        raise ConfigError("section model must be an object")
    try:
        model = validate_params(ModelParams.from_mapping(raw_model))
    except ModelError as exc:
        msg = str(exc)
        if msg.startswith("unknown key "):
            msg = "unknown key model." + msg[len("unknown key "):]
        raise ConfigError(msg) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None

    g, s, c, pr = merged["grid"], merged["simulate"], merged["converge"], merged["probe"]
    N_values = c["N_values"]
    if not isinstance(N_values, list) or not N_values:
        raise ConfigError("converge.N_values must be a nonempty list")
    N_values = [_int(v, f"converge.N_values[{i}]", 1) for i, v in enumerate(N_values)]
    if any(b <= a for a, b in zip(N_values, N_values[1:])):
        raise ConfigError("converge.N_values must be strictly increasing")
    step = pr["step"]
    if isinstance(step, bool) or not isinstance(step, (int, float)) or step < 0:
        raise ConfigError(f"probe.step must be a nonnegative number, got {step!r}")
    q = merged["assembly"]["convention"]
    if q not in CONVENTIONS:
        raise ConfigError(f"assembly.convention must be one of {', '.join(CONVENTIONS)}; got {q!r}")
    out = doc.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir must be a string")

    return RunConfig(
        model=model,
        steps=_int(g["steps"], "grid.steps", 2),
        N=_int(s["N"], "simulate.N", 1),
        runs=_int(s["runs"], "simulate.runs", 1),
        seed=_int(s["seed"], "simulate.seed", 0),
        N_values=N_values,
        runs_per_N=_int(c["runs_per_N"], "converge.runs_per_N", 1),
        directions=_int(pr["directions"], "probe.directions", 1),
        step=float(step),
        probe_runs=_int(pr["runs"], "probe.runs", 1),
        convention=q,
        output_dir=out,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def bundled_config_text(name: str = "example51.json") -> str:
    return resources.files("mf_stackelberg").joinpath("configs", name).read_text(encoding="utf-8")
