"""Flat ``key = value`` run configuration.

Keys carry a section prefix (``data.``, ``model.``, ``train.``, ``bound.``,
``sweep.``, ``verify.``); ``seed`` and ``out`` are top level. Unknown keys are
rejected. A mixture can be written inline through ``data.mixture.*`` keys
(see :func:`lsibound.distributions.mixture_to_config`).
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import ConfigError

# key -> (type, default)
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "out": ("str", "results"),
    "data.source": ("str", "synthetic"),
    "data.classes": ("int", 10),
    "data.dim": ("int", 20),
    "data.separation": ("float", 3.0),
    "data.std": ("float", 1.0),
    "data.n_train": ("int", 1000),
    "data.n_test": ("int", 4096),
    "data.images": ("str", ""),
    "data.labels": ("str", ""),
    "data.test_images": ("str", ""),
    "data.test_labels": ("str", ""),
    "data.csv": ("str", ""),
    "data.test_csv": ("str", ""),
    "data.sigma_y": ("str", "auto"),
    "model.arch": ("str", "mlp"),
    "model.depth": ("int", 3),
    "model.width": ("int", 0),
    "model.param_budget": ("int", 0),
    "model.input_shape": ("str", ""),
    "model.channels": ("int", 4),
    "model.kernel": ("int", 3),
    "model.hidden": ("int", 32),
    "model.checkpoint": ("str", ""),
    "train.learning_rate": ("float", 0.01),
    "train.momentum": ("float", 0.9),
    "train.batch_size": ("int", 128),
    "train.epochs": ("int", 50),
    "train.loss": ("str", "nll"),
    "bound.theorem": ("str", "perw"),
    "bound.lambda": ("str", "m"),
    "bound.delta": ("float", 0.01),
    "bound.prior_var": ("float", 0.01),
    "bound.b": ("str", ""),
    "bound.g": ("str", ""),
    "bound.lipschitz": ("str", ""),
    "bound.n_prior": ("int", 64),
    "bound.n_data": ("int", 4096),
    "bound.n_posterior": ("int", 32),
    "bound.posterior_var_ratio": ("float", 0.01),
    "bound.baseline_B": ("str", "max"),
    "bound.workers": ("int", 1),
    "sweep.kind": ("str", "lambda"),
    "sweep.lambdas": ("str", "sqrt(m),m/4,m/2,m"),
    "sweep.depths": ("str", "1,2,3"),
    "sweep.prior_vars": ("str", "0,0.0001,0.001,0.01,0.1"),
    "sweep.plot": ("bool", True),
    "verify.n": ("int", 1_000_000),
    "verify.grid_points": ("int", 256),
}

MIXTURE_KEY = re.compile(r"^data\.mixture\.(marginals|mean\.\d+|var\.\d+)$")


def _convert(key: str, kind: str, raw) -> object:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return text


class RunConfig(Mapping):
    """Resolved configuration: schema defaults overlaid by file entries and overrides."""

    def __init__(self, entries: Mapping[str, object] | None = None):
        values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, raw in (entries or {}).items():
            if key in SCHEMA:
                values[key] = _convert(key, SCHEMA[key][0], raw)
            elif MIXTURE_KEY.match(key):
                values[key] = str(raw).strip()
            else:
                raise ConfigError(f"unknown config key {key!r}")
        self._values = values
        self._validate()

    def _validate(self) -> None:
        v = self._values
        sources = {"synthetic", "idx", "csv"}
        if v["data.source"] not in sources:
            raise ConfigError(f"data.source must be one of {sorted(sources)}")
        if v["data.source"] == "idx" and not (v["data.images"] and v["data.labels"]):
            raise ConfigError("idx source needs data.images and data.labels")
        if v["data.source"] == "csv" and not v["data.csv"]:
            raise ConfigError("csv source needs data.csv")
        if v["data.source"] == "synthetic" and (v["data.images"] or v["data.csv"]):
            raise ConfigError("exactly one data source: synthetic data cannot also name files")
        if v["model.arch"] not in ("linear", "mlp", "cnn"):
            raise ConfigError("model.arch must be linear, mlp or cnn")
        if v["bound.theorem"] not in ("linear", "onaverage", "perw"):
            raise ConfigError("bound.theorem must be linear, onaverage or perw")
        if v["bound.baseline_B"] not in ("max", "mean"):
            raise ConfigError("bound.baseline_B must be max or mean")
        if v["sweep.kind"] not in ("lambda", "depth", "prior", "figures"):
            raise ConfigError("sweep.kind must be lambda, depth, prior or figures")
        if v["seed"] < 0:
            raise ConfigError("seed must be non-negative")

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def with_overrides(self, entries: Mapping[str, object]) -> "RunConfig":
        merged = {k: v for k, v in self._values.items()}
        merged.update(entries)
        return RunConfig(merged)

    def mixture_entries(self) -> dict[str, str]:
        return {k: v for k, v in self._values.items() if k.startswith("data.mixture.")}

    def canonical(self) -> dict:
        return {k: self._values[k] for k in sorted(self._values)}

    def config_hash(self) -> str:
        """SHA-256 of the canonical (key-sorted) JSON encoding."""
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: Iterable[str] = (), **extra) -> RunConfig:
    entries: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        entries.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    entries.update(parse_overrides(overrides))
    entries.update({k: v for k, v in extra.items() if v is not None})
    return RunConfig(entries)


def dump_config(entries: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in entries.items())


_LAMBDA = re.compile(r"^\s*(?:(?P<coef>[0-9.eE+-]+)\s*\*\s*)?(?P<base>m|sqrt\(m\)|max)(?:\s*/\s*(?P<div>[0-9.eE+-]+))?\s*$")


def resolve_lambda(expr: str, m: int, lam_max: float | None = None) -> float:
    """Evaluate a lambda spec: a number, or ``[c*](m | sqrt(m) | max)[/q]``."""
    text = str(expr).strip()
    try:
        return float(text)
    except ValueError:
        pass
    match = _LAMBDA.match(text)
    if not match:
        raise ConfigError(f"cannot parse lambda expression {expr!r}")
    base = match["base"]
    if base == "m":
        value = float(m)
    elif base == "sqrt(m)":
        value = math.sqrt(m)
    else:
        if lam_max is None:
            raise ConfigError("'max' lambda is only defined for the linear bound")
        value = lam_max
    if match["coef"]:
        value *= float(match["coef"])
    if match["div"]:
        value /= float(match["div"])
    return value


def parse_list(text: str, kind=float) -> list:
    try:
        return [kind(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None
