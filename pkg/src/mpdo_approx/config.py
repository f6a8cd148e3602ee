"""Experiment configuration: a flat ``key = value`` text format.

Lines are ``section.key = value``; ``#`` starts a comment.  Lists are comma
separated.  Every key has a type and a default (see :data:`SCHEMA`); unknown
keys and malformed values are rejected.  :meth:`ExperimentConfig.dumps`
writes every key in schema order, and loading that text gives back an equal
config.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import MPDOError

TASKS = ("scan", "truncate", "compress", "eop", "asymptotics", "bench")
FORMATS = ("csv", "json", "both")


class ConfigError(MPDOError, ValueError):
    pass


# key -> (kind, default); kinds: int, float, str, bool, ints, floats, strs
SCHEMA: dict[str, tuple[str, Any]] = {
    "task": ("str", "compress"),
    "seed": ("int", 0),
    "state.source": ("str", "gibbs"),  # gibbs | test
    "state.model": ("str", "tfim"),
    "state.N": ("int", 6),
    "state.d": ("int", 2),
    "state.beta": ("float", 1.0),
    "state.kind": ("str", "product"),
    "state.seed": ("int", 0),
    "model.J": ("float", 1.0),
    "model.g": ("float", 1.0),
    "model.J_xy": ("float", 1.0),
    "model.J_z": ("float", 1.0),
    "model.h": ("float", 0.0),
    "model.strength": ("float", 1.0),
    "scan.alphas": ("floats", (0.5,)),
    "scan.methods": ("strs", ("canonical-purification",)),
    "scan.restarts": ("int", 8),
    "scan.max_iters": ("int", 300),
    "truncate.alphas": ("floats", (0.2, 0.5)),
    "truncate.dps": ("ints", (1, 2, 4, 8)),
    "compress.dps": ("ints", (1, 2, 4, 8)),
    "compress.mode": ("str", "auerbach"),
    "compress.strategy": ("str", "tree"),
    "compress.alpha": ("float", 0.5),
    "compress.dual_tolerance": ("float", 1e-3),
    "compress.max_iters": ("int", 200),
    "compress.write_mpdo": ("bool", False),
    "eop.alphas": ("floats", (0.5,)),
    "eop.cuts": ("ints", ()),  # empty: every cut
    "eop.restarts": ("int", 8),
    "eop.max_iters": ("int", 300),
    "eop.cap": ("int", 64),
    "asymptotics.c": ("float", 1.0),
    "asymptotics.lambda": ("float", 0.5),
    "asymptotics.kappa": ("float", 5.0),
    "asymptotics.log2n_min": ("int", 4),
    "asymptotics.log2n_max": ("int", 20),
    "bench.sizes": ("ints", (4, 8, 16)),
    "bench.repeats": ("int", 5),
    "output.dir": ("str", "out"),
    "output.format": ("str", "csv"),
    "output.bits": ("bool", False),
    "output.timings": ("bool", True),
    "runtime.threads": ("int", 1),
}

_CHOICES = {
    "task": TASKS,
    "state.source": ("gibbs", "test"),
    "compress.mode": ("auerbach", "hs"),
    "compress.strategy": ("tree", "sequential"),
    "output.format": FORMATS,
}


def _parse(key: str, kind: str, text: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if kind == "str":
            return text
        items = [t.strip() for t in text.split(",") if t.strip()] if text else []
        conv = {"ints": int, "floats": float, "strs": str}[kind]
        return tuple(conv(t) for t in items)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None


def _format(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind in ("ints", "floats", "strs"):
        fmt = repr if kind == "floats" else str
        return ", ".join(fmt(float(v) if kind == "floats" else v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    values: Mapping[str, Any]

    def __post_init__(self):
        merged = {k: d for k, (_, d) in SCHEMA.items()}
        for k, v in dict(self.values).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            kind = SCHEMA[k][0]
            merged[k] = _parse(k, kind, v) if isinstance(v, str) and kind != "str" else _coerce(k, kind, v)
        for k, allowed in _CHOICES.items():
            if merged[k] not in allowed:
                raise ConfigError(f"{k} must be one of {allowed}, got {merged[k]!r}")
        if merged["runtime.threads"] < 1:
            raise ConfigError("runtime.threads must be >= 1")
        object.__setattr__(self, "values", merged)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def replace(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals)

    def with_items(self, items: Mapping[str, Any]) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(items)
        return ExperimentConfig(vals)

    # -- text form -----------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for k, (kind, _) in SCHEMA.items():
            lines.append(f"{k} = {_format(kind, self.values[k])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        vals: dict = {}
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {no}: expected 'key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {no}: unknown config key {key!r}")
            if key in vals:
                raise ConfigError(f"line {no}: duplicate key {key!r}")
            vals[key] = _parse(key, SCHEMA[key][0], val)
        return cls(vals)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def digest(self) -> str:
        """Hash of the canonical text, excluding output-only keys."""
        text = "\n".join(f"{k} = {_format(SCHEMA[k][0], v)}" for k, v in self.values.items()
                         if not k.startswith("output.") and k != "runtime.threads")
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _coerce(key: str, kind: str, value):
    try:
        if kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if isinstance(value, (str, bytes)):
            raise ValueError
        if kind == "ints":
            return tuple(_coerce(key, "int", v) for v in value)
        conv = {"floats": float, "strs": str}[kind]
        return tuple(conv(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid {kind} value {value!r}") from None
