"""Strict ``key = value`` configuration files.

::

    # comment
    [plane]
    k = 1000          # same as writing plane.k = 1000 at top level
    [train]
    lr = 1e-4

Keys are ``section.name``; a ``[section]`` header prefixes the keys after it.
Unknown keys, malformed lines and ill-typed or out-of-range values are
errors that name the key and line. Values are plain literals: numbers,
``true``/``false``, bare words, or comma-separated lists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ConfigTypeError, IoFailure, UnknownKey


@dataclass(frozen=True)
class Field:
    kind: type  # int, float, bool, str, or tuple (list of floats)
    default: object
    help: str
    check: object = None  # callable(value) -> bool
    expect: str = ""


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _in(*options):
    return lambda v: v in options


FIELDS: dict[str, Field] = {
    "subject.id": Field(str, "1", "subject identifier"),
    "subject.mass": Field(float, 74.3, "body mass in kg", lambda v: 20 <= v <= 250, "in [20, 250]"),
    "subject.height": Field(float, 177.0, "body height in cm",
                            lambda v: 100 <= v <= 230, "in [100, 230]"),
    "subject.gender": Field(str, "male", "metadata only"),
    "skeleton.kind": Field(str, "coco17", "coco17 or body25", _in("coco17", "body25"),
                           "coco17 or body25"),
    "motion.template": Field(str, "stand_sway", "motion template name"),
    "motion.duration": Field(float, 10.0, "seconds", _positive, "> 0"),
    "motion.fps": Field(float, 30.0, "pose frames per second", _positive, "> 0"),
    "motion.noise": Field(float, 0.005, "noise amplitude in metres", _non_negative, ">= 0"),
    "plane.k": Field(float, 1.0e3, "spring stiffness per cell, N/m", _positive, "> 0"),
    "plane.d_max": Field(float, 10.0, "penetration (mm) rendered as 255", _positive, "> 0"),
    "pressure.fps": Field(float, 10.0, "pressure frames per second", _positive, "> 0"),
    "pressure.jitter": Field(float, 0.004, "timestamp jitter (s) of the pressure stream",
                             _non_negative, ">= 0"),
    "align.tolerance": Field(float, 0.075, "seconds", _positive, "> 0"),
    "window.width": Field(int, 10, "frames per window", _positive, "> 0"),
    "split.ratios": Field(tuple, (0.8, 0.1, 0.1), "train, val, test fractions"),
    "split.guard": Field(bool, True, "drop training windows adjacent to held-out ones"),
    "train.lr": Field(float, 1e-4, "Adam learning rate", _non_negative, ">= 0"),
    "train.batch_size": Field(int, 128, "mini-batch size", _positive, ">= 1"),
    "train.epochs": Field(int, 10, "epochs per network", _non_negative, ">= 0"),
    "train.epochs_tpn": Field(int, 0, "override epochs for TPN (0 = train.epochs)",
                              _non_negative, ">= 0"),
    "train.epochs_tdn": Field(int, 0, "override epochs for TDN (0 = train.epochs)",
                              _non_negative, ">= 0"),
    "train.epochs_psn": Field(int, 0, "override epochs for PSN (0 = train.epochs)",
                              _non_negative, ">= 0"),
    "train.epochs_baseline": Field(int, 0, "override epochs for BASELINE (0 = train.epochs)",
                                   _non_negative, ">= 0"),
    "train.loss_mode": Field(str, "mse", "mse or eq4_literal", _in("mse", "eq4_literal"),
                             "mse or eq4_literal"),
    "train.alpha": Field(float, 1.0, "initial fusion weight alpha", _non_negative, ">= 0"),
    "train.beta": Field(float, 1.0, "initial fusion weight beta", _non_negative, ">= 0"),
    "seed": Field(int, 0, "master seed", _non_negative, ">= 0"),
    "precision": Field(str, "f32", "f32 or f64", _in("f32", "f64"), "f32 or f64"),
    "paths.out": Field(str, "out", "output directory"),
}


class Config(dict):
    """Fully defaulted mapping of dotted key to typed value."""

    def __getattr__(self, name):
        # cfg.plane.k style access is not needed; keep attribute access for flat keys.
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.items() if k.startswith(p)}


def defaults() -> Config:
    return Config({k: f.default for k, f in FIELDS.items()})


def coerce(key: str, raw, line: int | None = None):
    """Convert ``raw`` (string or value) to the type of ``key`` and range-check it."""
    where = f" (line {line})" if line is not None else ""
    try:
        spec = FIELDS[key]
    except KeyError:
        raise UnknownKey(f"unknown key {key!r}{where}") from None
    name = {int: "integer", float: "number", bool: "boolean", str: "string",
            tuple: "comma-separated numbers"}[spec.kind]
    text = raw.strip() if isinstance(raw, str) else raw
    try:
        if spec.kind is bool:
            if isinstance(text, bool):
                value = text
            elif str(text).lower() in ("true", "yes", "on", "1"):
                value = True
            elif str(text).lower() in ("false", "no", "off", "0"):
                value = False
            else:
                raise ValueError
        elif spec.kind is int:
            if isinstance(text, float) and not text.is_integer():
                raise ValueError
            value = int(text) if not isinstance(text, str) else int(text, 10)
        elif spec.kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
        elif spec.kind is tuple:
            parts = text.split(",") if isinstance(text, str) else list(text)
            value = tuple(float(p) for p in parts)
            if len(value) != 3:
                raise ValueError
        else:
            value = str(text)
            if not value:
                raise ValueError
    except (TypeError, ValueError):
        raise ConfigTypeError(f"{key}{where}: expected {name}, got {raw!r}") from None
    if spec.check is not None and not spec.check(value):
        raise ConfigTypeError(f"{key}{where}: value {value!r} out of range, expected {spec.expect}")
    return value


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = defaults()
    section = ""
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"{source}:{lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        full = key if not section or "." in key and key.split(".")[0] == section else \
            f"{section}.{key}"
        if full in seen:
            raise ConfigError(f"{source}:{lineno}: {full} already set on line {seen[full]}")
        if full not in FIELDS:
            raise UnknownKey(f"{source}:{lineno}: unknown key {full!r}")
        cfg[full] = coerce(full, value, lineno)
        seen[full] = lineno
    return cfg


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Read ``path`` (if given), then apply ``overrides`` (e.g. from command-line flags)."""
    if path is None:
        cfg = defaults()
    else:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise IoFailure(f"{path}: {err.strerror or err}") from err
        except UnicodeDecodeError as err:
            raise ConfigError(f"{path}: not UTF-8 text") from err
        cfg = parse_config(text, str(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = coerce(key, value)
    return cfg


def render_defaults() -> str:
    """A commented config file listing every key with its default."""
    lines = []
    current = ""
    # Top-level keys first: a section header stays in force until the next one.
    ordered = sorted(FIELDS.items(), key=lambda kv: "." in kv[0])
    for key, spec in ordered:
        section, _, name = key.rpartition(".")
        if section != current:
            lines += ["", f"[{section}]"]
            current = section
        value = spec.default
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{name or key} = {value}    # {spec.help}")
    return "\n".join(lines).lstrip() + "\n"
