"""Flat ``key=value`` configuration files.

Plain keys set :class:`~attrikit.train.TrainConfig` fields; ``net.<field>``
and ``aug.<field>`` address the network and augmentation configs. Lists are
comma-separated. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from attrikit.errors import ConfigError


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def _coerce(value: str, annotation: Any, default: Any):
    text = str(value).strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(default, (list, tuple)):
        items = [v.strip() for v in text.split(",") if v.strip()]
        elem = type(default[0]) if default else float
        try:
            conv = [elem(v) for v in items]
        except ValueError as exc:
            raise ConfigError(f"bad list value {text!r}") from exc
        return type(default)(conv)
    if default is None:
        if text.lower() in ("", "none"):
            return None
        return [float(v) for v in text.split(",")] if "," in text else float(text)
    try:
        return type(default)(text)
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for a {type(default).__name__} field") from exc


def apply_overrides(obj, values: dict[str, str]):
    """Return a copy of dataclass ``obj`` with string ``values`` coerced onto its fields."""
    known = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {type(obj).__name__}")
        changes[key] = _coerce(value, known[key].type, getattr(obj, key))
    return dataclasses.replace(obj, **changes)


def dump(obj, prefix: str = "") -> list[str]:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(i) for i in v)
        lines.append(f"{prefix}{f.name}={'none' if v is None else v}")
    return lines
