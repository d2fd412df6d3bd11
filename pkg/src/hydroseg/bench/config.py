"""Plain-text ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from ..errors import ArgumentError, FormatError

_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}


def parse_value(text: str, type_name: str):
    t = type_name.replace(" ", "")
    if t == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if t == "int":
        return int(text)
    if t in ("float", "float|None"):
        return float(text)
    return text


def read_config(path) -> dict:
    """Raw key/value pairs; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{n}: empty key")
        out[key] = value
    return out


def apply_overrides(cfg, values: dict):
    """Return a copy of dataclass ``cfg`` with string ``values`` converted to the field types."""
    types = type(cfg).field_types()
    typed = {}
    for key, value in values.items():
        if key not in types:
            raise ArgumentError(f"unknown config key {key!r}; known keys: {', '.join(sorted(types))}")
        if isinstance(value, str):
            try:
                value = parse_value(value, types[key])
            except ValueError as exc:
                raise ArgumentError(f"bad value for {key}: {exc}") from None
        typed[key] = value
    return replace(cfg, **typed)
