"""INI-style config files mapped onto dataclasses.

Each section fills one dataclass; keys must name fields. Tuples are written
as comma-separated numbers, lists of tuples as ``;``-separated groups.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, default, hint, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool) or hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int) or hint is int:
            return int(raw)
        if isinstance(default, float) or hint is float:
            return float(raw)
        if isinstance(default, tuple) or "tuple" in str(hint):
            if not raw:
                return ()
            if ";" in raw or (default and isinstance(default[0], tuple)) or "tuple[tuple" in str(hint):
                return tuple(tuple(float(v) for v in grp.replace(",", " ").split()) for grp in raw.split(";") if grp.strip())
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def fill(cls, section: configparser.SectionProxy | dict | None, base=None):
    """Instantiate ``cls`` with overrides from ``section`` on top of ``base``."""
    obj = base if base is not None else cls()
    if section is None:
        return obj
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    name = getattr(section, "name", cls.__name__)
    updates = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        updates[key] = _parse_value(raw, getattr(obj, key), hints.get(key), f"[{name}] {key}")
    return dataclasses.replace(obj, **updates)


def read_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return parser
