"""Flat ``section.key = value`` configuration files."""
from __future__ import annotations

from .errors import ValidationError


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_config(text: str, source: str = "<config>") -> dict:
    """``{dotted.key: value}``; ``#`` starts a comment, later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not piece for piece in key.split(".")):
            raise ValidationError(f"{source}:{lineno}: malformed key {key!r}")
        out[key] = _coerce(value)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def pick(cfg: dict, key: str, flag=None, default=None):
    """Command-line flag if given, else the config entry, else ``default``."""
    if flag is not None:
        return flag
    return cfg.get(key, default)
