"""Plain-text configuration files.

Format: one ``section.key = value`` per line, ``#`` starts a comment,
blank lines ignored. Values are parsed as int, float, bool, a
whitespace-separated float vector, or a bare string, in that order of
preference. Units are SI and documented per key in the shipped default
config.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__all__ = ["ConfigError", "parse_config", "parse_config_text", "default_config_path"]


class ConfigError(ValueError):
    """Malformed configuration input; carries file and line number."""

    def __init__(self, origin: str, lineno: int, message: str):
        super().__init__(f"{origin}:{lineno}: {message}")
        self.origin = origin
        self.lineno = lineno


def _parse_scalar(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    if tok.lower() in ("true", "false"):
        return tok.lower() == "true"
    return tok


def _parse_value(raw: str):
    parts = raw.split()
    if len(parts) > 1:
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            return raw
    return _parse_scalar(parts[0]) if parts else ""


def parse_config_text(text: str, origin: str = "<string>") -> dict:
    """Parse config text into a flat ``{dotted.key: value}`` dict."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(origin, lineno, f"expected 'key = value', got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key or "." not in key:
            raise ConfigError(origin, lineno, f"key must be dotted ('section.key'), got {key!r}")
        if not raw:
            raise ConfigError(origin, lineno, f"missing value for {key!r}")
        if key in out:
            raise ConfigError(origin, lineno, f"duplicate key {key!r}")
        out[key] = _parse_value(raw)
    return out


def parse_config(path: str | Path) -> dict:
    """Parse a config file. Raises ConfigError with the offending line number."""
    p = Path(path)
    return parse_config_text(p.read_text(), origin=str(p))


def default_config_path() -> Path:
    """Path of the checked-in default scene/run configuration."""
    return Path(str(resources.files("nlosid").joinpath("data/default.cfg")))
