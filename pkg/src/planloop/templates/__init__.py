"""Versioned prompt templates, loaded by file name."""

from __future__ import annotations

from importlib import resources

from ..errors import ConfigError

__all__ = ["load_template"]


def load_template(name: str) -> str:
    """Return the template text; the name pins the version (*.v1.txt)."""
    ref = resources.files(__package__).joinpath(name)
    try:
        return ref.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(f"unknown prompt template {name!r}") from exc
