"""Versioned prompt templates with named ``{PLACEHOLDER}`` slots."""

from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

TEMPLATE_DIR = Path(__file__).parent
DEFAULT_VERSION = "v1"
TEMPLATE_NAMES = ("hypothesis", "sentences", "summary", "relations", "caption")


@lru_cache(maxsize=None)
def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def load_template(name: str, version: str = DEFAULT_VERSION, directory: str | os.PathLike | None = None) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}")
    base = Path(directory) if directory is not None else TEMPLATE_DIR
    return _read(str(base / f"{name}.{version}.txt"))


def render(template: str, **values: str) -> str:
    """Substitute ``{NAME}`` placeholders; literal JSON braces are left alone."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out
