"""Prompt templates, externalized one file per agent role.

Templates live in ``prompts/*.txt`` inside the package and can be
overridden by pointing ``DOCRESEARCH_PROMPTS_DIR`` (or the engine config)
at a directory with same-named files. They are plain ``str.format``
templates and deliberately non-normative: swap them freely.
"""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

_OVERRIDE_ENV = "DOCRESEARCH_PROMPTS_DIR"


def load(name: str, override_dir: str | None = None) -> str:
    override = override_dir or os.environ.get(_OVERRIDE_ENV)
    if override:
        candidate = Path(override) / f"{name}.txt"
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    ref = resources.files("docresearch").joinpath(f"prompts/{name}.txt")
    return ref.read_text(encoding="utf-8")


def render(name: str, override_dir: str | None = None, **kwargs) -> str:
    return load(name, override_dir).format(**kwargs)
