"""Prompt templates stored as text files with named ``{placeholders}``."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = ("captioner", "editor_text", "editor_image", "verifier", "refiner_t2i", "refiner_i2i")


def load_template(name: str, override_dir: str | Path | None = None) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    if override_dir is not None:
        candidate = Path(override_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, override_dir: str | Path | None = None, **values: str) -> str:
    return load_template(name, override_dir).format(**values).strip()
