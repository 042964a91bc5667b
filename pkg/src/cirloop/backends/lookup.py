"""Precomputed-embedding encoders backed by a JSON Lines manifest.

Manifest lines look like ``{"key": "<string>", "vec": [...]}``. Images are
looked up by locator; texts by the SHA-256 hex digest of their UTF-8 bytes,
falling back to the raw text.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..core import BackendError
from .base import Caption, ImageHandle


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FileLookupEncoder:
    def __init__(self, manifest: str | Path):
        self.path = Path(manifest)
        self._table: dict[str, np.ndarray] = {}
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    self._table[str(obj["key"])] = np.asarray(obj["vec"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise BackendError("SCHEMA_ERROR", f"{self.path}:{lineno}", str(exc)) from None

    def __len__(self):
        return len(self._table)

    def _get(self, *keys: str) -> np.ndarray:
        for key in keys:
            if key in self._table:
                return self._table[key]
        raise BackendError("LOOKUP_MISS", keys[0], f"key not in {self.path.name}")

    def encode_text(self, text: Caption) -> np.ndarray:
        return self._get(text_key(text.text), text.text)

    def encode_image(self, image: ImageHandle) -> np.ndarray:
        return self._get(image.locator)
