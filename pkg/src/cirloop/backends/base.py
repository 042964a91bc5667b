"""Model-role interfaces and the caching, call-counting suite that wraps them."""

from __future__ import annotations

import enum
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..core import BackendError, Pathway


class Role(str, enum.Enum):
    CAPTIONER = "CAPTIONER"
    EDITOR_TEXT = "EDITOR_TEXT"
    EDITOR_IMAGE = "EDITOR_IMAGE"
    VERIFIER = "VERIFIER"
    REFINER = "REFINER"
    ENCODER_TEXT = "ENCODER_TEXT"
    ENCODER_IMAGE = "ENCODER_IMAGE"


class Kind(str, enum.Enum):
    HTTP = "HTTP"
    FILE_LOOKUP = "FILE_LOOKUP"
    ORACLE = "ORACLE"


@dataclass(frozen=True)
class Caption:
    text: str

    def __post_init__(self):
        text = self.text.strip() if isinstance(self.text, str) else ""
        if not text:
            raise BackendError("EMPTY_RESPONSE", "caption", "caption text is empty")
        object.__setattr__(self, "text", text)

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class ImageHandle:
    """Locator of an image plus where it came from. ``edited_iteration`` is None
    for reference/database images and >= 1 for editor outputs."""

    locator: str
    edited_iteration: int | None = None

    def __post_init__(self):
        if not self.locator:
            raise BackendError("EMPTY_RESPONSE", "image", "image locator is empty")
        if self.edited_iteration is not None and self.edited_iteration < 1:
            raise BackendError("RANGE", "edited_iteration", "edited images start at iteration 1")

    @property
    def origin(self) -> str:
        return "REFERENCE" if self.edited_iteration is None else f"EDITED({self.edited_iteration})"


@dataclass(frozen=True)
class VerifierLogits:
    logit_yes: float
    logit_no: float

    def __post_init__(self):
        if not (math.isfinite(self.logit_yes) and math.isfinite(self.logit_no)):
            raise BackendError("NON_FINITE", "verifier", f"logits ({self.logit_yes}, {self.logit_no})")


@dataclass(frozen=True)
class Reflection:
    """Refiner verdict: ``suggestion`` is None when every modification is met."""

    suggestion: str | None = None

    @property
    def satisfied(self) -> bool:
        return self.suggestion is None

    @classmethod
    def suggest(cls, text: str) -> "Reflection":
        text = text.strip()
        if not text:
            raise BackendError("UNPARSEABLE_REFLECTION", "suggestion", "empty suggestion")
        return cls(text)


SATISFIED = Reflection(None)


@dataclass(frozen=True)
class BackendProfile:
    role: Role
    kind: Kind
    endpoint: str | None = None
    model_name: str | None = None
    api_key_env: str | None = None
    timeout_ms: int = 60_000
    max_retries: int = 3
    manifest: str | None = None

    def __post_init__(self):
        if self.kind is Kind.HTTP and not self.endpoint:
            raise BackendError("RANGE", self.role.value, "HTTP backend requires an endpoint")
        if self.kind in (Kind.FILE_LOOKUP, Kind.ORACLE) and not self.manifest:
            raise BackendError("RANGE", self.role.value, f"{self.kind.value} backend requires a manifest path")
        if self.kind is Kind.FILE_LOOKUP and self.role not in (Role.ENCODER_TEXT, Role.ENCODER_IMAGE):
            raise BackendError("RANGE", self.role.value, "FILE_LOOKUP serves encoder roles only")
        if self.timeout_ms < 1:
            raise BackendError("RANGE", "timeout_ms", "must be positive")
        if self.max_retries < 0:
            raise BackendError("RANGE", "max_retries", "must be nonnegative")


# -- role protocols ----------------------------------------------------------

class Captioner(Protocol):
    def caption(self, image: ImageHandle) -> Caption: ...


class TextEditor(Protocol):
    def edit_caption(self, c_ref: Caption, instruction: str) -> Caption: ...


class ImageEditor(Protocol):
    def edit_image(self, i_ref: ImageHandle, instruction: str, iteration: int) -> ImageHandle: ...


class Verifier(Protocol):
    def verify(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle) -> VerifierLogits: ...


class Refiner(Protocol):
    def reflect(self, c_ref: Caption, t_mod: str, pseudo_target: Caption, pathway: Pathway) -> Reflection: ...


class TextEncoder(Protocol):
    def encode_text(self, text: Caption) -> np.ndarray: ...


class ImageEncoder(Protocol):
    def encode_image(self, image: ImageHandle) -> np.ndarray: ...


SUGGESTION_SEPARATOR = " ; "


def augment_instruction(t_mod: str, suggestions: str | None) -> str:
    if not suggestions:
        return t_mod
    if not t_mod:
        return suggestions
    return f"{t_mod}{SUGGESTION_SEPARATOR}{suggestions}"


def _as_unit(vec, dim: int | None, who: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if dim is not None and (v.ndim != 1 or v.shape[0] != dim):
        raise BackendError("DIM_MISMATCH", who, f"encoder returned shape {v.shape}, expected ({dim},)")
    norm = float(np.linalg.norm(v))
    if not math.isfinite(norm) or norm == 0.0:
        raise BackendError("ZERO_NORM", who, "encoder returned a zero vector")
    return v / norm


@dataclass
class BackendSuite:
    """All seven model roles behind one object.

    Adds the caching contracts (captions by locator, verifier results by
    ``(query_id, item_id)``), bounded in-flight calls per role, and counters of
    real backend invocations (cache hits are not counted).
    """

    captioner: Captioner | None = None
    text_editor: TextEditor | None = None
    image_editor: ImageEditor | None = None
    verifier: Verifier | None = None
    refiner: Refiner | None = None
    text_encoder: TextEncoder | None = None
    image_encoder: ImageEncoder | None = None
    dim: int | None = None
    parallelism: int = 4
    calls: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._caption_cache: dict[str, Caption] = {}
        self._verify_cache: dict[tuple[str, str], VerifierLogits] = {}
        self._slots = {role: threading.BoundedSemaphore(self.parallelism) for role in Role}

    def _impl(self, role: Role):
        impl = {
            Role.CAPTIONER: self.captioner,
            Role.EDITOR_TEXT: self.text_editor,
            Role.EDITOR_IMAGE: self.image_editor,
            Role.VERIFIER: self.verifier,
            Role.REFINER: self.refiner,
            Role.ENCODER_TEXT: self.text_encoder,
            Role.ENCODER_IMAGE: self.image_encoder,
        }[role]
        if impl is None:
            raise BackendError("BACKEND_UNAVAILABLE", role.value, "no backend configured for this role")
        return impl

    def _call(self, role: Role, fn):
        with self._slots[role]:
            with self._lock:
                self.calls[role.value] += 1
            return fn()

    def has(self, role: Role) -> bool:
        try:
            self._impl(role)
        except BackendError:
            return False
        return True

    def caption_image(self, image: ImageHandle) -> Caption:
        with self._lock:
            hit = self._caption_cache.get(image.locator)
        if hit is not None:
            return hit
        impl = self._impl(Role.CAPTIONER)
        result = self._call(Role.CAPTIONER, lambda: impl.caption(image))
        with self._lock:
            self._caption_cache[image.locator] = result
        return result

    def edit_caption(self, c_ref: Caption, t_mod: str, suggestions: str | None = None) -> Caption:
        impl = self._impl(Role.EDITOR_TEXT)
        instruction = augment_instruction(t_mod, suggestions)
        return self._call(Role.EDITOR_TEXT, lambda: impl.edit_caption(c_ref, instruction))

    def edit_image(self, i_ref: ImageHandle, t_mod: str, suggestions: str | None = None,
                   iteration: int = 1) -> ImageHandle:
        impl = self._impl(Role.EDITOR_IMAGE)
        instruction = augment_instruction(t_mod, suggestions)
        out = self._call(Role.EDITOR_IMAGE, lambda: impl.edit_image(i_ref, instruction, iteration))
        if out.edited_iteration != iteration:
            out = ImageHandle(out.locator, iteration)
        return out

    def verify(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle,
               cache_key: tuple[str, str] | None = None) -> VerifierLogits:
        if cache_key is not None:
            with self._lock:
                hit = self._verify_cache.get(cache_key)
            if hit is not None:
                return hit
        impl = self._impl(Role.VERIFIER)
        result = self._call(Role.VERIFIER, lambda: impl.verify(i_ref, t_mod, candidate))
        if cache_key is not None:
            with self._lock:
                self._verify_cache[cache_key] = result
        return result

    def refine_reflect(self, c_ref: Caption, t_mod: str, pseudo_target_caption: Caption,
                       pathway: Pathway) -> Reflection:
        impl = self._impl(Role.REFINER)
        return self._call(Role.REFINER, lambda: impl.reflect(c_ref, t_mod, pseudo_target_caption, pathway))

    def encode_text(self, text: Caption) -> np.ndarray:
        impl = self._impl(Role.ENCODER_TEXT)
        vec = self._call(Role.ENCODER_TEXT, lambda: impl.encode_text(text))
        return _as_unit(vec, self.dim, Role.ENCODER_TEXT.value)

    def encode_image(self, image: ImageHandle) -> np.ndarray:
        impl = self._impl(Role.ENCODER_IMAGE)
        vec = self._call(Role.ENCODER_IMAGE, lambda: impl.encode_image(image))
        return _as_unit(vec, self.dim, Role.ENCODER_IMAGE.value)
