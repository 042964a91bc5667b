"""Deterministic oracle backends over attribute-set items.

Every image is a set of attribute tokens and every caption is the canonical
string ``"attrs: a, b, c"``. The editors apply modification instructions as
set algebra and can be configured to lose tokens: the text editor drops visual
tokens, the image editor drops semantic ones. All outputs are pure functions
of the inputs and the seed.

Instruction grammar (clauses split on ``;``, operations on `` and ``)::

    add X | make X | remove X | replace X with Y      edit operations
    ensure: X | also require X                        protected additions

Protected additions come from refinement suggestions and are never dropped.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..backends.base import SATISFIED, Caption, ImageHandle, Reflection, VerifierLogits
from ..core import BackendError, Pathway, SynthError
from ..index import normalize

CAPTION_PREFIX = "attrs:"
ATTRS_SCHEME = "attrs://"

_OPS = [
    (re.compile(r"^replace\s+(\S+)\s+with\s+(\S+)$"), "replace"),
    (re.compile(r"^(?:add|make)\s+(\S+)$"), "add"),
    (re.compile(r"^remove\s+(\S+)$"), "remove"),
    (re.compile(r"^(?:ensure:|also\s+require)\s*(\S+)$"), "ensure"),
]


@dataclass(frozen=True)
class Vocabulary:
    visual: tuple[str, ...]
    semantic: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "visual", tuple(self.visual))
        object.__setattr__(self, "semantic", tuple(self.semantic))
        if set(self.visual) & set(self.semantic):
            raise SynthError("RANGE", "vocabulary", "visual and semantic tokens overlap")

    @property
    def universe(self) -> tuple[str, ...]:
        return self.visual + self.semantic

    def indicator(self, attrs: Iterable[str]) -> np.ndarray:
        pos = {tok: i for i, tok in enumerate(self.universe)}
        vec = np.zeros(len(pos))
        for tok in attrs:
            if tok not in pos:
                raise BackendError("LOOKUP_MISS", tok, "token outside the attribute universe")
            vec[pos[tok]] = 1.0
        return vec


@dataclass(frozen=True)
class FailureModeConfig:
    """Pathway failure modes: the text editor loses ``t2i_visual_drop`` visual
    tokens, the image editor loses ``i2i_semantic_drop`` semantic tokens."""

    t2i_visual_drop: int = 0
    i2i_semantic_drop: int = 0
    logit_scale: float = 4.0
    noise: float = 0.0

    def __post_init__(self):
        if self.t2i_visual_drop < 0 or self.i2i_semantic_drop < 0:
            raise SynthError("RANGE", "drop", "drop counts must be nonnegative")
        if not self.logit_scale > 0:
            raise SynthError("RANGE", "logit_scale", "must be positive")
        if self.noise < 0:
            raise SynthError("RANGE", "noise", "must be nonnegative")

    def spec(self) -> str:
        parts = [
            f"t2i=visual_drop:{self.t2i_visual_drop}" if self.t2i_visual_drop else "t2i=none",
            f"i2i=semantic_drop:{self.i2i_semantic_drop}" if self.i2i_semantic_drop else "i2i=none",
        ]
        if self.logit_scale != 4.0:
            parts.append(f"logit_scale={self.logit_scale:g}")
        if self.noise:
            parts.append(f"noise={self.noise:g}")
        return ",".join(parts)


FAILURE_GRAMMAR = ("none | comma-separated keys: t2i=none|visual_drop:<n>, i2i=none|semantic_drop:<n>, "
                   "logit_scale=<real>, noise=<real>   e.g. t2i=visual_drop:1,i2i=semantic_drop:1")


def parse_failure_spec(text: str) -> FailureModeConfig:
    text = text.strip()
    if text.lower() in ("", "none"):
        return FailureModeConfig()
    values: dict[str, float] = {}
    for part in text.split(","):
        key, sep, val = part.strip().partition("=")
        key, val = key.strip().lower(), val.strip().lower()
        try:
            if not sep:
                raise ValueError
            if key == "t2i":
                kind, _, n = val.partition(":")
                if kind == "none" and not n:
                    values["t2i_visual_drop"] = 0
                elif kind == "visual_drop":
                    values["t2i_visual_drop"] = int(n)
                else:
                    raise ValueError
            elif key == "i2i":
                kind, _, n = val.partition(":")
                if kind == "none" and not n:
                    values["i2i_semantic_drop"] = 0
                elif kind == "semantic_drop":
                    values["i2i_semantic_drop"] = int(n)
                else:
                    raise ValueError
            elif key in ("logit_scale", "noise"):
                values[key] = float(val)
            else:
                raise ValueError
        except ValueError:
            raise SynthError("BAD_SPEC", part.strip(), f"expected {FAILURE_GRAMMAR}") from None
    return FailureModeConfig(**values)


def format_caption(attrs: Iterable[str]) -> str:
    toks = sorted(attrs)
    return f"{CAPTION_PREFIX} {', '.join(toks)}" if toks else CAPTION_PREFIX


def parse_caption(text: str) -> frozenset[str]:
    text = str(text).strip()
    if not text.startswith(CAPTION_PREFIX):
        raise BackendError("UNPARSEABLE_CAPTION", text[:40], "oracle captions start with 'attrs:'")
    body = text[len(CAPTION_PREFIX):]
    return frozenset(t.strip() for t in body.split(",") if t.strip())


def attrs_locator(attrs: Iterable[str]) -> str:
    return ATTRS_SCHEME + "+".join(sorted(attrs))


def parse_instruction(instruction: str) -> tuple[list[tuple[str, str, str | None]], list[str]]:
    """Split an instruction into edit operations and protected additions."""
    ops: list[tuple[str, str, str | None]] = []
    ensured: list[str] = []
    for clause in instruction.split(";"):
        for raw in re.split(r"\s+and\s+", clause.strip()):
            raw = raw.strip().rstrip(".")
            if not raw:
                continue
            for pattern, kind in _OPS:
                m = pattern.match(raw)
                if m is None:
                    continue
                if kind == "ensure":
                    ensured.append(m.group(1))
                elif kind == "replace":
                    ops.append(("replace", m.group(1), m.group(2)))
                else:
                    ops.append((kind, m.group(1), None))
                break
            else:
                raise BackendError("BAD_INSTRUCTION", raw, "oracle editor cannot parse this operation")
    return ops, ensured


def apply_ops(attrs: Iterable[str], ops: Sequence[tuple[str, str, str | None]]) -> set[str]:
    out = set(attrs)
    for kind, a, b in ops:
        if kind == "add":
            out.add(a)
        elif kind == "remove":
            out.discard(a)
        else:
            out.discard(a)
            out.add(b)
    return out


def target_attrs(ref: Iterable[str], instruction: str) -> frozenset[str]:
    """Attribute set the instruction asks for, with no failure applied."""
    ops, ensured = parse_instruction(instruction)
    return frozenset(apply_ops(ref, ops) | set(ensured))


def drop_tokens(attrs: set[str], candidates: Iterable[str], count: int) -> set[str]:
    """Remove the ``count`` lexicographically smallest members of ``candidates``."""
    victims = sorted(set(attrs) & set(candidates))[:count]
    return set(attrs) - set(victims)


class OracleSuite:
    """Implements every backend role over a known attribute world."""

    def __init__(self, vocabulary: Vocabulary, items: Mapping[str, Iterable[str]],
                 failure: FailureModeConfig = FailureModeConfig(), seed: int = 0):
        self.vocabulary = vocabulary
        self.items = {loc: frozenset(a) for loc, a in items.items()}
        self.failure = failure
        self.seed = seed

    @classmethod
    def from_manifest(cls, path: str | Path) -> "OracleSuite":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "OracleSuite":
        vocab = Vocabulary(doc["vocabulary"]["visual"], doc["vocabulary"]["semantic"])
        failure = FailureModeConfig(**doc.get("failure", {}))
        return cls(vocab, doc["items"], failure, int(doc.get("seed", 0)))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "vocabulary": {"visual": list(self.vocabulary.visual), "semantic": list(self.vocabulary.semantic)},
            "failure": asdict(self.failure),
            "items": {loc: sorted(a) for loc, a in sorted(self.items.items())},
        }

    def with_failure(self, failure: FailureModeConfig) -> "OracleSuite":
        return OracleSuite(self.vocabulary, self.items, failure, self.seed)

    def image_attrs(self, image: ImageHandle) -> frozenset[str]:
        loc = image.locator
        if loc.startswith(ATTRS_SCHEME):
            body = loc[len(ATTRS_SCHEME):]
            return frozenset(t for t in body.split("+") if t)
        try:
            return self.items[loc]
        except KeyError:
            raise BackendError("LOOKUP_MISS", loc, "unknown image locator") from None

    def _edit(self, base: Iterable[str], instruction: str, drop_class: Sequence[str], count: int) -> set[str]:
        ops, ensured = parse_instruction(instruction)
        edited = drop_tokens(apply_ops(base, ops) - set(ensured), drop_class, count)
        return edited | set(ensured)

    # captioner
    def caption(self, image: ImageHandle) -> Caption:
        return Caption(format_caption(self.image_attrs(image)))

    # editors
    def edit_caption(self, c_ref: Caption, instruction: str) -> Caption:
        out = self._edit(parse_caption(c_ref.text), instruction, self.vocabulary.visual,
                         self.failure.t2i_visual_drop)
        return Caption(format_caption(out))

    def edit_image(self, i_ref: ImageHandle, instruction: str, iteration: int) -> ImageHandle:
        out = self._edit(self.image_attrs(i_ref), instruction, self.vocabulary.semantic,
                         self.failure.i2i_semantic_drop)
        return ImageHandle(attrs_locator(out), iteration)

    # verifier
    def match_fraction(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle) -> float:
        target = target_attrs(self.image_attrs(i_ref), t_mod)
        if not target:
            raise BackendError("EMPTY_RESPONSE", "VERIFIER", "modification leaves an empty target")
        return len(target & self.image_attrs(candidate)) / len(target)

    def verify(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle) -> VerifierLogits:
        half = self.failure.logit_scale * (2.0 * self.match_fraction(i_ref, t_mod, candidate) - 1.0)
        return VerifierLogits(half, -half)

    # refiner
    def reflect(self, c_ref: Caption, t_mod: str, pseudo_target: Caption, pathway: Pathway) -> Reflection:
        missing = sorted(target_attrs(parse_caption(c_ref.text), t_mod) - parse_caption(pseudo_target.text))
        if not missing:
            return SATISFIED
        return Reflection.suggest(f"ensure: {missing[0]}")

    # encoders
    def _embed(self, attrs: Iterable[str], key: str) -> np.ndarray:
        vec = normalize(self.vocabulary.indicator(attrs), key)
        if self.failure.noise > 0:
            digest = hashlib.sha256(f"{self.seed}:{key}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = normalize(vec + rng.normal(0.0, self.failure.noise, vec.shape[0]), key)
        return vec

    def encode_text(self, text: Caption) -> np.ndarray:
        return self._embed(parse_caption(text.text), "text:" + text.text)

    def encode_image(self, image: ImageHandle) -> np.ndarray:
        return self._embed(self.image_attrs(image), "image:" + image.locator)


def oracle_suite(world: OracleSuite, failure: FailureModeConfig | None = None, dim: int | None = None,
                 parallelism: int = 4):
    """A :class:`BackendSuite` with every role served by ``world``."""
    from ..backends.base import BackendSuite

    if failure is not None:
        world = world.with_failure(failure)
    return BackendSuite(captioner=world, text_editor=world, image_editor=world, verifier=world,
                        refiner=world, text_encoder=world, image_encoder=world,
                        dim=dim if dim is not None else len(world.vocabulary.universe),
                        parallelism=parallelism)
