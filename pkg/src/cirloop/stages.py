"""Per-query building blocks shared by the refinement loop and the pipeline."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

from .backends.base import BackendSuite, Caption, ImageHandle, Reflection, Role
from .core import DatasetError, Pathway, PATHWAYS
from .fusion import GateOutcome, PathwayState, confidence_from_logits
from .index import EmbeddingIndex, UnionPool


class QueryBackends:
    """Per-query view of a shared :class:`BackendSuite` that counts logical calls
    per role, cache hits included, so counts do not depend on scheduling."""

    def __init__(self, suite: BackendSuite, query_id: str):
        self.suite = suite
        self.query_id = query_id
        self.counts: Counter = Counter()

    def caption_image(self, image: ImageHandle) -> Caption:
        self.counts[Role.CAPTIONER.value] += 1
        return self.suite.caption_image(image)

    def edit_caption(self, c_ref: Caption, t_mod: str, suggestions: str | None = None) -> Caption:
        self.counts[Role.EDITOR_TEXT.value] += 1
        return self.suite.edit_caption(c_ref, t_mod, suggestions)

    def edit_image(self, i_ref: ImageHandle, t_mod: str, suggestions: str | None = None,
                   iteration: int = 1) -> ImageHandle:
        self.counts[Role.EDITOR_IMAGE.value] += 1
        return self.suite.edit_image(i_ref, t_mod, suggestions, iteration)

    def verify(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle, item_id: str):
        self.counts[Role.VERIFIER.value] += 1
        return self.suite.verify(i_ref, t_mod, candidate, cache_key=(self.query_id, item_id))

    def refine_reflect(self, c_ref: Caption, t_mod: str, pseudo: Caption, pathway: Pathway) -> Reflection:
        self.counts[Role.REFINER.value] += 1
        return self.suite.refine_reflect(c_ref, t_mod, pseudo, pathway)

    def encode_text(self, text: Caption):
        self.counts[Role.ENCODER_TEXT.value] += 1
        return self.suite.encode_text(text)

    def encode_image(self, image: ImageHandle):
        self.counts[Role.ENCODER_IMAGE.value] += 1
        return self.suite.encode_image(image)


class Database:
    """Embedding index plus the item id -> image locator manifest."""

    def __init__(self, index: EmbeddingIndex, locators: Mapping[str, str] | None = None):
        self.index = index
        self.locators = dict(locators) if locators is not None else {i: i for i in index.ids}

    def handle(self, item_id: str) -> ImageHandle:
        try:
            return ImageHandle(self.locators[item_id])
        except KeyError:
            raise DatasetError("MISSING_REFERENCE", item_id, "item is not in the database manifest") from None


@dataclass
class IterationRecord:
    """What one retrieve-verify pass produced. ``reflections`` holds the refiner
    verdicts issued on this pass's pseudo-targets."""

    iteration: int
    edited_caption: str | None = None
    edited_image: str | None = None
    topk: dict[str, list] = field(default_factory=dict)
    confidences: dict[str, float] = field(default_factory=dict)
    reliability: dict[str, float] = field(default_factory=dict)
    pseudo_targets: dict[str, str] = field(default_factory=dict)
    gate: list[str] = field(default_factory=list)
    reflections: dict[str, str] = field(default_factory=dict)

    def set_states(self, states: Mapping[Pathway, PathwayState]):
        for p in PATHWAYS:
            st = states.get(p)
            if st is None:
                continue
            if p is Pathway.T2I:
                self.edited_caption = st.artifact.text
            else:
                self.edited_image = st.artifact.locator
            self.topk[p.value] = [[c.item_id, c.similarity] for c in st.candidates]

    def set_gate(self, outcome: GateOutcome):
        self.reliability = {p.value: outcome.reliability(p) for p in PATHWAYS}
        self.pseudo_targets = {p.value: outcome.pseudo_target(p) for p in PATHWAYS}
        self.gate = [p.value for p in sorted(outcome.pathways_to_refine)]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "edited_caption": self.edited_caption,
            "edited_image": self.edited_image,
            "topk": {k: self.topk[k] for k in ("T2I", "I2I") if k in self.topk},
            "confidences": dict(sorted(self.confidences.items())),
            "reliability": self.reliability,
            "pseudo_targets": self.pseudo_targets,
            "gate": self.gate,
            "reflections": self.reflections,
        }


def retrieve_pathway(pathway: Pathway, artifact, backends: QueryBackends, index: EmbeddingIndex,
                     k: int) -> PathwayState:
    """Encode a pathway's query artifact and take its top-``k`` list."""
    if pathway is Pathway.T2I:
        vec = backends.encode_text(artifact)
    else:
        vec = backends.encode_image(artifact)
    return PathwayState(pathway, artifact, vec, tuple(index.top_k(vec, k)))


def verify_items(item_ids, confidences: dict[str, float], ref: ImageHandle, t_mod: str,
                 backends: QueryBackends, db: Database) -> list[str]:
    """Verify every id without a confidence yet; returns the newly verified ids."""
    fresh = []
    for item_id in item_ids:
        if item_id in confidences:
            continue
        logits = backends.verify(ref, t_mod, db.handle(item_id), item_id)
        confidences[item_id] = confidence_from_logits(logits.logit_yes, logits.logit_no)
        fresh.append(item_id)
    return fresh


def verify_pool(pool: UnionPool, confidences: dict[str, float], ref: ImageHandle, t_mod: str,
                backends: QueryBackends, db: Database) -> list[str]:
    return verify_items(pool.item_ids, confidences, ref, t_mod, backends, db)
