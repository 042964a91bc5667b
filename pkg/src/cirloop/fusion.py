"""Verifier-confidence fusion of the two retrieval pathways, plus baseline modes.

A candidate gets one confidence from the verifier. Its per-pathway confidence
is that value if the pathway retrieved it and 0 otherwise, so the fused score
is ``confidence * (number of pathways that retrieved it)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import FusionError, FusionMode, Pathway, PipelineConfig, PATHWAYS
from .index import EmbeddingIndex, RankedCandidate, UnionPool


@dataclass(frozen=True)
class PathwayState:
    """Query artifact of one pathway (edited caption or edited image handle), its
    encoded vector and its top-K list."""

    pathway: Pathway
    artifact: object
    query_vector: np.ndarray
    candidates: tuple[RankedCandidate, ...]


@dataclass(frozen=True)
class VerifiedCandidate:
    item_id: str
    confidence: float
    in_t2i: bool
    in_i2i: bool
    sim_t2i: float | None = None
    sim_i2i: float | None = None

    def __post_init__(self):
        if not (self.in_t2i or self.in_i2i):
            raise FusionError("RANGE", self.item_id, "candidate belongs to no pathway")

    @property
    def c_t2i(self) -> float:
        return self.confidence if self.in_t2i else 0.0

    @property
    def c_i2i(self) -> float:
        return self.confidence if self.in_i2i else 0.0

    @property
    def fused(self) -> float:
        return self.c_t2i + self.c_i2i


@dataclass(frozen=True)
class GateOutcome:
    reliability_t2i: float
    reliability_i2i: float
    pseudo_target_t2i: str
    pseudo_target_i2i: str
    pathways_to_refine: frozenset[Pathway]

    def reliability(self, pathway: Pathway) -> float:
        return self.reliability_t2i if pathway is Pathway.T2I else self.reliability_i2i

    def pseudo_target(self, pathway: Pathway) -> str:
        return self.pseudo_target_t2i if pathway is Pathway.T2I else self.pseudo_target_i2i


def confidence_from_logits(logit_yes: float, logit_no: float) -> float:
    """Two-way softmax probability of "yes", evaluated without overflow."""
    if not (math.isfinite(logit_yes) and math.isfinite(logit_no)):
        raise FusionError("NON_FINITE", "logits", f"({logit_yes}, {logit_no})")
    d = logit_no - logit_yes
    if d >= 0:
        e = math.exp(-d)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(d))


def verified_candidates(pool: UnionPool, confidences: Mapping[str, float]) -> list[VerifiedCandidate]:
    return [
        VerifiedCandidate(e.item_id, confidences[e.item_id], e.in_t2i, e.in_i2i, e.sim_t2i, e.sim_i2i)
        for e in pool
    ]


def pathway_reliability(pool: UnionPool, confidences: Mapping[str, float],
                        pathway: Pathway) -> tuple[str, float]:
    """Pseudo-target and reliability of one pathway.

    The reliability is the highest confidence among the pathway's members. Ties
    go to the higher pathway similarity, then the smaller item id.
    """
    best = None
    for e in pool:
        member = e.in_t2i if pathway is Pathway.T2I else e.in_i2i
        if not member:
            continue
        sim = e.sim_t2i if pathway is Pathway.T2I else e.sim_i2i
        key = (-confidences[e.item_id], -sim, e.item_id)
        if best is None or key < best:
            best = key
    if best is None:
        raise FusionError("EMPTY_PATHWAY", pathway.value, "no pool member was retrieved by this pathway")
    return best[2], -best[0]


def gate(r_t2i: float, r_i2i: float, tau: float) -> frozenset[Pathway]:
    """Pathways whose reliability is strictly below ``tau``."""
    return frozenset(p for p, r in ((Pathway.T2I, r_t2i), (Pathway.I2I, r_i2i)) if r < tau)


def assess(pool: UnionPool, confidences: Mapping[str, float], tau: float) -> GateOutcome:
    t2i, r_t2i = pathway_reliability(pool, confidences, Pathway.T2I)
    i2i, r_i2i = pathway_reliability(pool, confidences, Pathway.I2I)
    return GateOutcome(r_t2i, r_i2i, t2i, i2i, gate(r_t2i, r_i2i, tau))


def fusion_key(c: VerifiedCandidate) -> tuple:
    return (-c.fused, -max(c.c_t2i, c.c_i2i), -c.c_t2i, c.item_id)


def fuse_rank(candidates: Sequence[VerifiedCandidate]) -> list[str]:
    """Order by fused confidence, then best single-path confidence, then T2I
    confidence, all descending; remaining ties by item id."""
    if not candidates:
        raise FusionError("RANGE", "candidates", "nothing to fuse")
    return [c.item_id for c in sorted(candidates, key=fusion_key)]


def restrict_to(candidates: Sequence[VerifiedCandidate], pathways: frozenset[Pathway]) -> list[VerifiedCandidate]:
    """Drop membership in pathways outside ``pathways``; candidates left with no
    membership are removed."""
    out = []
    for c in candidates:
        in_t2i = c.in_t2i and Pathway.T2I in pathways
        in_i2i = c.in_i2i and Pathway.I2I in pathways
        if in_t2i or in_i2i:
            out.append(VerifiedCandidate(c.item_id, c.confidence, in_t2i, in_i2i,
                                         c.sim_t2i if in_t2i else None, c.sim_i2i if in_i2i else None))
    return out


def _max_sims(states: Mapping[Pathway, PathwayState], index: EmbeddingIndex) -> np.ndarray:
    sims = [index.similarities(states[p].query_vector) for p in PATHWAYS if p in states]
    if not sims:
        raise FusionError("RANGE", "pathway_states", "no pathway state given")
    return np.max(np.vstack(sims), axis=0)


def full_ranking(fused: Sequence[str], states: Mapping[Pathway, PathwayState],
                 index: EmbeddingIndex) -> list[str]:
    """Extend a ranking of the pool to all of the database: remaining items follow
    by their best pathway similarity."""
    head = list(fused)
    seen = set(head)
    tail = [i for i in index.rank_ids(_max_sims(states, index)) if i not in seen]
    return head + tail


def baseline_rank(config: PipelineConfig, states: Mapping[Pathway, PathwayState], index: EmbeddingIndex,
                  confidences: Mapping[str, float] | None = None) -> list[str]:
    """Ranking over the database for a non-adaptive fusion mode."""
    mode = config.fusion_mode
    if mode is FusionMode.ADA:
        raise FusionError("MODE_MISMATCH", mode.value, "ADA is ranked by fuse_rank")
    if mode is FusionMode.T2I_ONLY:
        return index.rank_ids(index.similarities(states[Pathway.T2I].query_vector))
    if mode is FusionMode.I2I_ONLY:
        return index.rank_ids(index.similarities(states[Pathway.I2I].query_vector))
    if mode is FusionMode.AVG:
        lam = config.lam
        scores = (lam * index.similarities(states[Pathway.T2I].query_vector)
                  + (1.0 - lam) * index.similarities(states[Pathway.I2I].query_vector))
        return index.rank_ids(scores)
    # RAK: verifier rerank of one pathway's top-K, the rest by that pathway's similarity
    state = states[config.rak_pathway]
    if confidences is None:
        raise FusionError("MODE_MISMATCH", "RAK", "reranking needs verifier confidences")
    head = sorted(state.candidates, key=lambda c: (-confidences[c.item_id], -c.similarity, c.item_id))
    head_ids = [c.item_id for c in head]
    seen = set(head_ids)
    tail = [i for i in index.rank_ids(index.similarities(state.query_vector)) if i not in seen]
    return head_ids + tail


def rank_subset(subset_ids: Sequence[str], confidences: Mapping[str, float], pool: UnionPool,
                states: Mapping[Pathway, PathwayState], index: EmbeddingIndex) -> list[str]:
    """Order a curated subset: members of the final pool by the fusion key, then
    the rest by best pathway similarity."""
    entries = {e.item_id: e for e in pool}
    best_sim = _max_sims(states, index)
    row = {item_id: i for i, item_id in enumerate(index.ids)}
    inside, outside = [], []
    for item_id in subset_ids:
        e = entries.get(item_id)
        if e is not None:
            inside.append(VerifiedCandidate(item_id, confidences[item_id], e.in_t2i, e.in_i2i,
                                            e.sim_t2i, e.sim_i2i))
        else:
            outside.append(item_id)
    outside.sort(key=lambda i: (-best_sim[row[i]], i))
    return [c.item_id for c in sorted(inside, key=fusion_key)] + outside
