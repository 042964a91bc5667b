"""Seeded generation of attribute-set corpora and composed queries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import ComposedQuery, SynthError
from ..index import EmbeddingRecord, normalize
from .oracle import FailureModeConfig, OracleSuite, Vocabulary


@dataclass(frozen=True)
class SynthItem:
    item_id: str
    attributes: frozenset[str]
    locator: str

    def embedding(self, vocabulary: Vocabulary) -> np.ndarray:
        return normalize(vocabulary.indicator(self.attributes), self.item_id)


@dataclass(frozen=True)
class SynthCorpus:
    vocabulary: Vocabulary
    items: tuple[SynthItem, ...]
    seed: int

    def records(self) -> list[EmbeddingRecord]:
        return [EmbeddingRecord(it.item_id, it.embedding(self.vocabulary)) for it in self.items]

    def manifest(self) -> dict[str, str]:
        return {it.item_id: it.locator for it in self.items}

    def world(self, failure: FailureModeConfig = FailureModeConfig()) -> OracleSuite:
        return OracleSuite(self.vocabulary, {it.locator: it.attributes for it in self.items}, failure, self.seed)


def _token_names(prefix: str, n: int) -> tuple[str, ...]:
    width = max(2, len(str(max(n - 1, 0))))
    return tuple(f"{prefix}{i:0{width}d}" for i in range(n))


def gen_corpus(seed: int, n_items: int, n_visual: int = 8, n_semantic: int = 8, attrs_per_item: int = 4,
               mutation_rate: float = 0.6, duplicate_rate: float = 0.05) -> SynthCorpus:
    """Items with exactly ``attrs_per_item`` tokens each.

    Most items are one-token mutations or exact copies of earlier items, which
    gives every region of the corpus near neighbours and some duplicate sets.
    """
    if n_items < 1:
        raise SynthError("RANGE", "n_items", "need at least one item")
    if attrs_per_item < 1:
        raise SynthError("RANGE", "attrs_per_item", "need at least one attribute per item")
    if n_visual < 0 or n_semantic < 0 or n_visual + n_semantic < attrs_per_item:
        raise SynthError("RANGE", "attrs_per_item", "attribute universe is smaller than attrs_per_item")
    vocab = Vocabulary(_token_names("v", n_visual), _token_names("s", n_semantic))
    universe = vocab.universe
    rng = np.random.default_rng(seed)
    width = max(4, len(str(n_items - 1)))
    sets: list[frozenset[str]] = []
    for i in range(n_items):
        r = rng.random()
        if sets and r < duplicate_rate:
            attrs = sets[int(rng.integers(len(sets)))]
        elif sets and r < duplicate_rate + mutation_rate and attrs_per_item < len(universe):
            parent = sorted(sets[int(rng.integers(len(sets)))])
            out_tok = parent[int(rng.integers(len(parent)))]
            pool = [t for t in universe if t not in parent]
            attrs = frozenset(parent) - {out_tok} | {pool[int(rng.integers(len(pool)))]}
        else:
            picks = rng.choice(len(universe), size=attrs_per_item, replace=False)
            attrs = frozenset(universe[int(j)] for j in picks)
        sets.append(attrs)
    items = tuple(
        SynthItem(f"i{i:0{width}d}", attrs, f"synth/i{i:0{width}d}.png") for i, attrs in enumerate(sets)
    )
    return SynthCorpus(vocab, items, seed)


def _draw_ops(rng: np.random.Generator, ref: Sequence[str], universe: Sequence[str], n_ops: int):
    current = set(ref)
    ops, texts = [], []
    for _ in range(n_ops):
        kinds = ["replace", "add", "remove"]
        kind = kinds[int(rng.choice(3, p=[0.6, 0.2, 0.2]))]
        absent = [t for t in universe if t not in current]
        present = sorted(current)
        if kind == "remove" and len(present) <= 1:
            kind = "add"
        if kind in ("add", "replace") and not absent:
            kind = "remove"
        if kind == "add":
            b = absent[int(rng.integers(len(absent)))]
            current.add(b)
            texts.append(f"add {b}")
        elif kind == "remove":
            a = present[int(rng.integers(len(present)))]
            current.discard(a)
            texts.append(f"remove {a}")
        else:
            a = present[int(rng.integers(len(present)))]
            b = absent[int(rng.integers(len(absent)))]
            current.discard(a)
            current.add(b)
            texts.append(f"replace {a} with {b}")
    return frozenset(current), " and ".join(texts)


def gen_queries(corpus: SynthCorpus, seed: int, n_queries: int, edit_ops_per_query: int = 1,
                retry_budget: int = 2000, with_subsets: bool = True) -> list[ComposedQuery]:
    """Random edits of random reference items; ground truth is every item whose
    attribute set equals the edited set. Draws with no such item are retried."""
    if not corpus.items:
        raise SynthError("RANGE", "corpus", "corpus is empty")
    if n_queries < 1 or edit_ops_per_query < 1:
        raise SynthError("RANGE", "n_queries", "need at least one query and one edit operation")
    by_set: dict[frozenset[str], list[str]] = {}
    for it in corpus.items:
        by_set.setdefault(it.attributes, []).append(it.item_id)
    universe = corpus.vocabulary.universe
    rng = np.random.default_rng([seed, 1])
    width = max(4, len(str(n_queries - 1)))
    queries = []
    for q in range(n_queries):
        for _ in range(retry_budget):
            ref = corpus.items[int(rng.integers(len(corpus.items)))]
            target, text = _draw_ops(rng, sorted(ref.attributes), universe, edit_ops_per_query)
            if target == ref.attributes or target not in by_set:
                continue
            gt = by_set[target]
            break
        else:
            raise SynthError("UNSATISFIABLE", f"query {q}", f"no satisfiable edit in {retry_budget} draws")
        subset = None
        if with_subsets and len(corpus.items) - len(gt) >= 5:
            subset = _draw_subset(rng, corpus, target, gt)
        queries.append(ComposedQuery(f"q{q:0{width}d}", ref.item_id, text, frozenset(gt), subset))
    return queries


def _draw_subset(rng, corpus: SynthCorpus, target: frozenset[str], gt: Sequence[str]) -> tuple[str, ...]:
    """One ground-truth item plus five hard negatives, shuffled."""
    gt_set = set(gt)
    others = sorted((it for it in corpus.items if it.item_id not in gt_set),
                    key=lambda it: (-len(it.attributes & target), it.item_id))
    pool = others[:15]
    picks = rng.choice(len(pool), size=5, replace=False)
    members = [gt[int(rng.integers(len(gt)))]] + [pool[int(j)].item_id for j in picks]
    order = rng.permutation(6)
    return tuple(members[int(j)] for j in order)
