"""Per-query retrieval metrics. Report-level values are means over queries."""

from __future__ import annotations

from typing import AbstractSet, Sequence

from ..core import MetricError


def _check(gt: AbstractSet[str], k: int):
    if not gt:
        raise MetricError("EMPTY_GT", None, "ground truth set is empty")
    if k < 1:
        raise MetricError("RANGE", "k", f"k must be positive, got {k}")


def recall_at_k(ranking: Sequence[str], gt: AbstractSet[str], k: int) -> float:
    """1.0 if any ground-truth id appears in the first ``k`` positions."""
    _check(gt, k)
    return 1.0 if any(i in gt for i in ranking[:k]) else 0.0


def recall_subset_at_k(subset_ranking: Sequence[str], gt: AbstractSet[str], k: int) -> float:
    """Recall@k over a curated six-member subset, already ranked."""
    _check(gt, k)
    if len(subset_ranking) != 6 or len(set(subset_ranking)) != 6:
        raise MetricError("BAD_SUBSET", None, f"subset must hold 6 distinct ids, got {len(subset_ranking)}")
    if not gt & set(subset_ranking):
        raise MetricError("BAD_SUBSET", None, "subset holds no ground-truth id")
    return recall_at_k(subset_ranking, gt, k)


def map_at_k(ranking: Sequence[str], gt: AbstractSet[str], k: int) -> float:
    """Average precision truncated at ``k``, normalized by ``min(|gt|, k)``.

    >>> map_at_k(["a", "x", "b", "y", "z"], {"a", "b"}, 5)
    0.8333333333333333
    """
    _check(gt, k)
    hits = 0
    total = 0.0
    for i, item in enumerate(ranking[:k], start=1):
        if item in gt:
            hits += 1
            total += hits / i
    return total / min(len(gt), k)
