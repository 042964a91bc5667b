"""Per-query orchestration (search both pathways, verify, gate, refine, fuse)
and batch execution with trace persistence."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backends.base import BackendSuite
from .core import (CirError, ComposedQuery, FusionMode, Pathway, PipelineConfig, PATHWAYS,
                   validate_config)
from .fusion import (assess, baseline_rank, full_ranking, fuse_rank, rank_subset, restrict_to,
                     verified_candidates)
from .index import EmbeddingIndex, union_candidates
from .refine import RefinementState, run_refinement_loop
from .stages import (Database, IterationRecord, QueryBackends, retrieve_pathway, verify_items,
                     verify_pool)

log = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9


class Stopwatch:
    """Charges the time since the previous lap to a named stage, so stage
    timings always add up to the total."""

    def __init__(self, clock=time.perf_counter):
        self._clock = clock
        self._start = self._last = clock()
        self.stages: dict[str, float] = {}

    def lap(self, stage: str):
        now = self._clock()
        self.stages[stage] = self.stages.get(stage, 0.0) + (now - self._last) * 1000.0
        self._last = now

    def summary(self) -> dict[str, float]:
        out = dict(self.stages)
        out["total"] = (self._last - self._start) * 1000.0
        return out


@dataclass
class QueryTrace:
    query_id: str
    mode: str
    status: str = "ok"
    error: dict[str, Any] | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    final_ranking: list[str] = field(default_factory=list)
    subset_ranking: list[str] | None = None
    refinement_rounds: int = 0
    call_counts: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    timings_ms: dict[str, float] = field(default_factory=dict)

    def to_dict(self, canonical: bool = True) -> dict[str, Any]:
        """Fixed field order. The canonical form leaves out wall-clock timings so
        that identical runs serialize to identical bytes."""
        doc = {
            "query_id": self.query_id,
            "mode": self.mode,
            "status": self.status,
            "error": self.error,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_ranking": self.final_ranking,
            "subset_ranking": self.subset_ranking,
            "refinement_rounds": self.refinement_rounds,
            "call_counts": dict(sorted(self.call_counts.items())),
            "warnings": self.warnings,
        }
        if not canonical:
            doc["timings_ms"] = self.timings_ms
        return doc

    def to_json(self, canonical: bool = True) -> str:
        return json.dumps(_round_floats(self.to_dict(canonical)), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "QueryTrace":
        trace = cls(doc["query_id"], doc["mode"], doc.get("status", "ok"), doc.get("error"))
        for rec in doc.get("iterations", []):
            trace.iterations.append(IterationRecord(**rec))
        trace.final_ranking = list(doc.get("final_ranking", []))
        trace.subset_ranking = doc.get("subset_ranking")
        trace.refinement_rounds = doc.get("refinement_rounds", 0)
        trace.call_counts = dict(doc.get("call_counts", {}))
        trace.warnings = list(doc.get("warnings", []))
        trace.timings_ms = dict(doc.get("timings_ms", {}))
        return trace


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


@dataclass
class QueryResult:
    query: ComposedQuery
    ranking: list[str] | None
    trace: QueryTrace

    @property
    def ok(self) -> bool:
        return self.ranking is not None


def _pathways_for(config: PipelineConfig) -> tuple[Pathway, ...]:
    mode = config.fusion_mode
    if mode is FusionMode.T2I_ONLY:
        return (Pathway.T2I,)
    if mode is FusionMode.I2I_ONLY:
        return (Pathway.I2I,)
    if mode is FusionMode.RAK:
        return (config.rak_pathway,)
    return PATHWAYS


def run_query(query: ComposedQuery, config: PipelineConfig, backends: BackendSuite,
              index: EmbeddingIndex | Database, locators: Mapping[str, str] | None = None,
              raise_errors: bool = False) -> QueryResult:
    """Rank the whole database for one query.

    A failing stage aborts the query: the result has ``ranking=None`` and a
    trace holding the stages completed so far (unless ``raise_errors``).
    """
    db = index if isinstance(index, Database) else Database(index, locators)
    qb = QueryBackends(backends, query.query_id)
    trace = QueryTrace(query.query_id, config.mode_label())
    watch = Stopwatch()
    try:
        ranking = _execute(query, config, qb, db, trace, watch)
    except CirError as exc:
        if raise_errors:
            raise
        trace.status = "error"
        trace.error = {"code": exc.code, "subject": exc.subject, "message": str(exc)}
        ranking = None
    watch.lap("finish")
    trace.call_counts = dict(qb.counts)
    trace.timings_ms = watch.summary()
    return QueryResult(query, ranking, trace)


def _execute(query: ComposedQuery, config: PipelineConfig, qb: QueryBackends, db: Database,
             trace: QueryTrace, watch: Stopwatch) -> list[str]:
    ref = db.handle(query.reference_id)
    t_mod = query.modification_text
    paths = _pathways_for(config)
    index = db.index

    artifacts = {}
    c_ref = None
    if Pathway.T2I in paths:
        c_ref = qb.caption_image(ref)
        watch.lap("caption")
        artifacts[Pathway.T2I] = qb.edit_caption(c_ref, t_mod)
    if Pathway.I2I in paths:
        artifacts[Pathway.I2I] = qb.edit_image(ref, t_mod, iteration=1)
    watch.lap("edit")
    states = {p: retrieve_pathway(p, artifacts[p], qb, index, config.top_k) for p in paths}
    watch.lap("retrieve")

    first = IterationRecord(0)
    first.set_states(states)
    trace.iterations.append(first)
    mode = config.fusion_mode

    if mode is not FusionMode.ADA:
        confidences: dict[str, float] = {}
        if mode is FusionMode.RAK:
            ids = [c.item_id for c in states[config.rak_pathway].candidates]
            verify_items(ids, confidences, ref, t_mod, qb, db)
            first.confidences = dict(confidences)
            watch.lap("verify")
        ranking = baseline_rank(config, states, index, confidences)
        watch.lap("fuse")
        trace.final_ranking = ranking[:config.trace_ranking_len]
        if query.subset_ids is not None:
            members = set(query.subset_ids)
            trace.subset_ranking = [i for i in ranking if i in members]
        return ranking

    pool = union_candidates(states[Pathway.T2I].candidates, states[Pathway.I2I].candidates)
    confidences = {}
    verify_pool(pool, confidences, ref, t_mod, qb, db)
    first.confidences = dict(confidences)
    watch.lap("verify")
    outcome = assess(pool, confidences, config.tau)
    first.set_gate(outcome)

    if config.max_iterations > 0 and outcome.pathways_to_refine:
        if c_ref is None:
            c_ref = qb.caption_image(ref)
        loop = run_refinement_loop(
            query, outcome, RefinementState(artifacts=dict(artifacts)), config, qb, db,
            c_ref=c_ref, ref=ref, states=states, pool=pool, confidences=confidences,
            records=trace.iterations, warnings=trace.warnings,
        )
        states, pool, confidences, outcome = loop.states, loop.pool, loop.confidences, loop.outcome
        trace.refinement_rounds = loop.rounds
        watch.lap("refine")

    candidates = verified_candidates(pool, confidences)
    uncertain = outcome.pathways_to_refine
    if config.strict_gate and uncertain and len(uncertain) < len(PATHWAYS):
        candidates = restrict_to(candidates, frozenset(PATHWAYS) - uncertain)
    fused = fuse_rank(candidates)
    ranking = full_ranking(fused, states, index)
    watch.lap("fuse")
    trace.final_ranking = ranking[:config.trace_ranking_len]

    if query.subset_ids is not None:
        verify_items(query.subset_ids, confidences, ref, t_mod, qb, db)
        trace.subset_ranking = rank_subset(query.subset_ids, confidences, pool, states, index)
        watch.lap("verify")
    return ranking


def run_batch(queries: Sequence[ComposedQuery], config: PipelineConfig, backends: BackendSuite,
              index: EmbeddingIndex | Database, locators: Mapping[str, str] | None = None,
              parallelism: int | None = None) -> list[QueryResult]:
    """Run every query; results come back in input order and a failing query
    never aborts the batch."""
    validate_config(config)
    if not queries:
        raise CirError("RANGE", "queries", "batch is empty")
    db = index if isinstance(index, Database) else Database(index, locators)
    workers = parallelism or config.backend_parallelism

    def one(q: ComposedQuery) -> QueryResult:
        try:
            return run_query(q, config, backends, db)
        except Exception as exc:  # isolate unexpected failures per query
            log.exception("query %s crashed", q.query_id)
            trace = QueryTrace(q.query_id, config.mode_label(), "error",
                               {"code": "INTERNAL", "subject": type(exc).__name__, "message": str(exc)})
            return QueryResult(q, None, trace)

    if workers <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, queries))


def write_traces(path: str | Path, traces: Iterable[QueryTrace], timings_path: str | Path | None = None):
    """Canonical JSON Lines; timings go to a separate file when requested."""
    traces = list(traces)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(t.to_json() + "\n")
    if timings_path is not None:
        with open(timings_path, "w", encoding="utf-8", newline="\n") as fh:
            for t in traces:
                fh.write(json.dumps({"query_id": t.query_id, "timings_ms": _round_floats(t.timings_ms)}) + "\n")


def read_traces(path: str | Path) -> list[QueryTrace]:
    with open(path, encoding="utf-8") as fh:
        return [QueryTrace.from_dict(json.loads(line)) for line in fh if line.strip()]
