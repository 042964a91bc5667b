"""Self-reflection loop for pathways whose best candidate is not trusted.

Each round reflects on the uncertain pathways' pseudo-targets, feeds the
accumulated suggestions back to the editor, re-retrieves only those pathways
and verifies only candidates not seen before.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .backends.base import SATISFIED, Caption, ImageHandle, Reflection
from .core import BackendError, ComposedQuery, Pathway, PipelineConfig, RefinementError
from .fusion import GateOutcome, PathwayState, assess
from .index import UnionPool, union_candidates
from .stages import Database, IterationRecord, QueryBackends, retrieve_pathway, verify_pool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefinementState:
    iteration: int = 0
    artifacts: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    satisfied: frozenset = frozenset()

    def suggestions(self, pathway: Pathway) -> tuple[str, ...]:
        return tuple(self.history.get(pathway, ()))


@dataclass
class LoopResult:
    states: dict
    pool: UnionPool
    confidences: dict
    outcome: GateOutcome
    state: RefinementState
    rounds: int = 0


def reflect_pathway(query: ComposedQuery, c_ref: Caption, pseudo_target: str, pathway: Pathway,
                    backends: QueryBackends, db: Database, warnings: list[str] | None = None) -> Reflection:
    """Caption the pseudo-target and ask the refiner what is still unmet.

    Backend failures fail open: the pathway counts as satisfied and a warning is
    appended to ``warnings``.
    """
    handle = db.handle(pseudo_target)
    try:
        pseudo_caption = backends.caption_image(handle)
        return backends.refine_reflect(c_ref, query.modification_text, pseudo_caption, pathway)
    except BackendError as exc:
        msg = f"reflection on {pathway.value} failed open: {exc}"
        log.warning("query %s: %s", query.query_id, msg)
        if warnings is not None:
            warnings.append(msg)
        return SATISFIED


def apply_suggestion(state: RefinementState, pathway: Pathway, suggestion: str, query: ComposedQuery,
                     c_ref: Caption, ref: ImageHandle, backends: QueryBackends) -> RefinementState:
    """Regenerate the pathway's artifact from the modification text plus every
    suggestion received so far, in arrival order."""
    if pathway in state.satisfied:
        raise RefinementError("PRECONDITION", pathway.value, "pathway already reported satisfied")
    history = dict(state.history)
    history[pathway] = state.suggestions(pathway) + (suggestion,)
    joined = " ; ".join(history[pathway])
    if pathway is Pathway.T2I:
        artifact = backends.edit_caption(c_ref, query.modification_text, joined)
    else:
        artifact = backends.edit_image(ref, query.modification_text, joined, iteration=state.iteration + 2)
    artifacts = dict(state.artifacts)
    artifacts[pathway] = artifact
    return replace(state, artifacts=artifacts, history=history)


def run_refinement_loop(query: ComposedQuery, outcome: GateOutcome, state: RefinementState,
                        config: PipelineConfig, backends: QueryBackends, db: Database, *,
                        c_ref: Caption, ref: ImageHandle, states: dict, pool: UnionPool,
                        confidences: dict, records: list[IterationRecord],
                        warnings: list[str] | None = None) -> LoopResult:
    """Run at most ``config.max_iterations`` rounds.

    Stops early when no pathway is uncertain or every uncertain pathway reports
    satisfied. ``records`` gets one entry per executed round, so completed
    rounds survive in the trace if a later stage raises.
    """
    states = dict(states)
    confidences = dict(confidences)
    rounds = 0
    while outcome.pathways_to_refine and state.iteration < config.max_iterations:
        pending = [p for p in sorted(outcome.pathways_to_refine) if p not in state.satisfied]
        if not pending:
            break
        redo = []
        for p in pending:
            verdict = reflect_pathway(query, c_ref, outcome.pseudo_target(p), p, backends, db, warnings)
            records[-1].reflections[p.value] = "SATISFIED" if verdict.satisfied else verdict.suggestion
            if verdict.satisfied:
                state = replace(state, satisfied=state.satisfied | {p})
            else:
                state = apply_suggestion(state, p, verdict.suggestion, query, c_ref, ref, backends)
                redo.append(p)
        if not redo:
            break
        state = replace(state, iteration=state.iteration + 1)
        rounds += 1
        for p in redo:
            states[p] = retrieve_pathway(p, state.artifacts[p], backends, db.index, config.top_k)
        pool = union_candidates(states[Pathway.T2I].candidates, states[Pathway.I2I].candidates)
        verify_pool(pool, confidences, ref, query.modification_text, backends, db)
        outcome = assess(pool, confidences, config.tau)
        rec = IterationRecord(state.iteration)
        rec.set_states(states)
        rec.confidences = {i: confidences[i] for i in pool.item_ids}
        rec.set_gate(outcome)
        records.append(rec)
    return LoopResult(states, pool, confidences, outcome, state, rounds)
