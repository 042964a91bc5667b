"""Aggregate per-query rankings into benchmark metric reports and render them
as an aligned text table, CSV rows and JSON."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Mapping, Sequence

from ..core import ComposedQuery, MetricError
from .metrics import map_at_k, recall_at_k, recall_subset_at_k

PROTOCOLS: dict[str, tuple[tuple[str, int], ...]] = {
    "circo": (("mAP", 5), ("mAP", 10), ("mAP", 25), ("mAP", 50)),
    "cirr": (("R", 1), ("R", 5), ("R", 10), ("R", 50), ("Rsub", 1), ("Rsub", 2), ("Rsub", 3)),
    "fashioniq": (("R", 10), ("R", 50)),
    "full": (("R", 1), ("R", 5), ("R", 10), ("R", 50), ("mAP", 5), ("mAP", 10), ("mAP", 25), ("mAP", 50)),
}
_SUBSET_METRICS = (("Rsub", 1), ("Rsub", 2), ("Rsub", 3))
AVERAGE = "Avg"


@dataclass(frozen=True)
class ScoredQuery:
    query_id: str
    ground_truth: AbstractSet[str]
    ranking: Sequence[str] | None
    subset_ranking: Sequence[str] | None = None

    @property
    def failed(self) -> bool:
        return self.ranking is None


@dataclass
class DatasetMetrics:
    values: dict[str, float]
    n_queries: int
    n_errors: int = 0


@dataclass
class MetricReport:
    protocol: str
    label: str
    datasets: dict[str, DatasetMetrics] = field(default_factory=dict)
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "label": self.label,
            "config_fingerprint": self.config_fingerprint,
            "datasets": {
                name: {"metrics": m.values, "queries": m.n_queries, "errors": m.n_errors}
                for name, m in self.datasets.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def metric_name(kind: str, k: int) -> str:
    return f"{kind}@{k}"


def _metric_list(protocol: str, scored: Sequence[ScoredQuery]) -> tuple[tuple[str, int], ...]:
    try:
        metrics = PROTOCOLS[protocol]
    except KeyError:
        raise MetricError("RANGE", "protocol", f"expected one of {', '.join(PROTOCOLS)}") from None
    if protocol == "full" and scored and all(s.failed or s.subset_ranking is not None for s in scored) \
            and any(s.subset_ranking is not None for s in scored):
        metrics = metrics + _SUBSET_METRICS
    return metrics


def _score(kind: str, k: int, s: ScoredQuery) -> float:
    if s.failed:
        return 0.0
    if kind == "R":
        return recall_at_k(s.ranking, s.ground_truth, k)
    if kind == "mAP":
        return map_at_k(s.ranking, s.ground_truth, k)
    if s.subset_ranking is None:
        raise MetricError("BAD_SUBSET", s.query_id, "query has no subset ranking")
    return recall_subset_at_k(s.subset_ranking, s.ground_truth, k)


def evaluate(scored: Sequence[ScoredQuery], protocol: str) -> DatasetMetrics:
    """Mean of each protocol metric; failed queries count as misses."""
    metrics = _metric_list(protocol, scored)
    n = len(scored)
    values = {}
    for kind, k in metrics:
        values[metric_name(kind, k)] = sum(_score(kind, k, s) for s in scored) / n if n else 0.0
    return DatasetMetrics(values, n, sum(s.failed for s in scored))


def emit_report(results: Mapping[str, Sequence[ScoredQuery]], protocol: str, label: str = "run",
                config_fingerprint: str = "") -> tuple[MetricReport, str]:
    """Build the report for one or more datasets and render its table.

    Fashion-IQ style runs pass one dataset per category and get an extra
    average column group.
    """
    report = MetricReport(protocol, label, config_fingerprint=config_fingerprint)
    for name, scored in results.items():
        report.datasets[name] = evaluate(scored, protocol)
    if protocol == "fashioniq" and len(report.datasets) > 1:
        parts = list(report.datasets.values())
        keys = parts[0].values.keys()
        report.datasets[AVERAGE] = DatasetMetrics(
            {k: sum(p.values[k] for p in parts) / len(parts) for k in keys},
            sum(p.n_queries for p in parts), sum(p.n_errors for p in parts),
        )
    return report, render_table([report])


def render_table(reports: Sequence[MetricReport]) -> str:
    """Aligned text table, one row per report, values as percentages with two
    decimals. Reports must share the same datasets and metrics."""
    if not reports:
        return ""
    first = reports[0]
    multi = len(first.datasets) > 1
    columns = [(ds, m) for ds, dm in first.datasets.items() for m in dm.values]
    headers = ["Method"] + [f"{ds} {m}" if multi else m for ds, m in columns]
    rows = [[r.label] + [f"{100.0 * r.datasets[ds].values[m]:.2f}" for ds, m in columns] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]

    def fmt(cells):
        first_cell = cells[0].ljust(widths[0])
        return " | ".join([first_cell] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])])

    lines = [fmt(headers), "-+-".join("-" * w for w in widths)]
    lines += [fmt(row) for row in rows]
    for r in reports:
        for ds, dm in r.datasets.items():
            if ds == AVERAGE:
                continue
            lines.append(f"# {r.label} {ds}: {dm.n_queries} queries, {dm.n_errors} failed")
    return "\n".join(lines)


def report_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "dataset", "metric", "value", "percent"])
    for r in reports:
        for ds, dm in r.datasets.items():
            for m, v in dm.values.items():
                writer.writerow([r.label, ds, m, repr(v), f"{100.0 * v:.2f}"])
    return buf.getvalue()


def scored_from_rankings(queries: Iterable[ComposedQuery], rankings: Mapping[str, Sequence[str] | None],
                         subsets: Mapping[str, Sequence[str] | None] | None = None) -> list[ScoredQuery]:
    subsets = subsets or {}
    out = []
    for q in queries:
        if not q.ground_truth_ids:
            raise MetricError("EMPTY_GT", q.query_id, "evaluation needs ground truth")
        out.append(ScoredQuery(q.query_id, q.ground_truth_ids, rankings.get(q.query_id),
                               subsets.get(q.query_id)))
    return out


def scored_from_traces(queries: Iterable[ComposedQuery], traces: Iterable) -> list[ScoredQuery]:
    """Pair dataset queries with stored traces. A query with no trace or an
    error trace scores as a miss."""
    by_id = {t.query_id: t for t in traces}
    rankings, subsets = {}, {}
    for qid, t in by_id.items():
        if t.status == "ok":
            rankings[qid] = t.final_ranking
            subsets[qid] = t.subset_ranking
    return scored_from_rankings(queries, rankings, subsets)


def split_categories(scored: Sequence[ScoredQuery], default: str = "all") -> dict[str, list[ScoredQuery]]:
    """Group by the query-id prefix before ``/`` (``dress/0001`` -> ``dress``),
    the convention for per-category benchmarks."""
    groups: dict[str, list[ScoredQuery]] = {}
    for s in scored:
        cat, sep, _ = s.query_id.partition("/")
        groups.setdefault(cat if sep else default, []).append(s)
    return groups
