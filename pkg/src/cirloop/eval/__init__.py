from .datasets import Dataset, load_dataset, parse_dataset, write_dataset
from .metrics import map_at_k, recall_at_k, recall_subset_at_k
from .report import (PROTOCOLS, DatasetMetrics, MetricReport, ScoredQuery, emit_report, evaluate,
                     render_table, report_csv, scored_from_rankings, scored_from_traces,
                     split_categories)

__all__ = [
    "PROTOCOLS", "Dataset", "DatasetMetrics", "MetricReport", "ScoredQuery", "emit_report", "evaluate",
    "load_dataset", "map_at_k", "parse_dataset", "recall_at_k", "recall_subset_at_k", "render_table",
    "report_csv", "scored_from_rankings", "scored_from_traces", "split_categories", "write_dataset",
]
