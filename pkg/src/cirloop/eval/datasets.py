"""Dataset JSON I/O.

Schema (one for every benchmark)::

    {"queries": [{"query_id", "reference_id", "modification_text",
                  "ground_truth_ids": [...], "subset_ids": [... optional]}],
     "database": [{"id", "image": "<locator>"}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..core import CirError, ComposedQuery, DatasetError


@dataclass(frozen=True)
class Dataset:
    queries: tuple[ComposedQuery, ...]
    locators: dict[str, str]


_REQUIRED = ("query_id", "reference_id", "modification_text", "ground_truth_ids")


def _schema(where: str, field: str, msg: str) -> DatasetError:
    return DatasetError("SCHEMA_ERROR", f"{where}.{field}", msg)


def parse_dataset(doc: Mapping, require_gt: bool = True) -> Dataset:
    if not isinstance(doc, Mapping):
        raise _schema("$", "", "top level must be an object")
    db = doc.get("database")
    if not isinstance(db, list):
        raise _schema("$", "database", "missing or not a list")
    locators: dict[str, str] = {}
    for i, entry in enumerate(db):
        where = f"database[{i}]"
        if not isinstance(entry, Mapping) or not isinstance(entry.get("id"), str):
            raise _schema(where, "id", "expected {id: str, image: str}")
        if not isinstance(entry.get("image"), str) or not entry["image"]:
            raise _schema(where, "image", "missing locator")
        if entry["id"] in locators:
            raise _schema(where, "id", f"duplicate id {entry['id']!r}")
        locators[entry["id"]] = entry["image"]

    raw_queries = doc.get("queries")
    if not isinstance(raw_queries, list):
        raise _schema("$", "queries", "missing or not a list")
    queries = []
    seen = set()
    for i, q in enumerate(raw_queries):
        where = f"queries[{i}]"
        if not isinstance(q, Mapping):
            raise _schema(where, "", "expected an object")
        for key in _REQUIRED:
            if key not in q:
                raise _schema(where, key, "missing field")
        gt = q["ground_truth_ids"]
        if not isinstance(gt, list) or not all(isinstance(g, str) for g in gt):
            raise _schema(where, "ground_truth_ids", "expected a list of ids")
        if require_gt and not gt:
            raise _schema(where, "ground_truth_ids", "empty ground truth")
        subset = q.get("subset_ids")
        if subset is not None and (not isinstance(subset, list) or len(subset) != 6):
            raise _schema(where, "subset_ids", "subset must list exactly 6 ids")
        try:
            query = ComposedQuery(str(q["query_id"]), str(q["reference_id"]), str(q["modification_text"]),
                                  frozenset(gt), tuple(subset) if subset is not None else None)
        except CirError as exc:
            raise _schema(where, exc.subject or "", str(exc)) from None
        if query.query_id in seen:
            raise _schema(where, "query_id", f"duplicate query id {query.query_id!r}")
        seen.add(query.query_id)
        if query.reference_id not in locators:
            raise DatasetError("MISSING_REFERENCE", query.query_id,
                               f"reference {query.reference_id!r} is not in the database")
        queries.append(query)
    return Dataset(tuple(queries), locators)


def load_dataset(path: str | Path, require_gt: bool = True) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError("SCHEMA_ERROR", f"line {exc.lineno}", exc.msg) from None
    return parse_dataset(doc, require_gt)


def dataset_to_dict(queries: Sequence[ComposedQuery], locators: Mapping[str, str]) -> dict:
    out_q = []
    for q in queries:
        entry = {
            "query_id": q.query_id,
            "reference_id": q.reference_id,
            "modification_text": q.modification_text,
            "ground_truth_ids": sorted(q.ground_truth_ids),
        }
        if q.subset_ids is not None:
            entry["subset_ids"] = list(q.subset_ids)
        out_q.append(entry)
    return {"queries": out_q, "database": [{"id": k, "image": v} for k, v in locators.items()]}


def write_dataset(path: str | Path, queries: Sequence[ComposedQuery], locators: Mapping[str, str]):
    Path(path).write_text(json.dumps(dataset_to_dict(queries, locators), indent=1) + "\n", encoding="utf-8")
