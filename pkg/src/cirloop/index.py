"""Exact cosine search over an in-memory embedding store.

Vectors are L2-normalized at ingestion and stored as float32; similarities are
computed in float64. Rankings sort by similarity descending and break ties by
item id ascending, so results are identical across platforms.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .core import IndexBuildError

MAGIC = b"WISE"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EmbeddingRecord:
    item_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class RankedCandidate:
    item_id: str
    similarity: float


@dataclass(frozen=True)
class PoolEntry:
    item_id: str
    in_t2i: bool
    in_i2i: bool
    sim_t2i: float | None
    sim_i2i: float | None


@dataclass(frozen=True)
class UnionPool:
    entries: tuple[PoolEntry, ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[PoolEntry]:
        return iter(self.entries)

    @property
    def item_ids(self) -> list[str]:
        return [e.item_id for e in self.entries]


def normalize(vec, item_id: str = "<query>") -> np.ndarray:
    """Return ``vec`` scaled to unit L2 norm as float64. Zero vectors raise ZERO_NORM."""
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        raise IndexBuildError("ZERO_NORM", item_id, "vector has zero or non-finite norm")
    return v / norm


class EmbeddingIndex:
    """Immutable store of unit vectors with exact top-K retrieval."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        self._ids = tuple(ids)
        self._matrix = matrix.astype(np.float32)
        self._matrix.setflags(write=False)
        self._matrix64 = self._matrix.astype(np.float64)
        self._matrix64.setflags(write=False)
        self._row = {item_id: i for i, item_id in enumerate(self._ids)}
        # position of each row in lexicographic id order, used as tie-break key
        order = sorted(range(len(self._ids)), key=self._ids.__getitem__)
        self._id_rank = np.empty(len(self._ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self._ids))

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def __len__(self):
        return len(self._ids)

    def __contains__(self, item_id) -> bool:
        return item_id in self._row

    def vector(self, item_id: str) -> np.ndarray:
        return self._matrix[self._row[item_id]]

    def records(self) -> Iterator[EmbeddingRecord]:
        for item_id, row in zip(self._ids, self._matrix):
            yield EmbeddingRecord(item_id, row)

    def _check_query(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise IndexBuildError("DIM_MISMATCH", "<query>",
                                  f"query has shape {q.shape}, index dim is {self.dim}")
        return q

    def similarities(self, query) -> np.ndarray:
        """Cosine similarity of ``query`` against every stored item, in row order."""
        return self._matrix64 @ self._check_query(query)

    def rank_rows(self, scores: np.ndarray, k: int | None = None) -> np.ndarray:
        """Row indices ordered by score descending, ties by item id; first ``k`` only."""
        n = len(self._ids)
        k = n if k is None else min(k, n)
        if k <= 0:
            return np.empty(0, dtype=np.int64)
        if k < n:
            # every row scoring at least the k-th best is a contender, ties included
            kth = np.partition(scores, n - k)[n - k]
            rows = np.flatnonzero(scores >= kth)
        else:
            rows = np.arange(n)
        order = np.lexsort((self._id_rank[rows], -scores[rows]))
        return rows[order][:k]

    def top_k(self, query, k: int) -> list[RankedCandidate]:
        if k < 1:
            raise IndexBuildError("RANGE", "k", f"k must be positive, got {k}")
        sims = self.similarities(query)
        return [RankedCandidate(self._ids[r], float(sims[r])) for r in self.rank_rows(sims, k)]

    def rank_ids(self, scores: np.ndarray) -> list[str]:
        return [self._ids[r] for r in self.rank_rows(scores)]


def build_index(records: Iterable[EmbeddingRecord], dim: int) -> EmbeddingIndex:
    if dim < 1:
        raise IndexBuildError("RANGE", "dim", "dimension must be positive")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    for rec in records:
        vec = np.asarray(rec.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise IndexBuildError("DIM_MISMATCH", rec.item_id,
                                  f"expected dim {dim}, got {vec.shape[-1] if vec.ndim else 0}")
        if rec.item_id in seen:
            raise IndexBuildError("DUPLICATE_ID", rec.item_id)
        seen.add(rec.item_id)
        ids.append(rec.item_id)
        rows.append(normalize(vec, rec.item_id))
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return EmbeddingIndex(ids, matrix)


def top_k(index: EmbeddingIndex, query, k: int) -> list[RankedCandidate]:
    return index.top_k(query, k)


def union_candidates(r_t2i: Sequence[RankedCandidate], r_i2i: Sequence[RankedCandidate]) -> UnionPool:
    """Union of both pathways' candidates in first-appearance order (T2I list first)."""
    t2i = {c.item_id: c.similarity for c in r_t2i}
    i2i = {c.item_id: c.similarity for c in r_i2i}
    order = list(t2i) + [i for i in i2i if i not in t2i]
    return UnionPool(tuple(
        PoolEntry(item_id, item_id in t2i, item_id in i2i, t2i.get(item_id), i2i.get(item_id))
        for item_id in order
    ))


# -- embedding files ---------------------------------------------------------

def iter_jsonl_records(stream: Iterable[str], source: str = "<stream>") -> Iterator[tuple[int, EmbeddingRecord]]:
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            item_id = obj["id"]
            vec = np.asarray(obj["vec"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IndexBuildError("SCHEMA_ERROR", f"{source}:{lineno}", str(exc)) from None
        if not isinstance(item_id, str) or vec.ndim != 1:
            raise IndexBuildError("SCHEMA_ERROR", f"{source}:{lineno}", "expected {id: str, vec: [reals]}")
        yield lineno, EmbeddingRecord(item_id, vec)


def _read_binary(fh: BinaryIO, source: str) -> tuple[list[EmbeddingRecord], int]:
    header = fh.read(20)
    if len(header) < 20 or header[:4] != MAGIC:
        raise IndexBuildError("SCHEMA_ERROR", source, "bad binary header")
    version, dim, count = struct.unpack("<IIQ", header[4:])
    if version != FORMAT_VERSION:
        raise IndexBuildError("SCHEMA_ERROR", source, f"unsupported version {version}")
    records = []
    for i in range(count):
        (n,) = struct.unpack("<I", fh.read(4))
        item_id = fh.read(n).decode("utf-8")
        buf = fh.read(4 * dim)
        if len(buf) != 4 * dim:
            raise IndexBuildError("SCHEMA_ERROR", f"{source}:record {i}", "truncated vector")
        records.append(EmbeddingRecord(item_id, np.frombuffer(buf, dtype="<f4").copy()))
    return records, dim


def read_embeddings(path: str | Path) -> tuple[list[EmbeddingRecord], int]:
    """Read a JSONL or binary embedding file; returns records and their dimension.

    Dimension consistency is checked line by line so errors name the line.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) == MAGIC:
            fh.seek(0)
            return _read_binary(fh, str(path))
    records = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, rec in iter_jsonl_records(fh, str(path)):
            if dim is None:
                dim = rec.vector.shape[0]
            elif rec.vector.shape[0] != dim:
                raise IndexBuildError("DIM_MISMATCH", f"{path}:{lineno}",
                                      f"item {rec.item_id} has dim {rec.vector.shape[0]}, expected {dim}")
            records.append(rec)
    if dim is None:
        raise IndexBuildError("SCHEMA_ERROR", str(path), "no records")
    return records, dim


def load_index(path: str | Path) -> EmbeddingIndex:
    records, dim = read_embeddings(path)
    return build_index(records, dim)


def write_embeddings(path: str | Path, records: Iterable[EmbeddingRecord], dim: int, binary: bool = False) -> int:
    """Write records in canonical JSONL or the binary form; returns the count."""
    records = list(records)
    path = Path(path)
    if binary:
        buf = io.BytesIO()
        buf.write(MAGIC + struct.pack("<IIQ", FORMAT_VERSION, dim, len(records)))
        for rec in records:
            raw = rec.item_id.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(np.asarray(rec.vector, dtype="<f4").tobytes())
        path.write_bytes(buf.getvalue())
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                vec = [float(x) for x in np.asarray(rec.vector, dtype=np.float32)]
                fh.write(json.dumps({"id": rec.item_id, "vec": vec}) + "\n")
    return len(records)
