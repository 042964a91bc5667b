import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cirloop.core import IndexBuildError
from cirloop.index import (MAGIC, EmbeddingRecord, RankedCandidate, build_index, load_index,
                           read_embeddings, union_candidates, write_embeddings)


def _index(rows, ids=None):
    ids = ids or [f"i{j}" for j in range(len(rows))]
    return build_index([EmbeddingRecord(i, np.asarray(r, float)) for i, r in zip(ids, rows)], len(rows[0]))


class TestBuild:
    def test_normalizes(self):
        idx = _index([[3.0, 4.0], [0.0, 2.0]])
        assert np.allclose(np.linalg.norm(idx.vector("i0")), 1.0, atol=1e-7)
        assert idx.vector("i0").dtype == np.float32

    def test_zero_vector(self):
        with pytest.raises(IndexBuildError) as exc:
            _index([[0.0, 0.0]])
        assert exc.value.code == "ZERO_NORM" and exc.value.subject == "i0"

    def test_duplicate_id(self):
        with pytest.raises(IndexBuildError) as exc:
            _index([[1, 0], [0, 1]], ids=["a", "a"])
        assert exc.value.code == "DUPLICATE_ID"

    def test_dim_mismatch(self):
        with pytest.raises(IndexBuildError) as exc:
            build_index([EmbeddingRecord("a", np.ones(3))], 2)
        assert exc.value.code == "DIM_MISMATCH"

    def test_query_dim_mismatch(self):
        with pytest.raises(IndexBuildError):
            _index([[1, 0]]).top_k(np.ones(3), 1)


class TestTopK:
    def test_order_and_ties(self):
        idx = _index([[1, 0], [0, 1], [1, 0], [0.6, 0.8]], ids=["b", "c", "a", "d"])
        got = idx.top_k(np.array([1.0, 0.0]), 3)
        assert [c.item_id for c in got] == ["a", "b", "d"]
        assert got[0].similarity == pytest.approx(1.0)

    def test_k_larger_than_corpus(self):
        idx = _index([[1, 0], [0, 1]])
        assert len(idx.top_k(np.array([1.0, 0.0]), 10)) == 2

    def test_bad_k(self):
        with pytest.raises(IndexBuildError):
            _index([[1, 0]]).top_k(np.array([1.0, 0.0]), 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 45), st.integers(0, 2**32 - 1))
    def test_prefix_of_full_ranking(self, n, d, k, seed):
        rng = np.random.default_rng(seed)
        rows = rng.integers(-2, 3, size=(n, d)).astype(float)
        rows[np.all(rows == 0, axis=1), 0] = 1.0
        idx = _index(list(rows))
        q = rng.normal(size=d)
        full = idx.rank_ids(idx.similarities(q))
        assert [c.item_id for c in idx.top_k(q, k)] == full[:k]


class TestUnion:
    def test_first_appearance_order(self):
        pool = union_candidates([RankedCandidate("a", 0.9), RankedCandidate("b", 0.8)],
                                [RankedCandidate("c", 0.7), RankedCandidate("a", 0.6)])
        assert pool.item_ids == ["a", "b", "c"]
        a = pool.entries[0]
        assert a.in_t2i and a.in_i2i and a.sim_t2i == 0.9 and a.sim_i2i == 0.6
        assert pool.entries[2].sim_t2i is None


class TestFiles:
    def test_jsonl_round_trip(self, tmp_path):
        idx = _index([[1, 2, 3], [0, 1, 0]])
        p = tmp_path / "e.jsonl"
        write_embeddings(p, idx.records(), 3)
        again = load_index(p)
        assert again.ids == idx.ids
        assert np.array_equal(again.vector("i0"), idx.vector("i0"))

    def test_binary_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        idx = _index(list(rng.normal(size=(20, 7))), ids=[f"é{j}" for j in range(20)])
        p = tmp_path / "e.bin"
        write_embeddings(p, idx.records(), 7, binary=True)
        raw = p.read_bytes()
        assert raw[:4] == MAGIC
        assert struct.unpack("<IIQ", raw[4:20]) == (1, 7, 20)
        records, dim = read_embeddings(p)
        assert dim == 7
        for rec in records:
            assert np.array_equal(rec.vector, idx.vector(rec.item_id))

    def test_dim_error_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "a", "vec": [1, 0]}\n\n{"id": "b", "vec": [1, 0, 0]}\n')
        with pytest.raises(IndexBuildError) as exc:
            read_embeddings(p)
        assert exc.value.code == "DIM_MISMATCH"
        assert exc.value.subject.endswith(":3")

    def test_schema_error_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "a", "vec": [1, 0]}\n{"vec": [1, 0]}\n')
        with pytest.raises(IndexBuildError) as exc:
            read_embeddings(p)
        assert exc.value.code == "SCHEMA_ERROR" and exc.value.subject.endswith(":2")

    def test_truncated_binary(self, tmp_path):
        p = tmp_path / "e.bin"
        write_embeddings(p, _index([[1, 0], [0, 1]]).records(), 2, binary=True)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(IndexBuildError):
            read_embeddings(p)
