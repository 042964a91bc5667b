"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line."""

import functools
import json
import random
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from cirloop import PipelineConfig, build_index, run_batch, write_traces
from cirloop.core import FusionMode, Pathway
from cirloop.eval import ScoredQuery, emit_report, map_at_k, recall_at_k, recall_subset_at_k
from cirloop.fusion import VerifiedCandidate, confidence_from_logits, fuse_rank, gate
from cirloop.index import EmbeddingRecord
from cirloop.synth import FailureModeConfig, gen_corpus, gen_queries, oracle_suite

FIXTURES = Path(__file__).parent / "fixtures"

# designated synthetic setups
COMPLEMENT_SEED, COMPLEMENT_ITEMS, COMPLEMENT_QUERIES = 7, 300, 60
REFINE_SEED, REFINE_ITEMS, REFINE_QUERIES, REFINE_TOP_K = 0, 200, 60, 5


def _r1(results, queries, ids=None):
    ids = range(len(queries)) if ids is None else ids
    hits = [recall_at_k(results[i].ranking, queries[i].ground_truth_ids, 1) for i in ids]
    return sum(hits) / len(hits)


def _synth(seed, items, queries):
    corpus = gen_corpus(seed, items)
    qs = gen_queries(corpus, seed, queries)
    index = build_index(corpus.records(), len(corpus.vocabulary.universe))
    return corpus, qs, index


class TestConfidenceFormula:
    def test_matches_high_precision_softmax(self, record_criterion):
        rng = random.Random(1)
        pairs = []
        for i in range(10_000):
            scale = (1.0, 30.0, 700.0)[i % 3]
            pairs.append((rng.uniform(-scale, scale), rng.uniform(-scale, scale)))
        start = time.perf_counter()
        ours = [confidence_from_logits(a, b) for a, b in pairs]
        swapped = [confidence_from_logits(b, a) for a, b in pairs]
        elapsed = time.perf_counter() - start
        worst = worst_sum = 0.0
        with mpmath.workdps(50):
            for (a, b), c, c_swap in zip(pairs, ours, swapped):
                ea, eb = mpmath.exp(mpmath.mpf(a)), mpmath.exp(mpmath.mpf(b))
                exact = ea / (ea + eb)
                worst = max(worst, float(abs(mpmath.mpf(c) - exact)))
                worst_sum = max(worst_sum, abs(c + c_swap - 1.0))
        ok = worst <= 1e-12 and worst_sum <= 1e-12 and elapsed < 1.0
        record_criterion(1, "confidence formula", ok,
                         f"max err {worst:.2e}, complement err {worst_sum:.2e}, {elapsed:.3f}s")
        assert worst <= 1e-12
        assert worst_sum <= 1e-12
        assert elapsed < 1.0


class TestTopKExactness:
    def test_matches_full_sort_prefix(self, record_criterion):
        start = time.perf_counter()
        mismatches = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 1001))
            d = int(rng.integers(1, 65))
            # coarse values plus duplicated rows force exact similarity ties
            vecs = rng.integers(-3, 4, size=(n, d)).astype(np.float64)
            vecs[np.all(vecs == 0, axis=1), 0] = 1.0
            if n > 4:
                dup = rng.choice(n, size=n // 4)
                vecs[dup] = vecs[rng.choice(n, size=len(dup))]
            ids = [f"id{int(j):05d}" for j in rng.permutation(n)]
            index = build_index([EmbeddingRecord(i, v) for i, v in zip(ids, vecs)], d)
            query = rng.normal(size=d) if seed % 2 else vecs[int(rng.integers(n))]
            query = query / np.linalg.norm(query)
            k = int(rng.integers(1, n + 5))

            stored = np.vstack([index.vector(i).astype(np.float64) for i in ids])
            sims = stored @ query
            brute = sorted(range(n), key=lambda r: (-sims[r], ids[r]))
            expected = [ids[r] for r in brute][:k]
            got = [c.item_id for c in index.top_k(query, k)]
            mismatches += got != expected
        elapsed = time.perf_counter() - start
        ok = mismatches == 0 and elapsed < 30
        record_criterion(2, "top-K exactness", ok, f"{mismatches} mismatching corpora of 100, {elapsed:.2f}s")
        assert mismatches == 0
        assert elapsed < 30


def _brute_compare(a: VerifiedCandidate, b: VerifiedCandidate) -> int:
    ta = a.confidence if a.in_t2i else 0.0
    ia = a.confidence if a.in_i2i else 0.0
    tb = b.confidence if b.in_t2i else 0.0
    ib = b.confidence if b.in_i2i else 0.0
    for x, y in ((ta + ia, tb + ib), (max(ta, ia), max(tb, ib)), (ta, tb)):
        if x != y:
            return -1 if x > y else 1
    return (a.item_id > b.item_id) - (a.item_id < b.item_id)


class TestFusionOrder:
    def test_equals_comparator_sort(self, record_criterion):
        start = time.perf_counter()
        mismatches = 0
        for seed in range(1000):
            rng = random.Random(seed)
            n = rng.randint(1, 200)
            levels = [0.0, 0.25, 0.5, 0.7, 0.9, 1.0]
            cands = []
            for j in rng.sample(range(10 * n), n):
                member = rng.choice([(True, False), (False, True), (True, True)])
                conf = rng.choice(levels) if seed % 2 else rng.random()
                cands.append(VerifiedCandidate(f"c{j}", conf, *member))
            expected = [c.item_id for c in sorted(cands, key=functools.cmp_to_key(_brute_compare))]
            mismatches += fuse_rank(cands) != expected
        elapsed = time.perf_counter() - start
        ok = mismatches == 0 and elapsed < 10
        record_criterion(3, "fusion order equals brute-force comparator", ok,
                         f"{mismatches} mismatching sets of 1000, {elapsed:.2f}s")
        assert mismatches == 0
        assert elapsed < 10


class TestGateTruthTable:
    def test_nine_combinations(self, record_criterion):
        levels = (0.65, 0.70, 0.90)
        expected = {}
        for r_t in levels:
            for r_i in levels:
                want = set()
                if r_t == 0.65:
                    want.add(Pathway.T2I)
                if r_i == 0.65:
                    want.add(Pathway.I2I)
                expected[(r_t, r_i)] = frozenset(want)
        got = {(r_t, r_i): gate(r_t, r_i, 0.7) for r_t in levels for r_i in levels}
        wrong = [key for key in expected if got[key] != expected[key]]
        record_criterion(4, "gate truth table at tau=0.7", not wrong, f"{9 - len(wrong)}/9 correct")
        assert not wrong


def _oracle_ap(ranking, gt, k):
    hits, precisions = 0, []
    for i in range(min(k, len(ranking))):
        if ranking[i] in gt:
            hits += 1
            precisions.append(hits / (i + 1))
    return sum(precisions) / min(len(gt), k)


class TestMetricHandCases:
    def test_hand_cases_and_oracle(self, record_criterion):
        checks = [
            abs(map_at_k(list("axbyz"), {"a", "b"}, 5) - 0.833333) <= 1e-6,
            abs(map_at_k(list("axbyz"), {"a", "b"}, 5) - 5 / 6) <= 1e-9,
            map_at_k(["a", "x"], {"a"}, 1) == 1.0 and map_at_k(["a", "x", "y"], {"a"}, 50) == 1.0,
            map_at_k(list("xyz"), {"a", "b"}, 3) == 0.0,
            recall_at_k(["g", "x", "y"], {"g"}, 1) == 1.0,
            recall_at_k(["x", "y", "g"], {"g"}, 2) == 0.0,
            recall_at_k(["x", "g1", "g2"], {"g1", "g2"}, 2) == 1.0,
            recall_subset_at_k(["t", "a", "b", "c", "d", "e"], {"t"}, 1) == 1.0,
            recall_subset_at_k(["a", "b", "t", "c", "d", "e"], {"t"}, 2) == 0.0,
            recall_subset_at_k(["a", "b", "t", "c", "d", "e"], {"t"}, 3) == 1.0,
        ]
        rng = random.Random(5)
        disagreements = 0
        for _ in range(1000):
            universe = [f"i{j}" for j in range(rng.randint(1, 60))]
            ranking = rng.sample(universe, rng.randint(1, len(universe)))
            gt = set(rng.sample(universe, rng.randint(1, min(8, len(universe)))))
            k = rng.randint(1, 60)
            disagreements += abs(map_at_k(ranking, gt, k) - _oracle_ap(ranking, gt, k)) > 1e-12
            disagreements += recall_at_k(ranking, gt, k) != float(any(i in gt for i in ranking[:k]))
        ok = all(checks) and disagreements == 0
        record_criterion(5, "metric hand cases and oracle agreement", ok,
                         f"{sum(checks)}/{len(checks)} hand cases, {disagreements} oracle disagreements")
        assert all(checks)
        assert disagreements == 0


class TestComplementarity:
    def test_ada_beats_single_pathways(self, record_criterion):
        start = time.perf_counter()
        corpus, queries, index = _synth(COMPLEMENT_SEED, COMPLEMENT_ITEMS, COMPLEMENT_QUERIES)
        failure = FailureModeConfig(t2i_visual_drop=1, i2i_semantic_drop=1)
        scores = {}
        for label, cfg in {
            "ADA": PipelineConfig(),
            "T2I_ONLY": PipelineConfig(fusion_mode=FusionMode.T2I_ONLY),
            "I2I_ONLY": PipelineConfig(fusion_mode=FusionMode.I2I_ONLY),
            "AVG": PipelineConfig(fusion_mode=FusionMode.AVG, lam=0.5),
        }.items():
            results = run_batch(queries, cfg, oracle_suite(corpus.world(), failure), index, corpus.manifest())
            assert all(r.ok for r in results)
            scores[label] = _r1(results, queries)
        elapsed = time.perf_counter() - start
        best_single = max(scores["T2I_ONLY"], scores["I2I_ONLY"])
        ok = scores["ADA"] > best_single and scores["AVG"] <= scores["ADA"] and elapsed < 60
        detail = ", ".join(f"{k} R@1={v:.3f}" for k, v in scores.items()) + f", {elapsed:.1f}s"
        record_criterion(6, "end-to-end complementarity", ok, detail)
        assert scores["ADA"] > best_single
        assert scores["AVG"] <= scores["ADA"]
        assert elapsed < 60


class TestRefinementBenefit:
    def test_refinement_helps_uncertain_queries_only(self, record_criterion):
        start = time.perf_counter()
        corpus, queries, index = _synth(REFINE_SEED, REFINE_ITEMS, REFINE_QUERIES)
        failure = FailureModeConfig(t2i_visual_drop=2, i2i_semantic_drop=2)
        runs = {}
        for n in (0, 1):
            cfg = PipelineConfig(top_k=REFINE_TOP_K, max_iterations=n)
            runs[n] = run_batch(queries, cfg, oracle_suite(corpus.world(), failure), index, corpus.manifest())
        uncertain = [i for i, r in enumerate(runs[0]) if r.trace.iterations[0].gate]
        reliable = [i for i in range(len(queries)) if i not in uncertain]
        r0, r1 = _r1(runs[0], queries, uncertain), _r1(runs[1], queries, uncertain)
        refiner_calls = sum(runs[1][i].trace.call_counts.get("REFINER", 0) for i in reliable)
        elapsed = time.perf_counter() - start
        ok = bool(uncertain) and r1 > r0 and refiner_calls == 0 and elapsed < 60
        record_criterion(7, "refinement benefit", ok,
                         f"{len(uncertain)} uncertain queries, R@1 N=0 {r0:.3f} -> N=1 {r1:.3f}, "
                         f"{refiner_calls} refiner calls on {len(reliable)} reliable, {elapsed:.1f}s")
        assert uncertain
        assert r1 > r0
        assert refiner_calls == 0
        assert elapsed < 60


class TestDeterminism:
    def test_trace_bytes_identical(self, record_criterion, tmp_path):
        corpus, queries, index = _synth(11, 150, 30)
        failure = FailureModeConfig(t2i_visual_drop=2, i2i_semantic_drop=2)
        blobs = []
        for run, workers in enumerate((1, 1, 8, 8)):
            cfg = PipelineConfig(top_k=5, backend_parallelism=workers)
            suite = oracle_suite(corpus.world(), failure, parallelism=workers)
            results = run_batch(queries, cfg, suite, index, corpus.manifest())
            path = tmp_path / f"trace{run}.jsonl"
            write_traces(path, [r.trace for r in results])
            blobs.append(path.read_bytes())
        refined = sum(json.loads(line)["refinement_rounds"] > 0 for line in blobs[0].decode().splitlines())
        ok = len(set(blobs)) == 1
        record_criterion(8, "byte-identical traces across runs and parallelism 1/8", ok,
                         f"{len(set(blobs))} distinct outputs, {refined} queries refined")
        assert ok
        assert refined > 0


class TestReportFidelity:
    def test_circo_row(self, record_criterion):
        doc = json.loads((FIXTURES / "circo_vitb32_rankings.json").read_text())
        scored = [ScoredQuery(q["query_id"], frozenset(q["ground_truth_ids"]), q["ranking"])
                  for q in doc["queries"]]
        report, table = emit_report({"CIRCO": scored}, "circo", doc["label"])
        header, _, row = table.splitlines()[:3]
        cells = dict(zip([c.strip() for c in header.split("|")], [c.strip() for c in row.split("|")]))
        expected = {"Method": "ViT-B/32", "mAP@5": "32.23", "mAP@10": "33.18", "mAP@25": "34.82",
                    "mAP@50": "35.35"}
        ok = cells == expected
        record_criterion(9, "report fidelity (CIRCO ViT-B/32 row)", ok, f"row: {row.strip()}")
        assert cells == expected
        assert report.datasets["CIRCO"].n_queries == 800
