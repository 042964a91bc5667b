import csv
import io
import json

import pytest
from hypothesis import given, strategies as st

from cirloop.core import ComposedQuery, DatasetError, MetricError
from cirloop.eval import (DatasetMetrics, MetricReport, ScoredQuery, emit_report, evaluate, load_dataset,
                          map_at_k, parse_dataset, recall_at_k, recall_subset_at_k, render_table, report_csv,
                          scored_from_rankings, scored_from_traces, split_categories, write_dataset)
from cirloop.pipeline import QueryTrace


class TestMetrics:
    def test_recall(self):
        assert recall_at_k(["g", "x", "y"], {"g"}, 1) == 1.0
        assert recall_at_k(["x", "y", "g"], {"g"}, 2) == 0.0
        assert recall_at_k(["x", "g1", "g2"], {"g1", "g2"}, 2) == 1.0

    def test_subset_recall(self):
        assert recall_subset_at_k(list("tabcde"), {"t"}, 1) == 1.0
        assert recall_subset_at_k(list("abtcde"), {"t"}, 2) == 0.0
        assert recall_subset_at_k(list("abtcde"), {"t"}, 3) == 1.0

    @pytest.mark.parametrize("ranking", [list("tabcd"), list("tabcdd"), list("abcdef")])
    def test_bad_subset(self, ranking):
        with pytest.raises(MetricError) as exc:
            recall_subset_at_k(ranking, {"t"}, 1)
        assert exc.value.code == "BAD_SUBSET"

    def test_map(self):
        assert map_at_k(list("axbyz"), {"a", "b"}, 5) == pytest.approx(5 / 6, abs=1e-12)
        assert map_at_k(["a", "b"], {"a"}, 7) == 1.0
        assert map_at_k(list("xyz"), {"a", "b"}, 3) == 0.0
        # normalized by min(|gt|, k)
        assert map_at_k(["a", "b"], {"a", "b", "c"}, 2) == 1.0

    def test_empty_gt(self):
        for fn in (recall_at_k, map_at_k):
            with pytest.raises(MetricError) as exc:
                fn(["a"], set(), 1)
            assert exc.value.code == "EMPTY_GT"

    @given(st.lists(st.integers(0, 30), unique=True, min_size=1, max_size=30),
           st.sets(st.integers(0, 30), min_size=1, max_size=6), st.integers(1, 40))
    def test_map_bounds_and_recall_relation(self, ranking, gt, k):
        ranking = [str(i) for i in ranking]
        gt = {str(i) for i in gt}
        m = map_at_k(ranking, gt, k)
        assert 0.0 <= m <= 1.0 + 1e-12
        assert (m > 0) == (recall_at_k(ranking, gt, k) == 1.0)


def _scored(rankings, gts):
    return [ScoredQuery(f"q{i}", frozenset(g), r) for i, (r, g) in enumerate(zip(rankings, gts))]


class TestReport:
    def test_saturation(self):
        scored = _scored([["a", "b"], ["c"]], [{"a"}, {"c"}])
        report, table = emit_report({"d": scored}, "circo", "perfect")
        assert all(v == 1.0 for v in report.datasets["d"].values.values())
        assert table.splitlines()[2].split("|")[1].strip() == "100.00"

    def test_half(self):
        scored = _scored([["a"], ["x", "c"]], [{"a"}, {"c"}])
        report, table = emit_report({"d": scored}, "full")
        assert report.datasets["d"].values["R@1"] == 0.5
        header, _, row = table.splitlines()[:3]
        cells = dict(zip([c.strip() for c in header.split("|")], [c.strip() for c in row.split("|")]))
        assert cells["R@1"] == "50.00" and cells["R@5"] == "100.00"

    def test_failed_queries_count_as_misses(self):
        scored = [ScoredQuery("a", frozenset({"x"}), ["x"]), ScoredQuery("b", frozenset({"y"}), None)]
        m = evaluate(scored, "full")
        assert m.values["R@1"] == 0.5 and m.n_errors == 1 and m.n_queries == 2

    def test_cirr_needs_subsets(self):
        with pytest.raises(MetricError):
            evaluate(_scored([["a"]], [{"a"}]), "cirr")
        scored = [ScoredQuery("q", frozenset({"t"}), ["t"], list("abtcde"))]
        m = evaluate(scored, "cirr")
        assert (m.values["Rsub@1"], m.values["Rsub@3"]) == (0.0, 1.0)

    def test_full_adds_subset_metrics_when_present(self):
        scored = [ScoredQuery("q", frozenset({"t"}), ["t"], list("tabcde"))]
        assert "Rsub@1" in evaluate(scored, "full").values
        assert "Rsub@1" not in evaluate(_scored([["a"]], [{"a"}]), "full").values

    def test_unknown_protocol(self):
        with pytest.raises(MetricError):
            evaluate([], "trec")

    def test_fashioniq_average(self):
        groups = {
            "dress": _scored([["a"] + ["x"] * 60], [{"a"}]),
            "shirt": _scored([["x"] * 20 + ["b"]], [{"b"}]),
        }
        report, table = emit_report(groups, "fashioniq", "run")
        avg = report.datasets["Avg"].values
        assert avg == {"R@10": 0.5, "R@50": 1.0}
        assert "Avg R@10" in table.splitlines()[0]

    def test_split_categories(self):
        scored = [ScoredQuery("dress/1", frozenset({"a"}), ["a"]), ScoredQuery("toptee/2", frozenset({"a"}), ["a"]),
                  ScoredQuery("3", frozenset({"a"}), ["a"])]
        assert list(split_categories(scored)) == ["dress", "toptee", "all"]

    def test_table_csv_json(self):
        a = MetricReport("circo", "A", {"d": DatasetMetrics({"mAP@5": 0.12345, "mAP@10": 0.5}, 4)})
        b = MetricReport("circo", "Longer label", {"d": DatasetMetrics({"mAP@5": 1.0, "mAP@10": 0.0}, 4)})
        lines = render_table([a, b]).splitlines()
        assert len({len(line) for line in lines[:4]}) == 1
        assert "12.35" in lines[2] and "100.00" in lines[3]
        rows = list(csv.DictReader(io.StringIO(report_csv([a, b]))))
        assert rows[0] == {"label": "A", "dataset": "d", "metric": "mAP@5", "value": "0.12345", "percent": "12.35"}
        assert json.loads(a.to_json())["datasets"]["d"]["metrics"]["mAP@5"] == 0.12345

    def test_scored_from_traces(self):
        queries = [ComposedQuery("q1", "r", "t", frozenset({"a"})), ComposedQuery("q2", "r", "t", frozenset({"b"})),
                   ComposedQuery("q3", "r", "t", frozenset({"c"}))]
        ok = QueryTrace("q1", "ADA", final_ranking=["a", "b"])
        err = QueryTrace("q2", "ADA", status="error", error={"code": "X"})
        scored = scored_from_traces(queries, [ok, err])
        assert [s.failed for s in scored] == [False, True, True]

    def test_scored_requires_gt(self):
        with pytest.raises(MetricError):
            scored_from_rankings([ComposedQuery("q", "r", "t")], {})


def _doc():
    return {
        "queries": [{"query_id": "q1", "reference_id": "a", "modification_text": "make it red",
                     "ground_truth_ids": ["b"], "subset_ids": ["a", "b", "c", "d", "e", "f"]}],
        "database": [{"id": i, "image": f"img/{i}.png"} for i in "abcdef"],
    }


class TestDatasets:
    def test_minimal(self):
        ds = parse_dataset(_doc())
        assert len(ds.queries) == 1 and ds.locators["a"] == "img/a.png"
        assert ds.queries[0].subset_ids == tuple("abcdef")

    def test_missing_reference(self):
        doc = _doc()
        doc["queries"][0]["reference_id"] = "zz"
        with pytest.raises(DatasetError) as exc:
            parse_dataset(doc)
        assert exc.value.code == "MISSING_REFERENCE"

    def test_five_member_subset(self):
        doc = _doc()
        doc["queries"][0]["subset_ids"] = list("abcde")
        with pytest.raises(DatasetError) as exc:
            parse_dataset(doc)
        assert exc.value.code == "SCHEMA_ERROR" and exc.value.subject == "queries[0].subset_ids"

    def test_missing_field(self):
        doc = _doc()
        del doc["queries"][0]["modification_text"]
        with pytest.raises(DatasetError) as exc:
            parse_dataset(doc)
        assert exc.value.subject == "queries[0].modification_text"

    def test_ground_truth_optional_for_queries(self):
        doc = _doc()
        doc["queries"][0]["ground_truth_ids"] = []
        del doc["queries"][0]["subset_ids"]
        with pytest.raises(DatasetError):
            parse_dataset(doc)
        assert parse_dataset(doc, require_gt=False).queries[0].ground_truth_ids == frozenset()

    def test_round_trip(self, tmp_path):
        ds = parse_dataset(_doc())
        p = tmp_path / "d.json"
        write_dataset(p, ds.queries, ds.locators)
        assert load_dataset(p) == ds

    def test_bad_json_names_line(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text('{\n"queries": [\n,]}')
        with pytest.raises(DatasetError) as exc:
            load_dataset(p)
        assert exc.value.subject == "line 3"


def test_plot_writes_png(tmp_path):
    from cirloop.eval.plotting import plot_reports
    a = MetricReport("circo", "A", {"d": DatasetMetrics({"mAP@5": 0.3, "mAP@10": 0.4}, 2)})
    b = MetricReport("circo", "B", {"d": DatasetMetrics({"mAP@5": 0.5, "mAP@10": 0.6}, 2)})
    out = plot_reports([a, b], tmp_path / "sub" / "r.png", title="t")
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
