"""Command-line entry point: ``cirloop {index,query,eval,synth,report}``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .backends import load_backends
from .core import (BackendError, CirError, ComposedQuery, FusionMode, Pathway, PipelineConfig,
                   load_config_file, parse_fusion_mode, validate_config)
from .eval import (PROTOCOLS, emit_report, load_dataset, render_table, report_csv, scored_from_traces,
                   split_categories, write_dataset)
from .index import build_index, read_embeddings, write_embeddings
from .pipeline import read_traces, run_batch, run_query, write_traces

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
_DEFAULTS = PipelineConfig()


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_pipeline_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat TOML/JSON config file; flags below override it")
    p.add_argument("--backends", required=True, help="backends JSON (ORACLE, FILE_LOOKUP or HTTP profiles)")
    p.add_argument("--mode", help=f"fusion mode: ADA, AVG, RAK, RAK:I2I, T2I_ONLY, I2I_ONLY "
                                  f"(default: {_DEFAULTS.fusion_mode.value})")
    p.add_argument("--lambda", dest="lam", type=float, metavar="R",
                   help=f"AVG weight on the T2I similarity (default: {_DEFAULTS.lam:g})")
    p.add_argument("--tau", type=float, metavar="R", help=f"reliability threshold (default: {_DEFAULTS.tau:g})")
    p.add_argument("--top-k", dest="top_k", type=int, metavar="N",
                   help=f"candidates per pathway (default: {_DEFAULTS.top_k})")
    p.add_argument("--max-iters", dest="max_iterations", type=int, metavar="N",
                   help=f"refinement rounds (default: {_DEFAULTS.max_iterations})")
    p.add_argument("--parallelism", dest="backend_parallelism", type=int, metavar="N",
                   help=f"concurrent backend calls and queries (default: {_DEFAULTS.backend_parallelism})")
    p.add_argument("--seed", dest="rng_seed", type=int, metavar="S", help=f"run seed (default: {_DEFAULTS.rng_seed})")
    p.add_argument("--strict-gate", action="store_true",
                   help="fuse only reliable pathways when one stays uncertain after refinement")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cirloop", description="Training-free composed image retrieval with "
                                                 "dual-pathway verification and refinement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="validate an embedding file and write it in index form")
    p.add_argument("--embeddings", required=True, help="input embeddings (JSONL or binary)")
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--binary", action="store_true", help="write the binary form (default: JSONL)")

    p = sub.add_parser("query", help="rank the database for one composed query")
    p.add_argument("--dataset", required=True, help="dataset JSON providing the database locators")
    p.add_argument("--embeddings", required=True, help="database image embeddings")
    p.add_argument("--reference", required=True, help="reference item id")
    p.add_argument("--text", required=True, help="modification text")
    p.add_argument("--show", type=int, default=10, help="ranked ids to print (default: 10)")
    p.add_argument("--trace", help="write the query trace (JSON Lines) here")
    _add_pipeline_flags(p)

    p = sub.add_parser("eval", help="run a dataset and print benchmark metrics")
    p.add_argument("--dataset", required=True, help="dataset JSON")
    p.add_argument("--embeddings", required=True, help="database image embeddings")
    p.add_argument("--trace", required=True, help="output trace file (JSON Lines)")
    p.add_argument("--timings", help="timings sidecar (default: <trace>.timings.jsonl)")
    p.add_argument("--protocol", choices=sorted(PROTOCOLS), default="full",
                   help="metric set (default: full)")
    p.add_argument("--label", help="row label (default: the fusion mode)")
    _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="generate a seeded synthetic benchmark with oracle backends")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--items", type=int, required=True, help="database size")
    p.add_argument("--queries", type=int, required=True, help="number of queries")
    p.add_argument("--failure", default="none",
                   help='pathway failure spec, e.g. "t2i=visual_drop:1,i2i=semantic_drop:1" (default: none)')
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-visual", type=int, default=8, help="visual attribute tokens (default: 8)")
    p.add_argument("--n-semantic", type=int, default=8, help="semantic attribute tokens (default: 8)")
    p.add_argument("--attrs-per-item", type=int, default=4, help="attributes per item (default: 4)")
    p.add_argument("--edit-ops", type=int, default=1, help="edit operations per query (default: 1)")
    p.add_argument("--binary", action="store_true", help="write embeddings in binary form")

    p = sub.add_parser("report", help="render metric tables and a figure from stored traces")
    p.add_argument("--traces", required=True, action="append", help="trace file; repeat for more rows")
    p.add_argument("--label", action="append", help="row label per --traces (default: file stem)")
    p.add_argument("--dataset", required=True, help="dataset JSON with ground truth")
    p.add_argument("--protocol", choices=sorted(PROTOCOLS), default="full", help="metric set (default: full)")
    p.add_argument("--out", required=True, help="output directory for report.txt/json/csv and report.png")
    p.add_argument("--title", help="figure title")
    return parser


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config_file(args.config) if args.config else PipelineConfig()
    updates = {}
    for name in ("lam", "tau", "top_k", "max_iterations", "backend_parallelism", "rng_seed"):
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    if args.mode is not None:
        mode, path = parse_fusion_mode(args.mode)
        updates["fusion_mode"] = mode
        if path is not None:
            updates["rak_pathway"] = path
        elif mode is FusionMode.RAK:
            updates["rak_pathway"] = Pathway.T2I
    if args.strict_gate:
        updates["strict_gate"] = True
    return validate_config(replace(cfg, **updates))


def _load_run(args, cfg: PipelineConfig):
    dataset = load_dataset(args.dataset, require_gt=args.command == "eval")
    records, dim = read_embeddings(args.embeddings)
    index = build_index(records, dim)
    missing = [i for i in index.ids if i not in dataset.locators]
    if missing:
        raise CirError("MISSING_REFERENCE", missing[0], "embedded item has no locator in the dataset")
    backends = load_backends(args.backends, dim=dim, parallelism=cfg.backend_parallelism)
    return dataset, index, backends


def cmd_index(args) -> int:
    records, dim = read_embeddings(args.embeddings)
    index = build_index(records, dim)
    write_embeddings(args.out, index.records(), dim, binary=args.binary)
    print(f"indexed {len(index)} items, dim {dim}")
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _config_from_args(args)
    dataset, index, backends = _load_run(args, cfg)
    query = ComposedQuery("cli", args.reference, args.text, frozenset())
    result = run_query(query, cfg, backends, index, dataset.locators)
    if args.trace:
        write_traces(args.trace, [result.trace])
    if not result.ok:
        err = result.trace.error or {}
        print(f"query failed: {err.get('code')} {err.get('subject') or ''} {err.get('message') or ''}".rstrip(),
              file=sys.stderr)
        return EXIT_RUNTIME
    for rank, item_id in enumerate(result.ranking[:args.show], start=1):
        print(f"{rank}\t{item_id}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    dataset, index, backends = _load_run(args, cfg)
    results = run_batch(list(dataset.queries), cfg, backends, index, dataset.locators)
    traces = [r.trace for r in results]
    timings = args.timings or f"{args.trace}.timings.jsonl"
    write_traces(args.trace, traces, timings)
    scored = scored_from_traces(dataset.queries, traces)
    groups = split_categories(scored) if args.protocol == "fashioniq" else {Path(args.dataset).stem: scored}
    _, table = emit_report(groups, args.protocol, args.label or cfg.mode_label(), cfg.fingerprint())
    print(table)
    failed = [t for t in traces if t.status != "ok"]
    if failed:
        counts: dict[str, int] = {}
        for t in failed:
            code = (t.error or {}).get("code", "UNKNOWN")
            counts[code] = counts.get(code, 0) + 1
        detail = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
        print(f"{len(failed)} of {len(traces)} queries failed ({detail})", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import gen_corpus, gen_queries, parse_failure_spec

    failure = parse_failure_spec(args.failure)
    corpus = gen_corpus(args.seed, args.items, args.n_visual, args.n_semantic, args.attrs_per_item)
    queries = gen_queries(corpus, args.seed, args.queries, args.edit_ops)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "dataset.json", queries, corpus.manifest())
    emb_name = "embeddings.bin" if args.binary else "embeddings.jsonl"
    write_embeddings(out / emb_name, corpus.records(), len(corpus.vocabulary.universe), binary=args.binary)
    world = corpus.world(failure)
    (out / "oracle.json").write_text(json.dumps(world.to_dict(), indent=1) + "\n", encoding="utf-8")
    backends = {"profiles": [{"role": "ALL", "kind": "ORACLE", "manifest": "oracle.json"}]}
    (out / "backends.json").write_text(json.dumps(backends, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus.items)} items and {len(queries)} queries to {out} (failure: {failure.spec()})")
    return EXIT_OK


def cmd_report(args) -> int:
    from .eval.plotting import plot_reports

    labels = args.label or []
    if labels and len(labels) != len(args.traces):
        raise CirError("RANGE", "--label", "give one --label per --traces or none")
    dataset = load_dataset(args.dataset)
    reports = []
    for i, path in enumerate(args.traces):
        label = labels[i] if labels else Path(path).stem
        scored = scored_from_traces(dataset.queries, read_traces(path))
        groups = split_categories(scored) if args.protocol == "fashioniq" else {Path(args.dataset).stem: scored}
        report, _ = emit_report(groups, args.protocol, label)
        reports.append(report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = render_table(reports)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n",
                                     encoding="utf-8")
    (out / "report.csv").write_text(report_csv(reports), encoding="utf-8")
    plot_reports(reports, out / "report.png", args.title)
    print(table)
    return EXIT_OK


_COMMANDS = {"index": cmd_index, "query": cmd_query, "eval": cmd_eval, "synth": cmd_synth,
             "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except BackendError as exc:
        # setup-time backend failures (unreadable manifest, bad profile) are validation errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.code in ("SCHEMA_ERROR", "RANGE") else EXIT_RUNTIME
    except CirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.code == "BAD_SPEC":
            from .synth import FAILURE_GRAMMAR
            print(f"expected grammar: {FAILURE_GRAMMAR}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
