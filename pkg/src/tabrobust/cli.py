"""Command-line entry point: ``tabrobust {prepare,fetch-data,sweep,train,analyze}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import data, learners, public_data
from .metrics import DEFAULT_ALPHA, DEFAULT_EPSILON, ScoredPredictions, evaluate
from .robust import ObjectiveError
from .sweep import analysis, grids, runner

DEFAULT_SEED = 0
ANALYSES = ("frontier", "select", "compare", "sensitivity", "correlations")

logger = logging.getLogger("tabrobust")


class UsageError(Exception):
    """Bad arguments or configuration; exit code 2."""


def _split_spec(args) -> data.SplitSpec | None:
    if args.split_mode is None and args.split_fractions is None and args.split_seed is None:
        return None
    fr = tuple(args.split_fractions) if args.split_fractions else (0.8, 0.1, 0.1)
    return data.SplitSpec(fr, args.split_seed or 0, args.split_mode or "random")


def _schema(path: str) -> data.DatasetSchema:
    p = Path(path)
    if not p.exists():
        # bundled schema by dataset name
        try:
            p = public_data.schema_path(path)
        except (KeyError, ValueError):
            raise UsageError(f"schema file {path} not found") from None
        if not p.exists():
            raise UsageError(f"schema file {path} not found")
    return data.load_schema(p)


def _dataset(args) -> data.TabularDataset:
    """A cache file from ``prepare``, or a CSV when ``--schema`` is given."""
    if args.data is None:
        raise UsageError("--data is required")
    if not Path(args.data).exists():
        raise UsageError(f"data file {args.data} not found")
    if getattr(args, "schema", None):
        return data.prepare(args.data, _schema(args.schema), _split_spec(args))
    return data.TabularDataset.load(args.data)


def cmd_prepare(args) -> int:
    if args.schema is None:
        raise UsageError("--schema is required")
    ds = _dataset(args)
    out = Path(args.out or f"{ds.name}.cache")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    print(ds.summary())
    print(f"wrote {out}")
    return 0


def cmd_fetch_data(args) -> int:
    paths = public_data.build_all(args.out or "data", try_urls=not args.offline)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def _configs(args, ds_name: str) -> list[dict]:
    spec = grids.load_grid(args.grid)
    configs = grids.expand_grid(spec, ds_name)
    if args.limit is not None:
        configs = configs[:args.limit]
    print(f"grid {spec.name}: {spec.size} configs" + (f" (running first {len(configs)})" if args.limit else ""))
    return configs


def cmd_sweep(args) -> int:
    if args.grid is None:
        raise UsageError("--grid is required")
    if args.parallelism < 1:
        raise UsageError("--parallelism must be positive")
    ds = _dataset(args)
    configs = _configs(args, ds.name)
    store = runner.ResultStore(args.out or f"{ds.name}_results.jsonl")

    def progress(i, total, rec):
        if args.verbose or i == total or i % max(1, total // 20) == 0:
            print(f"[{i}/{total}] {rec.config_id} {rec.status}", flush=True)

    done_before = store.completed_ids() if (store.path.exists() and not args.no_resume) else set()
    if done_before:
        print(f"resuming: {len(done_before)} configs already recorded in {store.path}")
    recs = runner.run_sweep(configs, ds, args.parallelism, args.seed, store, args.alpha, args.epsilon,
                            resume=not args.no_resume, progress=progress)
    tally = Counter(r.status for r in recs)
    print(f"done: {tally.get('ok', 0)} ok, {tally.get('failed', 0)} failed, {len(done_before)} skipped -> {store.path}")
    return 0


def cmd_train(args) -> int:
    if args.family not in learners.FAMILIES:
        raise UsageError(f"unknown family {args.family!r}; expected one of {learners.FAMILIES}")
    try:
        config = json.loads(args.config) if args.config else {}
    except json.JSONDecodeError as e:
        raise UsageError(f"--config is not valid JSON: {e}") from None
    ds = _dataset(args)
    params = {k: v for k, v in config.items() if k != "family"}
    model = learners.fit_model(args.family, ds, params, seed=args.seed)
    result = {}
    for split in runner.EVAL_SPLITS:
        X, y, g = ds.part(split)
        m = evaluate(ScoredPredictions(learners.predict(model, X), y, g), args.alpha, args.epsilon)
        result[split] = {"accuracy": m["accuracy"]["overall"],
                         "worst_group_accuracy": m["accuracy"]["worst_group"],
                         "cross_entropy": m["cross_entropy"]["overall"], "cvar": m["cvar"]["overall"]}
    print(json.dumps(result, indent=2))
    if args.save:
        learners.save_model(model, args.save)
        print(f"wrote {args.save}")
    return 0


def _load_stores(paths) -> dict[str, list[runner.RunRecord]]:
    """Records grouped by dataset name across one or more stores."""
    if not paths:
        raise UsageError("--store is required")
    by_ds: dict[str, list] = {}
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"result store {p} not found")
        for r in runner.ResultStore(p).read():
            by_ds.setdefault(r.dataset, []).append(r)
    return by_ds


def _rule(args, variant: str) -> analysis.SelectionRule:
    return analysis.SelectionRule(variant, args.split_select, args.alpha, args.epsilon)


def cmd_analyze(args) -> int:
    by_ds = _load_stores(args.store)
    out = Path(args.out or "reports")
    ts = not args.no_timestamp
    written = []
    if args.analysis == "frontier":
        cols = ["family", "config_id", "m1", "m2", "on_frontier"]
        for ds, recs in sorted(by_ds.items()):
            rows, warns = analysis.frontier_rows(recs, args.m1, args.m2, args.split)
            note = [f"dataset={ds} m1={args.m1} m2={args.m2} split={args.split}"]
            written.append(analysis.write_csv(out / f"frontier_{ds}.csv", rows, cols, note, ts))
            for w in warns:
                print(f"warning: {ds} {w['family']} frontier config {w['config_id']} has "
                      f"{w['param']}={w['value']} at the {w['edge']} edge of the grid")
            if warns:
                written.append(analysis.write_csv(out / f"frontier_edges_{ds}.csv", warns,
                                                  ["family", "config_id", "param", "value", "edge"], note, ts))
    elif args.analysis == "select":
        rules = [_rule(args, v) for v in (args.rule or ["best_accuracy", "best_cvar"])]
        cols = ["rule", "selection_split", "config_id", "selection_value", "accuracy", "accuracy_lo",
                "accuracy_hi", "worst_group_accuracy", "worst_group_lo", "worst_group_hi", "cvar"]
        for ds, recs in sorted(by_ds.items()):
            rows = analysis.selection_rows(recs, rules, args.split)
            note = [f"dataset={ds} report_split={args.split}"] + [f"rule {r.describe()}" for r in rules]
            written.append(analysis.write_csv(out / f"select_{ds}.csv", rows, cols, note, ts))
            for row in rows:
                print(f"{ds} {row['rule']}: {row['config_id']} test accuracy={row['accuracy']:.4f} "
                      f"worst-group={row['worst_group_accuracy']:.4f} "
                      f"[{row['worst_group_lo']:.4f}, {row['worst_group_hi']:.4f}]")
    elif args.analysis == "compare":
        if not args.ids or len(args.ids) != 2:
            raise UsageError("compare needs --ids A B")
        recs = [r for rs in by_ds.values() for r in rs]
        a, b = (analysis.record_by_id(recs, c) for c in args.ids)
        rows = []
        for group in ("overall", "worst"):
            c = analysis.compare_ci(a, b, "accuracy", group, args.split)
            rows.append({"group": group, "config_a": a.config_id, "lo_a": c.interval_a.lower,
                         "hi_a": c.interval_a.upper, "config_b": b.config_id, "lo_b": c.interval_b.lower,
                         "hi_b": c.interval_b.upper, "significant": int(c.significant)})
            print(f"{group}: significant={c.significant}")
        cols = ["group", "config_a", "lo_a", "hi_a", "config_b", "lo_b", "hi_b", "significant"]
        written.append(analysis.write_csv(out / "compare.csv", rows, cols, [f"split={args.split}"], ts))
    elif args.analysis == "sensitivity":
        if not args.family:
            raise UsageError("sensitivity needs --family")
        series = analysis.sensitivity(by_ds, args.metric, args.family, args.split)
        rows = [{"dataset": ds, "rank": k, "config_id": cid, "value": v, "ci_width": w}
                for ds, s in series.items() for k, cid, v, w in s]
        note = [f"family={args.family} metric={args.metric} split={args.split}"]
        written.append(analysis.write_csv(out / f"sensitivity_{args.family}.csv", rows,
                                          ["dataset", "rank", "config_id", "value", "ci_width"], note, ts))
    elif args.analysis == "correlations":
        rows = analysis.correlations(by_ds, args.split)
        note = [f"split={args.split}"]
        written.append(analysis.write_csv(out / "correlations.csv", rows,
                                          ["family", "dataset", "metric_1", "metric_2", "complementary", "n", "r"],
                                          note, ts))
        med = analysis.median_correlations(rows)
        written.append(analysis.write_csv(out / "correlations_median.csv", med,
                                          ["metric_1", "metric_2", "complementary", "cells", "median_r"], note, ts))
        for row in rows:
            if row["complementary"]:
                print(f"{row['dataset']} {row['family']} r({row['metric_1']}, {row['metric_2']}) = {row['r']:.3f}")
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tabrobust", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_opts(p, schema=True):
        if schema:
            p.add_argument("--schema", help="schema TOML (or bundled dataset name); --data is then a CSV")
        p.add_argument("--data", help="dataset cache from `prepare`, or a CSV with --schema")
        p.add_argument("--split-mode", choices=("random", "predefined"))
        p.add_argument("--split-fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
        p.add_argument("--split-seed", type=int)

    def eval_opts(p):
        p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="CVaR level for evaluation")
        p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="DORO outlier fraction")

    p = sub.add_parser("prepare", help="encode a CSV into a dataset cache and print group counts")
    data_opts(p)
    p.add_argument("--out", help="cache file to write")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("fetch-data", help="build the public dataset CSVs")
    p.add_argument("--out", help="output directory (default data)")
    p.add_argument("--offline", action="store_true", help="skip download attempts")
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("sweep", help="run a hyperparameter grid and append records to a result store")
    data_opts(p)
    eval_opts(p)
    p.add_argument("--grid", help="grid TOML (or bundled grid name)")
    p.add_argument("--out", help="result store (JSONL)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--limit", type=int, help="run only the first N configs")
    p.add_argument("--no-resume", action="store_true", help="rerun configs already in the store")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="fit one model and print its metrics")
    data_opts(p)
    eval_opts(p)
    p.add_argument("--family", required=True)
    p.add_argument("--config", help="hyperparameters as a JSON object")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--save", help="write the trained model to this JSON file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="write CSV reports from result stores")
    p.add_argument("analysis", choices=ANALYSES)
    eval_opts(p)
    p.add_argument("--store", nargs="+", help="one or more result stores")
    p.add_argument("--out", help="report directory (default reports)")
    p.add_argument("--split", default="test", choices=("val", "test"), help="split the reports describe")
    p.add_argument("--split-select", default="val", choices=("val", "test"), help="split used for selection")
    p.add_argument("--rule", action="append", choices=tuple(analysis.RULES), help="selection rule (repeatable)")
    p.add_argument("--m1", default="accuracy")
    p.add_argument("--m2", default="worst_group_accuracy")
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--family")
    p.add_argument("--ids", nargs=2, metavar=("A", "B"))
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
    p.set_defaults(func=cmd_analyze)
    return ap


USAGE_ERRORS = (UsageError, data.SchemaError, data.SplitSpecError, grids.GridSpecError, ObjectiveError,
                analysis.SelectionError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (data.DataError, runner.StoreError, analysis.AnalysisError, learners.FitError, OSError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
