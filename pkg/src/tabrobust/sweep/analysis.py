"""Analyses over stored sweep records: selection, significance, sensitivity, correlations."""

from __future__ import annotations

import csv
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..frontier import frontier
from ..metrics import DEFAULT_ALPHA, DEFAULT_EPSILON, BinomialCI, clopper_pearson, pearson_r
from .runner import RunRecord


class AnalysisError(RuntimeError):
    pass


class SelectionError(AnalysisError):
    pass


# rule name -> (record metric, larger is better)
RULES = {
    "best_accuracy": ("accuracy", True),
    "best_worst_group": ("worst_group_accuracy", True),
    "best_cvar": ("cvar", False),
    "best_doro_cvar": ("doro_cvar", False),
}
ACCURACY_METRICS = ("accuracy", "worst_group_accuracy")
LOSS_METRICS = ("accuracy_disparity", "cross_entropy", "worst_group_cross_entropy", "cvar",
                "doro_cvar", "dp_diff", "eo_diff")
HIGHER_IS_BETTER = {m: True for m in ACCURACY_METRICS} | {m: False for m in LOSS_METRICS}

CORRELATION_METRICS = ("accuracy", "worst_group_accuracy", "cvar", "doro_cvar", "dp_diff", "eo_diff")
COMPLEMENTARY_PAIRS = (
    ("accuracy", "worst_group_accuracy"),
    ("cvar", "doro_cvar"),
    ("dp_diff", "eo_diff"),
)


@dataclass(frozen=True)
class SelectionRule:
    variant: str = "best_accuracy"
    split: str = "val"
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.variant not in RULES:
            raise SelectionError(f"unknown selection rule {self.variant!r}; expected one of {tuple(RULES)}")
        if self.split not in ("val", "test"):
            raise SelectionError(f"selection split must be val or test, got {self.split!r}")

    @property
    def metric(self) -> str:
        return RULES[self.variant][0]

    @property
    def maximize(self) -> bool:
        return RULES[self.variant][1]

    def describe(self) -> str:
        s = f"{self.variant} on {self.split}"
        if self.variant in ("best_cvar", "best_doro_cvar"):
            s += f" (alpha={self.alpha:g}"
            s += f", epsilon={self.epsilon:g})" if self.variant == "best_doro_cvar" else ")"
        return s


def ok_records(records) -> list[RunRecord]:
    return [r for r in records if r.ok]


def _check_levels(records, rule: SelectionRule) -> None:
    if rule.variant not in ("best_cvar", "best_doro_cvar"):
        return
    for r in records:
        if not math.isclose(r.alpha, rule.alpha) or (
                rule.variant == "best_doro_cvar" and not math.isclose(r.epsilon, rule.epsilon)):
            raise SelectionError(
                f"record {r.config_id} was evaluated at alpha={r.alpha:g}, epsilon={r.epsilon:g}; "
                f"the rule asks for alpha={rule.alpha:g}, epsilon={rule.epsilon:g}")


def select(records, rule: SelectionRule) -> str:
    """config_id of the best ok record under ``rule``; ties go to the smallest config_id."""
    cands = [r for r in ok_records(records) if math.isfinite(r.value(rule.metric, rule.split))]
    if not cands:
        raise SelectionError("no successful records to select from")
    _check_levels(cands, rule)
    sign = -1.0 if rule.maximize else 1.0
    best = min(cands, key=lambda r: (sign * r.value(rule.metric, rule.split), r.config_id))
    return best.config_id


def record_by_id(records, cid: str) -> RunRecord:
    for r in records:
        if r.config_id == cid:
            return r
    raise AnalysisError(f"config_id {cid} not found")


# ---------------------------------------------------------------------------
# Clopper-Pearson comparisons


def accuracy_interval(record: RunRecord, group: str = "overall", split: str = "test",
                      level: float = 0.95) -> BinomialCI:
    """Interval for overall accuracy, or for worst-group accuracy at the smallest group's n."""
    if not record.ok:
        raise AnalysisError(f"record {record.config_id} has no metrics (status {record.status})")
    m = record.metrics[split]
    sizes = [int(s) for s in m["accuracy"]["group_sizes"]]
    if group == "overall":
        n = sum(sizes)
        k = int(sum(m["n_correct"]))
    elif group == "worst":
        present = [s for s in sizes if s > 0]
        n = min(present) if present else 0
        k = int(round(m["accuracy"]["worst_group"] * n)) if n else 0
    else:
        raise AnalysisError(f"group must be overall or worst, got {group!r}")
    if n == 0:
        raise AnalysisError(f"record {record.config_id}: zero sample size")
    return clopper_pearson(k, n, level)


@dataclass(frozen=True)
class Comparison:
    significant: bool
    interval_a: BinomialCI
    interval_b: BinomialCI


def compare_intervals(a: BinomialCI, b: BinomialCI) -> Comparison:
    return Comparison(not a.overlaps(b), a, b)


def compare_ci(record_a: RunRecord, record_b: RunRecord, metric: str = "accuracy",
               group: str = "overall", split: str = "test", level: float = 0.95) -> Comparison:
    """Significant iff the two Clopper-Pearson intervals are disjoint."""
    if metric != "accuracy":
        raise AnalysisError("interval comparisons are defined for accuracy only")
    return compare_intervals(accuracy_interval(record_a, group, split, level),
                             accuracy_interval(record_b, group, split, level))


def selection_rows(records, rules, report_split: str = "test") -> list[dict]:
    """One row per rule: the selected config and its report-split accuracies with intervals."""
    rows = []
    for rule in rules:
        cid = select(records, rule)
        r = record_by_id(records, cid)
        ov = accuracy_interval(r, "overall", report_split)
        wg = accuracy_interval(r, "worst", report_split)
        rows.append({
            "rule": rule.variant, "selection_split": rule.split, "config_id": cid,
            "selection_value": r.value(rule.metric, rule.split),
            "accuracy": r.value("accuracy", report_split),
            "accuracy_lo": ov.lower, "accuracy_hi": ov.upper,
            "worst_group_accuracy": r.value("worst_group_accuracy", report_split),
            "worst_group_lo": wg.lower, "worst_group_hi": wg.upper,
            "cvar": r.value("cvar", report_split),
        })
    return rows


# ---------------------------------------------------------------------------
# sensitivity over a truncated grid


def flat_params(config: dict) -> dict:
    """Hyperparameters of a config, with the objective block flattened as ``objective.<key>``."""
    out = {}
    for k, v in config.items():
        if k in ("family", "epochs"):
            continue
        if isinstance(v, dict):
            for kk, vv in v.items():
                out[f"{k}.{kk}"] = vv
        else:
            out[k] = v
    return out


def _is_ordered(values) -> bool:
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)


def _best(records, metric: str, split: str) -> RunRecord:
    sign = -1.0 if HIGHER_IS_BETTER[metric] else 1.0
    cands = [r for r in records if math.isfinite(r.value(metric, split))]
    if not cands:
        raise AnalysisError("no records with a finite metric value")
    return min(cands, key=lambda r: (sign * r.value(metric, split), r.config_id))


def truncation(records_by_dataset: dict, metric: str, family: str, split: str = "test") -> dict:
    """Allowed values per hyperparameter after collecting each dataset's best config.

    Ordered numeric parameters keep every grid value inside the [min, max] of
    the collected values; other parameters keep exactly the collected set.
    """
    fam = _family_records(records_by_dataset, family)
    best = [flat_params(_best(recs, metric, split).config) for recs in fam.values()]
    grid = defaultdict(set)
    for recs in fam.values():
        for r in recs:
            for k, v in flat_params(r.config).items():
                grid[k].add(_key(v))
    allowed = {}
    for k, vals in grid.items():
        chosen = [b.get(k) for b in best]
        if _is_ordered(chosen) and _is_ordered(vals):
            lo, hi = min(chosen), max(chosen)
            allowed[k] = {v for v in vals if lo <= v <= hi}
        else:
            allowed[k] = {_key(v) for v in chosen}
    return allowed


def _key(v):
    # hashable stand-in for list-valued parameters
    return tuple(v) if isinstance(v, list) else v



def _family_records(records_by_dataset: dict, family: str) -> dict:
    if len(records_by_dataset) < 2:
        raise AnalysisError("sensitivity needs records from at least two datasets")
    out = {}
    for ds, recs in sorted(records_by_dataset.items()):
        fam = [r for r in ok_records(recs) if r.family == family]
        if not fam:
            raise AnalysisError(f"no successful {family} records for dataset {ds}")
        out[ds] = fam
    return out


def _ci_width(metric: str, value: float, record: RunRecord, split: str) -> float:
    if metric not in ACCURACY_METRICS or not math.isfinite(value):
        return float("nan")
    sizes = record.metrics[split]["accuracy"]["group_sizes"]
    n = sum(sizes) if metric == "accuracy" else min(s for s in sizes if s > 0)
    ci = clopper_pearson(int(round(value * n)), n)
    return ci.upper - ci.lower


def sensitivity(records_by_dataset: dict, metric: str, family: str, split: str = "test") -> dict:
    """Per-dataset ranked series ``[(rank, config_id, value, ci_width), ...]`` over the truncated grid.

    Ranks start at 1 and follow the metric from best to worst. The CI width is
    the conservative Clopper-Pearson width of the accuracy-type metric.
    """
    if metric not in HIGHER_IS_BETTER:
        raise AnalysisError(f"unknown metric {metric!r}")
    allowed = truncation(records_by_dataset, metric, family, split)
    fam = _family_records(records_by_dataset, family)
    sign = -1.0 if HIGHER_IS_BETTER[metric] else 1.0
    out = {}
    for ds, recs in fam.items():
        kept = [r for r in recs
                if all(_key(v) in allowed.get(k, {_key(v)}) for k, v in flat_params(r.config).items())
                and math.isfinite(r.value(metric, split))]
        kept.sort(key=lambda r: (sign * r.value(metric, split), r.config_id))
        out[ds] = [(i + 1, r.config_id, r.value(metric, split), _ci_width(metric, r.value(metric, split), r, split))
                   for i, r in enumerate(kept)]
    return out


# ---------------------------------------------------------------------------
# correlations between metric pairs


def metric_pairs():
    for a, b in itertools.combinations(CORRELATION_METRICS, 2):
        yield a, b, (a, b) in COMPLEMENTARY_PAIRS or (b, a) in COMPLEMENTARY_PAIRS


def correlations(records_by_dataset: dict, split: str = "test") -> list[dict]:
    """Pearson r per (family, dataset, metric pair) over ok records with finite values."""
    rows = []
    for ds, recs in sorted(records_by_dataset.items()):
        by_family = defaultdict(list)
        for r in ok_records(recs):
            by_family[r.family].append(r)
        for fam, frecs in sorted(by_family.items()):
            for a, b, comp in metric_pairs():
                xs = np.array([r.value(a, split) for r in frecs])
                ys = np.array([r.value(b, split) for r in frecs])
                keep = np.isfinite(xs) & np.isfinite(ys)
                r_ab = pearson_r(xs[keep], ys[keep]) if keep.sum() >= 2 else float("nan")
                rows.append({"family": fam, "dataset": ds, "metric_1": a, "metric_2": b,
                             "complementary": int(comp), "n": int(keep.sum()), "r": r_ab})
    return rows


def median_correlations(rows) -> list[dict]:
    """Median r per metric pair over all (family, dataset) cells with a defined r."""
    cells = defaultdict(list)
    for row in rows:
        if math.isfinite(row["r"]):
            cells[(row["metric_1"], row["metric_2"], row["complementary"])].append(row["r"])
    return [{"metric_1": a, "metric_2": b, "complementary": c, "cells": len(v), "median_r": float(np.median(v))}
            for (a, b, c), v in sorted(cells.items(), key=lambda kv: (-kv[0][2], kv[0][:2]))]


# ---------------------------------------------------------------------------
# frontier over records


def frontier_rows(records, m1: str = "accuracy", m2: str = "worst_group_accuracy",
                  split: str = "test") -> tuple[list[dict], list[dict]]:
    """Points of every ok record plus frontier membership, and edge-of-grid warnings.

    A frontier config is flagged when one of its ordered hyperparameters sits
    at the smallest or largest value present in the sweep.
    """
    if not HIGHER_IS_BETTER.get(m1, False):
        raise AnalysisError(f"first frontier metric must be accuracy-type, got {m1!r}")
    if m2 not in HIGHER_IS_BETTER:
        raise AnalysisError(f"unknown metric {m2!r}")
    orientation = "max-max" if HIGHER_IS_BETTER[m2] else "max-min"
    recs = [r for r in ok_records(records)
            if math.isfinite(r.value(m1, split)) and math.isfinite(r.value(m2, split))]
    rows, warnings = [], []
    by_family = defaultdict(list)
    for r in recs:
        by_family[r.family].append(r)
    for fam, frecs in sorted(by_family.items()):
        frecs.sort(key=lambda r: r.config_id)
        pts = np.array([[r.value(m1, split), r.value(m2, split)] for r in frecs])
        on = set(frontier(pts, orientation).indices)
        values = defaultdict(set)
        for r in frecs:
            for k, v in flat_params(r.config).items():
                values[k].add(_key(v))
        for i, r in enumerate(frecs):
            rows.append({"family": fam, "config_id": r.config_id, "m1": pts[i, 0], "m2": pts[i, 1],
                         "on_frontier": int(i in on)})
            if i not in on:
                continue
            for k, v in sorted(flat_params(r.config).items()):
                vals = values[k]
                if len(vals) > 1 and _is_ordered(vals) and v in (min(vals), max(vals)):
                    warnings.append({"family": fam, "config_id": r.config_id, "param": k, "value": v,
                                     "edge": "min" if v == min(vals) else "max"})
    return rows, warnings


# ---------------------------------------------------------------------------
# CSV output


def timestamp_line() -> str:
    return "# generated " + datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not math.isfinite(v) else f"{v:.9g}"
    return v


def write_csv(path, rows: list[dict], columns: list[str], comments=(), timestamp: bool = True) -> Path:
    """Plot-ready CSV. Leading ``#`` lines carry the timestamp and report settings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if timestamp:
            f.write(timestamp_line() + "\n")
        for c in comments:
            f.write(f"# {c}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path
