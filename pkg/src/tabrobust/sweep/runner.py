"""Deterministic sweep execution and the line-delimited result store."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import learners
from ..metrics import DEFAULT_ALPHA, DEFAULT_EPSILON, ScoredPredictions, evaluate
from ..robust import Objective

logger = logging.getLogger(__name__)

STORE_FORMAT = "tabrobust-results"
STORE_VERSION = 1
EVAL_SPLITS = ("val", "test")
RECORD_FIELDS = ("dataset", "config_id", "config", "seed", "status", "wall_time", "alpha",
                 "epsilon", "info", "error", "metrics")


class StoreError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_id(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def derive_seed(base_seed: int, cid: str) -> int:
    h = hashlib.sha256(f"{int(base_seed)}:{cid}".encode()).hexdigest()
    return int(h[:8], 16)


def _finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite_or_none(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite_or_none(v) for v in x]
    return x


@dataclass
class RunRecord:
    """One evaluated config. ``metrics[split]`` holds the output of ``metrics.evaluate``
    with empty-group entries stored as null."""

    dataset: str
    config_id: str
    config: dict
    seed: int
    status: str = "ok"
    wall_time: float = 0.0
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    info: dict = field(default_factory=dict)
    error: str | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def family(self) -> str:
        return self.config.get("family", "")

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in RECORD_FIELDS}
        return json.dumps(d, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> RunRecord:
        d = json.loads(line)
        return cls(**{k: d[k] for k in RECORD_FIELDS})

    def comparable(self) -> dict:
        """Everything except wall time, for determinism checks."""
        d = json.loads(self.to_json())
        d.pop("wall_time")
        return d

    def value(self, name: str, split: str = "test") -> float:
        """Scalar metric by name: accuracy, worst_group_accuracy, accuracy_disparity,
        cross_entropy, worst_group_cross_entropy, cvar, doro_cvar, dp_diff, eo_diff."""
        m = self.metrics[split]
        table = {
            "accuracy": ("accuracy", "overall"),
            "worst_group_accuracy": ("accuracy", "worst_group"),
            "accuracy_disparity": ("accuracy", "disparity"),
            "cross_entropy": ("cross_entropy", "overall"),
            "worst_group_cross_entropy": ("cross_entropy", "worst_group"),
            "cvar": ("cvar", "overall"),
            "doro_cvar": ("doro_cvar", "overall"),
        }
        if name in table:
            a, b = table[name]
            v = m[a][b]
        elif name in ("dp_diff", "eo_diff"):
            v = m[name]
        else:
            raise KeyError(f"unknown metric {name!r}")
        return float("nan") if v is None else float(v)


class ResultStore:
    """Append-only JSONL file: a header line, then one RunRecord per line."""

    def __init__(self, path):
        self.path = Path(path)

    def _header(self) -> str:
        return json.dumps({"format": STORE_FORMAT, "version": STORE_VERSION, "fields": list(RECORD_FIELDS)},
                          separators=(",", ":"))

    def ensure(self) -> None:
        if self.path.exists() and self.path.stat().st_size > 0:
            self._check_header()
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8") as f:
                f.write(self._header() + "\n")
        except OSError as e:
            raise StoreError(f"cannot write result store {self.path}: {e}") from e

    def _check_header(self) -> None:
        with open(self.path, encoding="utf-8") as f:
            first = f.readline()
        try:
            h = json.loads(first)
        except json.JSONDecodeError:
            h = {}
        if h.get("format") != STORE_FORMAT:
            raise StoreError(f"{self.path} is not a result store")
        if h.get("version") != STORE_VERSION:
            raise StoreError(f"{self.path}: unsupported store version {h.get('version')}")

    def append(self, record: RunRecord) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.to_json() + "\n")
        except OSError as e:
            raise StoreError(f"cannot append to {self.path}: {e}") from e

    def read(self) -> list[RunRecord]:
        if not self.path.exists():
            raise StoreError(f"result store {self.path} does not exist")
        self._check_header()
        out = []
        with open(self.path, encoding="utf-8") as f:
            next(f)
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(RunRecord.from_json(line))
                except (json.JSONDecodeError, KeyError, TypeError):
                    # a torn final line from an interrupted run
                    logger.warning("skipping unreadable line in %s", self.path)
        return out

    def completed_ids(self) -> set[str]:
        if not self.path.exists():
            return set()
        return {r.config_id for r in self.read()}


def run_config(config: dict, ds, seed: int, alpha: float = DEFAULT_ALPHA,
               epsilon: float = DEFAULT_EPSILON) -> RunRecord:
    """Fit and evaluate one config; any training failure becomes a failed record."""
    cid = config_id(config)
    rec = RunRecord(dataset=ds.name, config_id=cid, config=config, seed=seed, alpha=alpha, epsilon=epsilon)
    params = {k: v for k, v in config.items() if k != "family"}
    if "objective" in config:
        rec.info["objective"] = Objective.from_dict(config["objective"]).to_dict()
    t0 = time.perf_counter()
    try:
        model = learners.fit_model(config["family"], ds, params, seed=seed)
        for split in EVAL_SPLITS:
            X, y, g = ds.part(split)
            preds = ScoredPredictions(learners.predict(model, X), y, g)
            rec.metrics[split] = _finite_or_none(evaluate(preds, alpha, epsilon))
        if hasattr(model, "best_epoch"):
            rec.info["best_epoch"] = model.best_epoch
    except Exception as e:  # noqa: BLE001 - isolate every config
        rec.status = "failed"
        rec.metrics = {}
        rec.error = f"{type(e).__name__}: {e}"
        logger.debug("config %s failed:\n%s", cid, traceback.format_exc())
    rec.wall_time = round(time.perf_counter() - t0, 6)
    return rec


_WORKER_DS = None


def _init_worker(ds) -> None:
    global _WORKER_DS
    _WORKER_DS = ds


def _run_in_worker(config, seed, alpha, epsilon):
    return run_config(config, _WORKER_DS, seed, alpha, epsilon)


def run_sweep(configs, ds, parallelism: int = 1, base_seed: int = 0, store: ResultStore | None = None,
              alpha: float = DEFAULT_ALPHA, epsilon: float = DEFAULT_EPSILON, resume: bool = True,
              progress=None) -> list[RunRecord]:
    """Run every config not already in ``store``; returns the new records sorted by config_id.

    Seeds depend only on (base_seed, config_id), so the record set does not
    depend on ``parallelism`` or completion order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be positive")
    jobs = {}
    for cfg in configs:
        cid = config_id(cfg)
        jobs.setdefault(cid, cfg)
    done = set()
    if store is not None:
        store.ensure()
        if resume:
            done = store.completed_ids()
    todo = [(cid, cfg) for cid, cfg in jobs.items() if cid not in done]
    out = []

    def collect(rec):
        if store is not None:
            store.append(rec)
        out.append(rec)
        if progress is not None:
            progress(len(out), len(todo), rec)

    if parallelism == 1 or len(todo) <= 1:
        for cid, cfg in todo:
            collect(run_config(cfg, ds, derive_seed(base_seed, cid), alpha, epsilon))
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker, initargs=(ds,)) as ex:
            futs = [ex.submit(_run_in_worker, cfg, derive_seed(base_seed, cid), alpha, epsilon)
                    for cid, cfg in todo]
            for fut in as_completed(futs):
                collect(fut.result())
    return sorted(out, key=lambda r: r.config_id)


def as_array(records, name: str, split: str = "test") -> np.ndarray:
    return np.array([r.value(name, split) for r in records], dtype=np.float64)
