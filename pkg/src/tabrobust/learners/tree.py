"""CART-style regression/classification trees on pre-binned features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _tree_core as core

MAX_DEPTH_UNLIMITED = 2**31 - 1
HIST_BUDGET_BYTES = 64 * 2**20


class FitError(ValueError):
    pass


class PredictionError(ValueError):
    pass


def _snap_edges(u: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Move each cut to the midpoint of the unique-value gap containing it."""
    i = np.searchsorted(u, cuts, side="right") - 1
    i = i[(i >= 0) & (i + 1 < len(u))]
    i = np.unique(i)
    return (u[i] + u[i + 1]) / 2


@dataclass
class Binner:
    """Per-feature thresholds; ``max_bins=None`` keeps every unique-value midpoint."""

    max_bins: int | None = 256
    edges: list = field(default_factory=list)

    def fit(self, X) -> Binner:
        X = np.asarray(X, dtype=np.float64)
        self.edges = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if self.max_bins is None or len(u) <= self.max_bins:
                e = (u[:-1] + u[1:]) / 2
            else:
                qs = np.quantile(X[:, j], np.linspace(0, 1, self.max_bins + 1)[1:-1])
                e = _snap_edges(u, qs)
            self.edges.append(e.astype(np.float64))
        return self

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(e) + 1 for e in self.edges], dtype=np.int64)

    @property
    def offset(self) -> np.ndarray:
        nb = self.n_bins
        return np.concatenate([[0], np.cumsum(nb)[:-1]]).astype(np.int64)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.edges):
            raise PredictionError(f"expected {len(self.edges)} columns, got {X.shape[1]}")
        top = int(self.n_bins.max()) if self.edges else 1
        dtype = np.uint8 if top <= 256 else (np.uint16 if top <= 65536 else np.uint32)
        out = np.empty(X.shape, dtype=dtype)
        for j, e in enumerate(self.edges):
            out[:, j] = np.searchsorted(e, X[:, j], side="left")
        return np.ascontiguousarray(out)

    @staticmethod
    def sparse(Xb: np.ndarray):
        """CSR (indptr, feature, bin) of the entries with bin > 0."""
        r, c = np.nonzero(Xb)
        ptr = np.zeros(Xb.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=Xb.shape[0]), out=ptr[1:])
        return ptr, c.astype(np.int64), Xb[r, c].astype(np.int64)

    def threshold(self, feature: np.ndarray, bin_idx: np.ndarray) -> np.ndarray:
        thr = np.full(len(feature), np.nan)
        for k in np.nonzero(feature >= 0)[0]:
            thr[k] = self.edges[feature[k]][bin_idx[k]]
        return thr


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf. Goes left on ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    impurity: np.ndarray
    n_samples: np.ndarray
    n_features: int

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left == core.LEAF))

    @property
    def depth(self) -> int:
        d = np.zeros(self.node_count, dtype=np.int64)
        for k in range(self.node_count):
            if self.left[k] != core.LEAF:
                d[self.left[k]] = d[self.right[k]] = d[k] + 1
        return int(d.max())

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(f"expected {self.n_features} columns, got shape {X.shape}")
        return core.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def prune(self, alpha: float) -> Tree:
        """Weakest-link cost-complexity pruning with node risk weight/W_root * impurity."""
        if alpha <= 0 or self.node_count == 1:
            return self
        risk = self.weight / self.weight[0] * self.impurity
        left, right = core.ccp_prune(self.left, self.right, risk, float(alpha))
        return _compact(self, left, right)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "weight", "impurity", "n_samples")} | \
            {"n_features": self.n_features}

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        ints = ("feature", "left", "right")
        kw = {k: np.asarray(d[k], dtype=np.int64 if k in ints else np.float64)
              for k in ("feature", "threshold", "left", "right", "value", "weight", "impurity", "n_samples")}
        return cls(n_features=int(d["n_features"]), **kw)


def _compact(t: Tree, left: np.ndarray, right: np.ndarray) -> Tree:
    keep = np.zeros(t.node_count, dtype=bool)
    keep[0] = True
    for k in range(t.node_count):
        if keep[k] and left[k] != core.LEAF:
            keep[left[k]] = keep[right[k]] = True
    new_id = np.cumsum(keep) - 1
    idx = np.nonzero(keep)[0]
    is_leaf = left[idx] == core.LEAF
    remap = lambda a: np.where(is_leaf, core.LEAF, new_id[np.where(is_leaf, 0, a[idx])])
    return Tree(
        feature=np.where(is_leaf, core.LEAF, t.feature[idx]),
        threshold=np.where(is_leaf, np.nan, t.threshold[idx]),
        left=remap(left), right=remap(right),
        value=t.value[idx].copy(), weight=t.weight[idx].copy(),
        impurity=t.impurity[idx].copy(), n_samples=t.n_samples[idx].copy(),
        n_features=t.n_features,
    )


def resolve_max_features(rule, d: int) -> int:
    """Number of features examined per split; 0 means all of them."""
    if rule is None:
        return 0
    if rule == "sqrt":
        k = int(math.sqrt(d))
    elif rule == "log2":
        k = int(math.log2(d)) if d > 0 else 0
    elif isinstance(rule, float):
        k = int(rule * d)
    else:
        k = int(rule)
    k = max(1, k)
    return 0 if k >= d else k


def _hist_slots(binner: Binner, n_rows: int) -> int:
    total = int(binner.n_bins.sum())
    return int(max(4, min(2 * n_rows + 1, HIST_BUDGET_BYTES // max(1, total * 24))))


def grow(binner: Binner, Xb: np.ndarray, s1, s2, cnt, rows=None, *, sparse=None, tree_feats=None,
         mode: int = 0, lam: float = 0.0, gamma: float = 0.0, max_depth=None,
         min_samples_split: int = 2, min_samples_leaf: int = 1, min_child_weight: float = 0.0,
         max_features: int = 0, colsample_level: float = 1.0, max_leaves: int = 0,
         best_first: bool = False, seed: int = 0, impurity_scale: float = 1.0):
    """Low-level entry shared by the ensembles; returns (Tree, leaf index per row)."""
    n, d = Xb.shape
    if rows is None:
        rows = np.arange(n, dtype=np.int64)
    if tree_feats is None:
        tree_feats = np.arange(d, dtype=np.int64)
    depth = MAX_DEPTH_UNLIMITED if max_depth is None else int(max_depth)
    if sparse is None:
        sparse = Binner.sparse(Xb)
    out = core.build_tree(
        Xb, *sparse, binner.offset, binner.n_bins,
        np.ascontiguousarray(s1, dtype=np.float64), np.ascontiguousarray(s2, dtype=np.float64),
        np.ascontiguousarray(cnt, dtype=np.float64), np.asarray(rows, dtype=np.int64),
        np.asarray(tree_feats, dtype=np.int64), int(mode), float(lam), float(gamma),
        depth, float(min_samples_split), float(min_samples_leaf), float(min_child_weight),
        int(max_features), float(colsample_level), int(max_leaves), bool(best_first),
        _hist_slots(binner, len(rows)), int(seed) % 2**32,
    )
    feature, bin_thr, left, right, value, weight, count, sumsq, node_sum, _, leaf_of = out
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(weight > 0, node_sum / weight, 0.0)
        var = np.where(weight > 0, sumsq / weight - mean**2, 0.0)
    tree = Tree(feature=feature, threshold=binner.threshold(feature, bin_thr), left=left,
                right=right, value=value, weight=weight,
                impurity=np.maximum(var, 0.0) * impurity_scale, n_samples=count,
                n_features=d)
    return tree, leaf_of


def fit_tree(X, targets, weights=None, *, max_depth=None, min_samples_split: int = 2,
             min_samples_leaf: int = 1, max_features=None, impurity: str = "variance",
             ccp_alpha: float = 0.0, max_bins: int | None = None, seed: int = 0) -> Tree:
    """Greedy CART tree on (X, targets) with optional sample weights.

    ``impurity`` is ``variance`` (regression) or ``gini`` (binary 0/1 targets;
    Gini equals twice the weighted variance, so split choices coincide).
    Leaves store the weighted mean target. With ``max_bins=None`` every
    midpoint between consecutive unique values is a candidate threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("fit_tree needs a nonempty 2-D feature matrix")
    if len(t) != len(X):
        raise FitError("targets and X lengths differ")
    w = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise FitError("weights must be finite and nonnegative")
    if impurity not in ("variance", "gini"):
        raise FitError(f"unknown impurity {impurity!r}")
    if impurity == "gini" and not np.all((t == 0) | (t == 1)):
        raise FitError("gini impurity needs 0/1 targets")
    binner = Binner(max_bins).fit(X)
    Xb = binner.transform(X)
    rows = np.nonzero(w > 0)[0]
    if len(rows) == 0:
        raise FitError("all weights are zero")
    tree, _ = grow(binner, Xb, w * t, w, np.ones(len(t)), rows,
                   mode=0, max_depth=max_depth, min_samples_split=min_samples_split,
                   min_samples_leaf=min_samples_leaf,
                   max_features=resolve_max_features(max_features, X.shape[1]), seed=seed,
                   impurity_scale=2.0 if impurity == "gini" else 1.0)
    return tree.prune(ccp_alpha)
