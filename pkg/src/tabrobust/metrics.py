"""Evaluation metrics: accuracy/cross-entropy with subgroup breakdowns, tail
risks (CVaR, outlier-trimmed CVaR, chi-square ball), fairness gaps,
Clopper-Pearson intervals and Pearson correlation.

Losses live on the simplex-reweighting side: every risk here has the form
``sup_q sum(q * losses)`` for some constraint set on ``q``, and the
``*_weights`` helpers return the maximizing ``q`` so that trainers can use
them as fixed per-example weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

N_GROUPS = 4
CLAMP = 1e-12

BENEFIT_METRICS = ("accuracy",)
LOSS_METRICS = ("cross_entropy", "cvar", "doro_cvar")

DEFAULT_ALPHA = 0.5
DEFAULT_EPSILON = 0.01


class MetricError(ValueError):
    pass


class EmptyInputError(MetricError):
    pass


class DegenerateGroupsError(MetricError):
    pass


@dataclass(frozen=True)
class ScoredPredictions:
    score: np.ndarray
    label: np.ndarray
    group_id: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.score, dtype=np.float64)
        y = np.asarray(self.label).astype(np.int64)
        g = np.asarray(self.group_id).astype(np.int64)
        if not (s.shape == y.shape == g.shape) or s.ndim != 1:
            raise MetricError(f"length mismatch: score {s.shape}, label {y.shape}, group {g.shape}")
        if not np.all(np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
            raise MetricError("scores must be finite and within [0, 1]")
        if np.any((y != 0) & (y != 1)):
            raise MetricError("labels must be binary")
        if np.any((g < 0) | (g >= N_GROUPS)):
            raise MetricError(f"group ids must lie in [0, {N_GROUPS})")
        object.__setattr__(self, "score", s)
        object.__setattr__(self, "label", y)
        object.__setattr__(self, "group_id", g)

    def __len__(self):
        return len(self.score)

    def group(self, g: int) -> "ScoredPredictions":
        m = self.group_id == g
        return ScoredPredictions(self.score[m], self.label[m], self.group_id[m])


def _check_nonempty(preds: ScoredPredictions):
    if len(preds) == 0:
        raise EmptyInputError("no predictions")


def predicted_labels(score, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(score) >= threshold).astype(np.int64)


def accuracy(preds: ScoredPredictions, threshold: float = 0.5) -> float:
    _check_nonempty(preds)
    return float(np.mean(predicted_labels(preds.score, threshold) == preds.label))


def bce_losses(score, label) -> np.ndarray:
    s = np.clip(np.asarray(score, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return -y * np.log(s) - (1.0 - y) * np.log1p(-s)


def cross_entropy(preds: ScoredPredictions) -> float:
    _check_nonempty(preds)
    return float(np.mean(bce_losses(preds.score, preds.label)))


# ---------------------------------------------------------------------------
# tail risks


def _as_losses(losses) -> np.ndarray:
    x = np.asarray(losses, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInputError("no losses")
    if not np.all(np.isfinite(x)):
        raise MetricError("losses must be finite")
    return x


def _descending_order(x: np.ndarray) -> np.ndarray:
    # stable: equal losses keep index order, lower index first
    return np.argsort(-x, kind="stable")


def _check_alpha(alpha: float, n: int) -> float:
    if not (0.0 < alpha <= 1.0):
        raise MetricError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha * n < 1.0 - 1e-12:
        warnings.warn(f"alpha={alpha} gives alpha*n < 1 for n={n}; clamping alpha to 1/n",
                      RuntimeWarning, stacklevel=3)
        alpha = 1.0 / n
    return alpha


def cvar_weights(losses, alpha: float) -> np.ndarray:
    """Maximizing weights of ``sup sum(q*l)`` over the simplex with ``q <= 1/(alpha n)``."""
    x = _as_losses(losses)
    n = x.size
    alpha = _check_alpha(alpha, n)
    an = alpha * n
    cap = 1.0 / an
    order = _descending_order(x)
    q = np.zeros(n)
    k = min(int(math.floor(an + 1e-9)), n)
    q[order[:k]] = cap
    rest = 1.0 - k * cap
    if k < n and rest > 1e-15:
        q[order[k]] = rest
    return q


def cvar_risk(losses, alpha: float) -> float:
    x = _as_losses(losses)
    return float(np.dot(cvar_weights(x, alpha), x))


def doro_keep_mask(losses, epsilon: float) -> np.ndarray:
    """Boolean mask that drops the ceil(epsilon*n) largest losses."""
    x = _as_losses(losses)
    if not (0.0 <= epsilon < 1.0):
        raise MetricError(f"epsilon must lie in [0, 1), got {epsilon}")
    n = x.size
    n_drop = int(math.ceil(epsilon * n - 1e-9))
    if n_drop >= n:
        raise MetricError(f"epsilon={epsilon} drops all {n} points")
    keep = np.ones(n, dtype=bool)
    keep[_descending_order(x)[:n_drop]] = False
    return keep


def doro_cvar_weights(losses, alpha: float, epsilon: float) -> np.ndarray:
    x = _as_losses(losses)
    keep = doro_keep_mask(x, epsilon)
    q = np.zeros(x.size)
    q[keep] = cvar_weights(x[keep], alpha)
    return q


def doro_cvar_risk(losses, alpha: float, epsilon: float) -> float:
    x = _as_losses(losses)
    return float(np.dot(doro_cvar_weights(x, alpha, epsilon), x))


def chi2_divergence(q) -> float:
    """``0.5 * sum(n * (q_i - 1/n)^2)``: chi-square divergence from uniform."""
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    return 0.5 * n * float(np.sum((q - 1.0 / n) ** 2))


def chi2_weights(losses, rho: float) -> np.ndarray:
    """Maximizing weights of ``sup sum(q*l)`` over the simplex with chi-square
    divergence to uniform at most ``rho``.

    The optimum has the form ``q_i = (l_i - eta)_+ / sum_j (l_j - eta)_+``.
    While no weight is clipped the divergence is ``var / (2 (mean - eta)^2)``,
    solved in closed form; otherwise ``eta`` is found by bisection, the
    divergence being increasing in ``eta``.
    """
    x = _as_losses(losses)
    if rho < 0:
        raise MetricError(f"rho must be nonnegative, got {rho}")
    n = x.size
    mean = float(np.mean(x))
    sd = float(np.std(x))
    lo_l, hi_l = float(np.min(x)), float(np.max(x))
    if rho == 0.0 or sd == 0.0 or hi_l == lo_l:
        return np.full(n, 1.0 / n)

    eta = mean - sd / math.sqrt(2.0 * rho)
    if eta < lo_l:
        q = (x - eta) / (n * (mean - eta))
        return q

    top = x == hi_l
    if chi2_divergence(top / top.sum()) <= rho:
        return top / top.sum()

    def weights(e):
        w = np.maximum(x - e, 0.0)
        return w / w.sum()

    lo, hi = lo_l, hi_l
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2_divergence(weights(mid)) > rho:
            hi = mid
        else:
            lo = mid
    return weights(lo)


def chi2_risk(losses, rho: float) -> float:
    x = _as_losses(losses)
    return float(np.dot(chi2_weights(x, rho), x))


# ---------------------------------------------------------------------------
# subgroup reports


@dataclass
class MetricReport:
    """One metric broken down by subgroup.

    ``per_group`` holds NaN for groups without examples; those groups are
    left out of ``worst_group`` and ``disparity``.
    """

    metric: str
    overall: float
    per_group: list[float]
    worst_group: float
    disparity: float
    group_sizes: list[int]
    excluded_groups: list[int] = field(default_factory=list)

    CSV_HEADER = "metric,overall,g0,g1,g2,g3,worst_group,disparity,n0,n1,n2,n3"

    def to_csv_row(self) -> str:
        vals = [self.overall, *self.per_group, self.worst_group, self.disparity]
        return ",".join([self.metric, *(f"{v:.9g}" for v in vals), *(str(n) for n in self.group_sizes)])

    @classmethod
    def from_csv_row(cls, row: str) -> "MetricReport":
        parts = row.strip().split(",")
        vals = [float(v) for v in parts[1:8]]
        sizes = [int(v) for v in parts[8:12]]
        per = vals[1:5]
        return cls(parts[0], vals[0], per, vals[5], vals[6], sizes,
                   [g for g in range(N_GROUPS) if sizes[g] == 0])

    def to_dict(self) -> dict:
        return {"overall": self.overall, "per_group": list(self.per_group),
                "worst_group": self.worst_group, "disparity": self.disparity,
                "group_sizes": list(self.group_sizes)}


def _metric_fn(metric: str, threshold: float, alpha: float, epsilon: float):
    if metric == "accuracy":
        return lambda p: accuracy(p, threshold)
    if metric == "cross_entropy":
        return cross_entropy
    if metric == "cvar":
        return lambda p: cvar_risk(bce_losses(p.score, p.label), alpha)
    if metric == "doro_cvar":
        return lambda p: doro_cvar_risk(bce_losses(p.score, p.label), alpha, epsilon)
    raise MetricError(f"unknown metric {metric!r}")


def summarize_groups(metric: str, overall: float, per_group, sizes) -> MetricReport:
    per_group = [float(v) for v in per_group]
    present = [g for g in range(N_GROUPS) if sizes[g] > 0 and not math.isnan(per_group[g])]
    if not present:
        raise EmptyInputError("all groups are empty")
    vals = np.array([per_group[g] for g in present])
    worst = float(vals.min() if metric in BENEFIT_METRICS else vals.max())
    disparity = float(vals.max() - vals.min())
    return MetricReport(metric, float(overall), per_group, worst, disparity,
                        [int(s) for s in sizes], [g for g in range(N_GROUPS) if g not in present])


def report(preds: ScoredPredictions, metric: str = "accuracy", threshold: float = 0.5,
           alpha: float = DEFAULT_ALPHA, epsilon: float = DEFAULT_EPSILON) -> MetricReport:
    """Overall, per-group, worst-group and disparity values of one metric."""
    _check_nonempty(preds)
    fn = _metric_fn(metric, threshold, alpha, epsilon)
    sizes = np.bincount(preds.group_id, minlength=N_GROUPS)
    per_group = []
    for g in range(N_GROUPS):
        if sizes[g] == 0:
            per_group.append(float("nan"))
            continue
        with warnings.catch_warnings():
            # alpha clamping inside a tiny group is expected
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                per_group.append(fn(preds.group(g)))
            except MetricError:
                # e.g. DORO dropping every example of a one-row group
                per_group.append(float("nan"))
    empty = [g for g in range(N_GROUPS) if sizes[g] == 0 or math.isnan(per_group[g])]
    if empty and len(empty) < N_GROUPS:
        warnings.warn(f"groups {empty} have no usable examples and are excluded from {metric}",
                      RuntimeWarning, stacklevel=2)
    return summarize_groups(metric, fn(preds), per_group, sizes)


def _rates(preds: ScoredPredictions, threshold: float, condition=None):
    """Positive-prediction rate per group, restricted to label == condition."""
    yhat = predicted_labels(preds.score, threshold)
    out = {}
    for g in range(N_GROUPS):
        m = preds.group_id == g
        if condition is not None:
            m &= preds.label == condition
        if m.any():
            out[g] = float(yhat[m].mean())
    return out


def demographic_parity_diff(preds: ScoredPredictions, threshold: float = 0.5) -> float:
    rates = _rates(preds, threshold)
    if len(rates) < 2:
        raise DegenerateGroupsError("demographic parity needs at least two nonempty groups")
    return max(rates.values()) - min(rates.values())


def equalized_odds_diff(preds: ScoredPredictions, threshold: float = 0.5) -> float:
    tpr = _rates(preds, threshold, condition=1)
    fpr = _rates(preds, threshold, condition=0)
    comparable = sorted(set(tpr) & set(fpr))
    dropped = sorted(set(range(N_GROUPS)) - set(comparable))
    present = set(np.unique(preds.group_id).tolist())
    if set(dropped) & present:
        warnings.warn(f"groups {sorted(set(dropped) & present)} lack one of the labels and are "
                      "excluded from equalized odds", RuntimeWarning, stacklevel=2)
    if len(comparable) < 2:
        raise DegenerateGroupsError("equalized odds needs at least two groups with both labels")
    t = [tpr[g] for g in comparable]
    f = [fpr[g] for g in comparable]
    return max(max(t) - min(t), max(f) - min(f))


# ---------------------------------------------------------------------------
# intervals and correlation


@dataclass(frozen=True)
class BinomialCI:
    lower: float
    upper: float
    k: int
    n: int
    level: float

    def overlaps(self, other: "BinomialCI") -> bool:
        return self.lower <= other.upper and other.lower <= self.upper


def _bisect_increasing(f, target: float, tol: float) -> float:
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, level: float = 0.95, tol: float = 1e-10) -> BinomialCI:
    """Exact two-sided binomial interval from Beta quantiles.

    The lower end solves ``I_p(k, n-k+1) = (1-level)/2`` and the upper end
    ``I_p(k+1, n-k) = (1+level)/2``, where ``I`` is the regularized
    incomplete beta function (increasing in ``p``).
    """
    k, n = int(k), int(n)
    if n < 1:
        raise MetricError("n must be at least 1")
    if not 0 <= k <= n:
        raise MetricError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0 < level < 1:
        raise MetricError("level must lie in (0, 1)")
    a = 1.0 - level
    lower = 0.0 if k == 0 else _bisect_increasing(lambda p: betainc(k, n - k + 1, p), a / 2, tol)
    upper = 1.0 if k == n else _bisect_increasing(lambda p: betainc(k + 1, n - k, p), 1 - a / 2, tol)
    p_hat = k / n
    return BinomialCI(min(lower, p_hat), max(upper, p_hat), k, n, level)


def pearson_r(xs, ys) -> float:
    """Pearson correlation; NaN when either series is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise MetricError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return float("nan")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------------------
# full evaluation suite


def evaluate(preds: ScoredPredictions, alpha: float = DEFAULT_ALPHA,
             epsilon: float = DEFAULT_EPSILON, threshold: float = 0.5) -> dict:
    """Every metric a sweep records for one split, as plain floats."""
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for m in ("accuracy", "cross_entropy", "cvar", "doro_cvar"):
            out[m] = report(preds, m, threshold, alpha, epsilon).to_dict()
        yhat = predicted_labels(preds.score, threshold)
        out["n_correct"] = [int(np.sum((yhat == preds.label)[preds.group_id == g]))
                            for g in range(N_GROUPS)]
        try:
            out["dp_diff"] = demographic_parity_diff(preds, threshold)
        except DegenerateGroupsError:
            out["dp_diff"] = None
        try:
            out["eo_diff"] = equalized_odds_diff(preds, threshold)
        except DegenerateGroupsError:
            out["eo_diff"] = None
    return out
