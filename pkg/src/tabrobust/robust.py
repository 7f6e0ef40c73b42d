"""Robust per-batch training objectives.

Every variant turns a vector of per-example losses into a scalar and a weight
vector ``q``. The trainer backpropagates ``sum(q_i * grad l_i)`` with ``q``
held fixed, which is the gradient of the inner maximum wherever the
maximizing weights are unique.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .metrics import N_GROUPS

VARIANTS = ("erm", "cvar", "chi2", "doro_cvar", "doro_chi2", "group_dro", "mwld")


class ObjectiveError(ValueError):
    pass


def alpha_to_rho(alpha: float) -> float:
    """Chi-square radius used for an uncertainty-set size alpha: 0.5 * (1/alpha - 1)^2."""
    if not 0 < alpha <= 1:
        raise ObjectiveError(f"alpha must lie in (0, 1], got {alpha}")
    return 0.5 * (1.0 / alpha - 1.0) ** 2


@dataclass(frozen=True)
class Objective:
    variant: str = "erm"
    alpha: float | None = None
    rho: float | None = None  # chi2 variants: explicit radius, else derived from alpha
    epsilon: float = 0.0
    eta: float = 0.0
    lam: float = 0.0  # loss-variance penalty
    l2: float = 0.0  # coupled L2 penalty on all parameters
    loss: str = "bce"

    def __post_init__(self):
        v = self.variant
        if v not in VARIANTS:
            raise ObjectiveError(f"unknown objective {v!r}; expected one of {VARIANTS}")
        if v in ("cvar", "doro_cvar") and self.alpha is None:
            raise ObjectiveError(f"{v} needs alpha")
        if v in ("chi2", "doro_chi2") and self.alpha is None and self.rho is None:
            raise ObjectiveError(f"{v} needs alpha or rho")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ObjectiveError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.rho is not None and self.rho < 0:
            raise ObjectiveError(f"rho must be nonnegative, got {self.rho}")
        if not 0 <= self.epsilon < 1:
            raise ObjectiveError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if v == "group_dro" and not self.eta > 0:
            raise ObjectiveError("group_dro needs eta > 0")
        if self.lam < 0 or self.l2 < 0:
            raise ObjectiveError("penalties must be nonnegative")
        if self.loss != "bce":
            raise ObjectiveError(f"unsupported loss {self.loss!r}")

    @property
    def radius(self) -> float | None:
        if self.variant not in ("chi2", "doro_chi2"):
            return None
        return self.rho if self.rho is not None else alpha_to_rho(self.alpha)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if self.radius is not None:
            d["rho"] = self.radius
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> Objective:
        if not d:
            return cls()
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if d.get("variant") in ("chi2", "doro_chi2") and "alpha" in d and "rho" in d:
            d.pop("rho")  # derived, recomputed
        return cls(**d)


@dataclass
class GroupWeights:
    w: np.ndarray = field(default_factory=lambda: np.full(N_GROUPS, 1.0 / N_GROUPS))
    eta: float = 0.0


@dataclass
class BatchLoss:
    loss: float
    weights: np.ndarray
    state: GroupWeights | None = None


def group_dro_update(state: GroupWeights, group_mean_losses) -> tuple[GroupWeights, float]:
    """Exponentiated-gradient step w_g <- w_g exp(eta L_g), renormalized."""
    L = np.asarray(group_mean_losses, dtype=np.float64)
    if L.shape != state.w.shape:
        raise ObjectiveError(f"expected {state.w.shape[0]} group losses, got {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ObjectiveError("non-finite group loss")
    with np.errstate(divide="ignore"):
        logw = np.log(state.w) + state.eta * L
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return GroupWeights(w, state.eta), float(w @ L)


def _group_means(losses: np.ndarray, groups: np.ndarray):
    counts = np.bincount(groups, minlength=N_GROUPS).astype(np.float64)
    sums = np.bincount(groups, weights=losses, minlength=N_GROUPS)
    means = np.divide(sums, counts, out=np.zeros(N_GROUPS), where=counts > 0)
    return means, counts


def _chi2_on_kept(losses: np.ndarray, epsilon: float, rho: float) -> np.ndarray:
    keep = metrics.doro_keep_mask(losses, epsilon)
    q = np.zeros(losses.size)
    q[keep] = metrics.chi2_weights(losses[keep], rho)
    return q


def batch_loss(objective: Objective, losses, group_ids=None, state: GroupWeights | None = None) -> BatchLoss:
    """Robust loss of one batch plus the per-example weights used for the gradient.

    For every variant except ``mwld`` the scalar equals ``weights @ losses``.
    ``mwld`` reports ``mean + lam * var`` while its weights
    ``1/B + 2 lam (l_i - mean) / B`` give that scalar's gradient.
    """
    x = np.asarray(losses, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ObjectiveError("batch_loss needs a nonempty 1-D loss vector")
    B = x.size
    v = objective.variant
    try:
        if v == "erm":
            q = np.full(B, 1.0 / B)
        elif v == "cvar":
            q = metrics.cvar_weights(x, objective.alpha)
        elif v == "chi2":
            q = metrics.chi2_weights(x, objective.radius)
        elif v == "doro_cvar":
            q = metrics.doro_cvar_weights(x, objective.alpha, objective.epsilon)
        elif v == "doro_chi2":
            q = _chi2_on_kept(x, objective.epsilon, objective.radius)
        elif v == "mwld":
            m = x.mean()
            q = 1.0 / B + 2 * objective.lam * (x - m) / B
            return BatchLoss(float(m + objective.lam * np.mean((x - m) ** 2)), q, state)
        else:
            if group_ids is None:
                raise ObjectiveError("group_dro needs group ids")
            g = np.asarray(group_ids, dtype=np.int64)
            state = state or GroupWeights(eta=objective.eta)
            means, counts = _group_means(x, g)
            state, value = group_dro_update(state, means)
            per_group = np.divide(state.w, counts, out=np.zeros(N_GROUPS), where=counts > 0)
            return BatchLoss(value, per_group[g], state)
    except metrics.MetricError as e:
        raise ObjectiveError(str(e)) from e
    return BatchLoss(float(q @ x), q, state)


def validation_objective(objective: Objective, score, label, group_id=None) -> float:
    """The objective's robust functional applied to the whole split's BCE losses."""
    x = metrics.bce_losses(score, label)
    if x.size == 0:
        raise ObjectiveError("empty validation split")
    v = objective.variant
    if v == "erm":
        return float(x.mean())
    if v == "cvar":
        return metrics.cvar_risk(x, objective.alpha)
    if v == "chi2":
        return metrics.chi2_risk(x, objective.radius)
    if v == "doro_cvar":
        return metrics.doro_cvar_risk(x, objective.alpha, objective.epsilon)
    if v == "doro_chi2":
        return float(_chi2_on_kept(x, objective.epsilon, objective.radius) @ x)
    if v == "mwld":
        return float(x.mean() + objective.lam * x.var())
    means, counts = _group_means(x, np.asarray(group_id, dtype=np.int64))
    return float(means[counts > 0].max())
