"""Learner families, a uniform fit/predict entry point and model files."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..robust import Objective
from .boosting import BoostedEnsemble, BoostParams, fit_boosted
from .forest import ForestEnsemble, ForestParams, fit_forest
from .linear import LinearModel, LinearParams, RandomFourierFeatures, fit_linear
from .mlp import MlpModel, MlpParams, TrainingDiverged, fit_mlp
from .tree import FitError, PredictionError, Tree, fit_tree

MODEL_FORMAT = "tabrobust-model"
MODEL_VERSION = 1

# per-family defaults layered under grid values
FAMILY_DEFAULTS = {
    "gbm": dict(order="first", learning_rate=0.1, n_estimators=100, max_depth=3),
    "xgboost": dict(order="second", learning_rate=0.3, n_estimators=100, max_depth=6,
                    reg_lambda=1.0, min_child_weight=1.0),
    "lightgbm": dict(order="second", learning_rate=0.1, n_estimators=100, max_depth=None,
                     reg_lambda=0.0, min_child_weight=1e-3, min_samples_leaf=20,
                     growth="lossguide", max_leaves=31, max_bins=255),
    "random_forest": dict(n_estimators=100, max_features="sqrt"),
    "logistic": dict(kind="logistic", l2_c=1.0),
    "svm": dict(kind="squared_hinge", l2_c=1.0, n_components=128, gamma=1.0),
    "mlp": dict(),
}
FAMILIES = tuple(FAMILY_DEFAULTS)

# grid-file names that differ from the parameter dataclasses
ALIASES = {
    "C": "l2_c", "l2_reg": "reg_lambda", "min_child_samples": "min_samples_leaf",
    "growth_policy": "growth", "num_leaves": "max_leaves",
}


def _params(cls, family: str, config: dict, seed: int):
    known = {f.name for f in fields(cls)}
    kw = dict(FAMILY_DEFAULTS[family])
    for k, v in config.items():
        k = ALIASES.get(k, k)
        if k in ("objective", "kernel"):
            continue
        if k not in known:
            raise ValueError(f"unknown {family} parameter {k!r}")
        kw[k] = v
    kw["seed"] = seed
    return cls(**kw)


def fit_model(family: str, ds, config: dict | None = None, seed: int = 0):
    """Train one model of ``family`` on ``ds`` (train split; MLPs also use val)."""
    config = dict(config or {})
    X, y, g = ds.part("train")
    if family in ("gbm", "xgboost", "lightgbm"):
        return fit_boosted(X, y, _params(BoostParams, family, config, seed))
    if family == "random_forest":
        return fit_forest(X, y, _params(ForestParams, family, config, seed))
    if family in ("logistic", "svm"):
        if config.get("kernel", "rks").lower() not in ("rks", "rff"):
            raise ValueError("only the random-Fourier-feature kernel map is available")
        return fit_linear(X, y, _params(LinearParams, family, config, seed))
    if family == "mlp":
        obj = Objective.from_dict(config.get("objective"))
        Xv, yv, gv = ds.part("val")
        return fit_mlp(X, y, g, Xv, yv, gv, _params(MlpParams, family, config, seed), obj)
    raise ValueError(f"unknown learner family {family!r}; expected one of {FAMILIES}")


def predict(model, X) -> np.ndarray:
    """Scores in [0, 1] for any trained model."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise PredictionError(f"model expects {model.n_features} columns, got shape {X.shape}")
    s = model.predict(X)
    if not np.all(np.isfinite(s)):
        raise PredictionError("model produced non-finite scores")
    return np.clip(s, 0.0, 1.0)


def _arr(a):
    return np.asarray(a).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, BoostedEnsemble):
        kind, state = "boosted", dict(base_score=model.base_score, learning_rate=model.learning_rate,
                                      order=model.order, n_features=model.n_features, params=model.params,
                                      train_loss=_arr(model.train_loss),
                                      trees=[t.to_dict() for t in model.trees])
    elif isinstance(model, ForestEnsemble):
        kind, state = "forest", dict(n_features=model.n_features, params=model.params,
                                     trees=[t.to_dict() for t in model.trees])
    elif isinstance(model, LinearModel):
        rff = None if model.rff is None else dict(omega=_arr(model.rff.omega),
                                                  phase=_arr(model.rff.phase), gamma=model.rff.gamma)
        kind, state = "linear", dict(weights=_arr(model.weights), bias=model.bias, kind=model.kind,
                                     n_features=model.n_features, rff=rff, params=model.params,
                                     n_iter=model.n_iter)
    elif isinstance(model, MlpModel):
        kind, state = "mlp", dict(sizes=list(model.sizes), theta=_arr(model.theta), params=model.params,
                                  objective=model.objective, best_epoch=model.best_epoch,
                                  val_history=list(model.val_history))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": kind, "state": state}


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise ValueError("not a tabrobust model file (or unsupported version)")
    s = dict(d["state"])
    kind = d["kind"]
    if kind == "boosted":
        s["trees"] = [Tree.from_dict(t) for t in s["trees"]]
        s["train_loss"] = np.asarray(s["train_loss"])
        return BoostedEnsemble(**s)
    if kind == "forest":
        s["trees"] = [Tree.from_dict(t) for t in s["trees"]]
        return ForestEnsemble(**s)
    if kind == "linear":
        s["weights"] = np.asarray(s["weights"], dtype=np.float64)
        if s["rff"] is not None:
            r = s["rff"]
            s["rff"] = RandomFourierFeatures(np.asarray(r["omega"]), np.asarray(r["phase"]), r["gamma"])
        return LinearModel(**s)
    if kind == "mlp":
        s["sizes"] = tuple(s["sizes"])
        s["theta"] = np.asarray(s["theta"], dtype=np.float64)
        return MlpModel(**s)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    # repr of a float round-trips exactly through JSON
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "FAMILIES", "FitError", "PredictionError", "TrainingDiverged", "fit_model", "predict",
    "fit_tree", "fit_boosted", "fit_forest", "fit_linear", "fit_mlp", "save_model", "load_model",
    "BoostParams", "ForestParams", "LinearParams", "MlpParams",
]
