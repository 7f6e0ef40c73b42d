"""Hyperparameter grid files and their expansion into concrete configs."""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# TOML has no null; this string stands in for None in grid files
NONE_TOKEN = "none"


class GridSpecError(ValueError):
    pass


def _denull(v):
    return None if isinstance(v, str) and v.lower() == NONE_TOKEN else v


@dataclass
class GridSpec:
    name: str
    family: str
    params: dict[str, list] = field(default_factory=dict)
    objective: dict[str, list] = field(default_factory=dict)  # wrapper grid (MLP objectives)
    epochs: dict[str, int] = field(default_factory=dict)  # per-dataset epoch override
    fixed: dict = field(default_factory=dict)  # values applied to every config

    def __post_init__(self):
        for block in (self.params, self.objective):
            for k, vals in block.items():
                if not isinstance(vals, list) or len(vals) == 0:
                    raise GridSpecError(f"grid {self.name!r}: parameter {k!r} needs a nonempty list")

    @property
    def size(self) -> int:
        n = 1
        for vals in list(self.params.values()) + list(self.objective.values()):
            n *= len(vals)
        return n

    @classmethod
    def from_dict(cls, d: dict) -> GridSpec:
        try:
            return cls(
                name=d.get("name", d["family"]),
                family=d["family"],
                params={k: [_denull(v) for v in vals] for k, vals in d.get("params", {}).items()},
                objective=dict(d.get("objective", {})),
                epochs={k: int(v) for k, v in d.get("epochs", {}).items()},
                fixed={k: _denull(v) for k, v in d.get("fixed", {}).items()},
            )
        except KeyError as e:
            raise GridSpecError(f"grid file is missing key {e.args[0]!r}") from None


def _product(block: dict[str, list]):
    names = sorted(block)
    for combo in itertools.product(*(block[k] for k in names)):
        yield dict(zip(names, combo))


def expand_grid(spec: GridSpec, dataset: str | None = None) -> list[dict]:
    """Full cross product, parameter names sorted, values in file order.

    Each config is ``{"family": ..., <params>, "objective": {...}}``; the
    objective block is present only for wrapper grids and ``epochs`` only
    when the grid overrides it for ``dataset``.
    """
    if not spec.params and not spec.objective:
        raise GridSpecError(f"grid {spec.name!r} has no parameters")
    configs = []
    objs = list(_product(spec.objective)) if spec.objective else [None]
    for base in _product(spec.params):
        for obj in objs:
            cfg = {"family": spec.family, **spec.fixed, **base}
            if obj is not None:
                cfg["objective"] = obj
            if dataset is not None and dataset in spec.epochs:
                cfg["epochs"] = spec.epochs[dataset]
            configs.append(cfg)
    return configs


def load_grid(path) -> GridSpec:
    p = Path(path)
    if not p.exists():
        builtin = bundled_grid_path(str(path))
        if builtin is None:
            raise GridSpecError(f"grid file {path} not found")
        p = builtin
    with open(p, "rb") as f:
        try:
            return GridSpec.from_dict(tomllib.load(f))
        except tomllib.TOMLDecodeError as e:
            raise GridSpecError(f"{p}: {e}") from None


def bundled_grids() -> list[str]:
    root = resources.files("tabrobust") / "grids"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_grid_path(name: str) -> Path | None:
    """Path of a grid shipped with the package, by bare name (``gbm``) or file name."""
    stem = name[:-5] if name.endswith(".toml") else name
    p = Path(str(resources.files("tabrobust") / "grids" / f"{stem}.toml"))
    return p if p.exists() else None
