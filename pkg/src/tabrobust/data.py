"""Schema-driven ingestion of tabular CSV data.

A :class:`DatasetSchema` declares the columns of a CSV file, the binary
target, and two binary sensitive attributes. :func:`encode` turns the parsed
table into a :class:`TabularDataset`: a standardized float64 feature matrix,
0/1 labels, intersectional subgroup ids ``2*a1 + a2`` and split tags.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "binary")
SPLITS = ("train", "val", "test")
N_GROUPS = 4
DEFAULT_NA_VALUES = ("", "?", "NA", "NaN", "nan")
MISSING = "__missing__"

CACHE_MAGIC = "tabrobust-dataset"
CACHE_VERSION = 1


class DataError(Exception):
    """Base class for ingestion failures."""


class SchemaError(DataError):
    pass


class IngestionError(DataError):
    pass


class DegenerateDatasetError(DataError):
    pass


class SplitSpecError(DataError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str


@dataclass(frozen=True)
class SensitiveSpec:
    column: str
    value: str


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    columns: tuple[ColumnSpec, ...]
    target: str
    positive_values: tuple[str, ...]
    sensitive: tuple[SensitiveSpec, SensitiveSpec]
    split_column: str | None = None
    na_values: tuple[str, ...] = DEFAULT_NA_VALUES

    def __post_init__(self):
        if len(self.sensitive) != 2:
            raise SchemaError(
                f"exactly two sensitive attributes are required, got {len(self.sensitive)}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for c in self.columns:
            if c.kind not in KINDS:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
        if self.target in names:
            raise SchemaError(f"target column {self.target!r} is listed as a feature")
        if self.split_column is not None and self.split_column in names:
            raise SchemaError(f"split column {self.split_column!r} is listed as a feature")
        if not self.positive_values:
            raise SchemaError("positive_value must be given")

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        """Declared columns plus any sensitive column not already declared."""
        declared = {c.name for c in self.columns}
        extra = tuple(ColumnSpec(s.column, "binary")
                      for s in self.sensitive if s.column not in declared)
        return self.columns + extra

    def required_columns(self) -> list[str]:
        cols = [c.name for c in self.feature_columns] + [self.target]
        if self.split_column is not None:
            cols.append(self.split_column)
        return cols

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        try:
            pos = d["positive_value"]
            sensitive = []
            for item in d["sensitive"]:
                col, sep, val = str(item).partition(":")
                if not sep:
                    raise SchemaError(f"sensitive entry {item!r} must look like 'column:value'")
                sensitive.append(SensitiveSpec(col.strip(), val.strip()))
            return cls(
                name=str(d["name"]),
                columns=tuple(ColumnSpec(str(c["name"]), str(c["kind"])) for c in d["columns"]),
                target=str(d["target"]),
                positive_values=tuple(str(v) for v in pos) if isinstance(pos, list) else (str(pos),),
                sensitive=tuple(sensitive),
                split_column=d.get("split_column"),
                na_values=tuple(d.get("na_values", DEFAULT_NA_VALUES)),
            )
        except KeyError as e:
            raise SchemaError(f"schema is missing key {e.args[0]!r}") from None

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "target": self.target,
            "positive_value": list(self.positive_values),
            "sensitive": [f"{s.column}:{s.value}" for s in self.sensitive],
            "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
            "na_values": list(self.na_values),
        }
        if self.split_column is not None:
            d["split_column"] = self.split_column
        return d


def load_schema(path) -> DatasetSchema:
    """Read a TOML schema file."""
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise SchemaError(f"{path}: {e}") from None
    return DatasetSchema.from_dict(raw)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    mode: str = "random"

    def __post_init__(self):
        if self.mode not in ("random", "predefined"):
            raise SplitSpecError(f"unknown split mode {self.mode!r}")
        if len(self.fractions) != 3:
            raise SplitSpecError("fractions must be (train, val, test)")
        if any(f < 0 for f in self.fractions) or self.fractions[0] <= 0:
            raise SplitSpecError(f"fractions must be nonnegative with a positive train share: {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SplitSpecError(f"fractions sum to {sum(self.fractions)!r}, expected 1")
        if self.seed < 0:
            raise SplitSpecError("seed must be an unsigned integer")


@dataclass
class RawTable:
    """Typed columns parsed from a CSV file.

    Numeric columns are float arrays with NaN for missing cells; every other
    column is an object array of stripped strings, missing cells as None.
    """

    columns: dict[str, np.ndarray]
    n_rows: int

    def __getitem__(self, name):
        return self.columns[name]

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx)
        return RawTable({k: v[idx] for k, v in self.columns.items()}, len(idx))


def load_csv(path, schema: DatasetSchema) -> RawTable:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_csv(text, schema, source=str(path))


def parse_csv(text: str, schema: DatasetSchema, source: str = "<string>") -> RawTable:
    if not text.strip():
        raise IngestionError(f"{source}: empty file")
    df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                     skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]
    for col in schema.required_columns():
        if col not in df.columns:
            raise SchemaError(f"{source}: missing column {col!r}")
    if len(df) == 0:
        raise IngestionError(f"{source}: no data rows")
    na = set(schema.na_values)
    kinds = {c.name: c.kind for c in schema.feature_columns}
    out = {}
    for col in schema.required_columns():
        vals = df[col].str.strip()
        missing = vals.isin(na).to_numpy()
        if kinds.get(col) == "numeric":
            num = pd.to_numeric(vals, errors="coerce").to_numpy(dtype=np.float64)
            num[missing] = np.nan
            n_bad = int(np.isnan(num).sum() - missing.sum())
            if n_bad:
                logger.warning("%s: %d unparseable cells in numeric column %r treated as missing",
                               source, n_bad, col)
            out[col] = num
        else:
            arr = vals.to_numpy(dtype=object)
            arr[missing] = None
            out[col] = arr
    return RawTable(out, len(df))


def assign_splits(n: int, spec: SplitSpec, predefined=None) -> np.ndarray:
    """Split tags (object array of 'train'/'val'/'test') for ``n`` rows.

    Random mode shuffles with ``spec.seed`` and assigns contiguous blocks.
    Predefined mode takes tags from ``predefined``; if no row is tagged
    'val' but a validation share is requested, the test rows are split
    evenly into validation and test.
    """
    rng = np.random.default_rng(spec.seed)
    tags = np.empty(n, dtype=object)
    if spec.mode == "random":
        if n < 10:
            raise SplitSpecError(f"random split needs at least 10 rows, got {n}")
        n_train = int(round(spec.fractions[0] * n))
        n_val = int(round(spec.fractions[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        perm = rng.permutation(n)
        tags[perm[:n_train]] = "train"
        tags[perm[n_train:n_train + n_val]] = "val"
        tags[perm[n_train + n_val:]] = "test"
        return tags
    if predefined is None or len(predefined) != n:
        raise SplitSpecError("predefined split mode needs one split label per row")
    labels = np.array([None if v is None else str(v).strip().lower() for v in predefined], dtype=object)
    bad = sorted({str(v) for v in labels if v not in SPLITS})
    if bad:
        raise SplitSpecError(f"unknown split labels {bad}; expected {SPLITS}")
    tags[:] = labels
    if spec.fractions[1] > 0 and not np.any(labels == "val"):
        test_idx = np.flatnonzero(labels == "test")
        test_idx = test_idx[rng.permutation(len(test_idx))]
        tags[test_idx[: len(test_idx) // 2]] = "val"
    return tags


@dataclass
class Encoder:
    """Per-column encoding state fitted on the training split."""

    schema: DatasetSchema
    numeric: dict[str, dict] = field(default_factory=dict)
    categorical: dict[str, list[str]] = field(default_factory=dict)
    binary: dict[str, dict] = field(default_factory=dict)
    feature_names: list[str] = field(default_factory=list)

    @classmethod
    def fit(cls, raw: RawTable, train_mask: np.ndarray, schema: DatasetSchema) -> "Encoder":
        enc = cls(schema)
        sens = {s.column: s.value for s in schema.sensitive}
        for col in schema.feature_columns:
            v = raw[col.name][train_mask]
            if col.kind == "numeric":
                obs = v[~np.isnan(v)]
                median = float(np.median(obs)) if len(obs) else 0.0
                filled = np.where(np.isnan(v), median, v)
                mean = float(np.mean(filled)) if len(filled) else 0.0
                std = float(np.std(filled)) if len(filled) else 0.0
                enc.numeric[col.name] = {"median": median, "mean": mean, "std": std}
                enc.feature_names.append(col.name)
            elif col.kind == "categorical":
                vocab = sorted({MISSING if x is None else x for x in v})
                enc.categorical[col.name] = vocab
                enc.feature_names.extend(f"{col.name}={x}" for x in vocab)
            else:
                if col.name in sens:
                    # a sensitive column encodes as its group indicator
                    enc.binary[col.name] = {"one": sens[col.name], "fill": 0.0}
                else:
                    present = sorted({x for x in v if x is not None})
                    if len(present) > 2:
                        raise SchemaError(
                            f"binary column {col.name!r} has {len(present)} distinct values")
                    one = present[-1] if present else "1"
                    ones = np.array([x == one for x in v if x is not None], dtype=float)
                    fill = float(ones.mean() >= 0.5) if len(ones) else 0.0
                    enc.binary[col.name] = {"one": one, "fill": fill}
                enc.feature_names.append(col.name)
        return enc

    def transform(self, raw: RawTable) -> np.ndarray:
        blocks = []
        for col in self.schema.feature_columns:
            v = raw[col.name]
            if col.kind == "numeric":
                st = self.numeric[col.name]
                filled = np.where(np.isnan(v), st["median"], v)
                if st["std"] > 0:
                    blocks.append(((filled - st["mean"]) / st["std"])[:, None])
                else:
                    blocks.append(np.zeros((raw.n_rows, 1)))
            elif col.kind == "categorical":
                vocab = self.categorical[col.name]
                index = {x: i for i, x in enumerate(vocab)}
                block = np.zeros((raw.n_rows, len(vocab)))
                for r, x in enumerate(v):
                    j = index.get(MISSING if x is None else x)
                    if j is not None:  # unseen categories stay all-zero
                        block[r, j] = 1.0
                blocks.append(block)
            else:
                st = self.binary[col.name]
                col_vals = np.array([st["fill"] if x is None else float(x == st["one"]) for x in v])
                blocks.append(col_vals[:, None])
        if not blocks:
            return np.zeros((raw.n_rows, 0))
        return np.hstack(blocks).astype(np.float64)

    def to_dict(self) -> dict:
        return {"schema": self.schema.to_dict(), "numeric": self.numeric,
                "categorical": self.categorical, "binary": self.binary,
                "feature_names": self.feature_names}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls(DatasetSchema.from_dict(d["schema"]), d["numeric"], d["categorical"],
                   d["binary"], list(d["feature_names"]))


@dataclass(frozen=True)
class TabularDataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    group_id: np.ndarray
    split: np.ndarray
    encoder: Encoder

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return self.encoder.feature_names

    def mask(self, split: str) -> np.ndarray:
        return self.split == split

    def part(self, split: str):
        """(X, y, group_id) for one split."""
        m = self.mask(split)
        return self.X[m], self.y[m], self.group_id[m]

    def group_counts(self) -> dict[str, list[int]]:
        return {s: np.bincount(self.group_id[self.mask(s)], minlength=N_GROUPS).tolist()
                for s in SPLITS}

    def summary(self) -> str:
        lines = [f"dataset {self.name}: n={self.n} d={self.d}"]
        for s, counts in self.group_counts().items():
            lines.append(f"  {s:<5} n={sum(counts):>6}  groups=" + " ".join(f"{c:>6}" for c in counts))
        return "\n".join(lines)

    def save(self, path) -> None:
        """Write a cache file: one JSON header line followed by .npy blocks."""
        header = {"magic": CACHE_MAGIC, "version": CACHE_VERSION, "name": self.name,
                  "encoder": self.encoder.to_dict()}
        split_codes = np.array([SPLITS.index(s) for s in self.split], dtype=np.int8)
        with open(path, "wb") as f:
            f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            for arr in (self.X, self.y, self.group_id, split_codes):
                np.save(f, np.ascontiguousarray(arr), allow_pickle=False)

    @classmethod
    def load(cls, path) -> "TabularDataset":
        with open(path, "rb") as f:
            try:
                header = json.loads(f.readline().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise IngestionError(f"{path}: not a dataset cache file") from None
            if header.get("magic") != CACHE_MAGIC:
                raise IngestionError(f"{path}: not a dataset cache file")
            if header.get("version") != CACHE_VERSION:
                raise IngestionError(f"{path}: unsupported cache version {header.get('version')}")
            X, y, g, codes = (np.load(f, allow_pickle=False) for _ in range(4))
        split = np.array(SPLITS, dtype=object)[codes]
        return cls(header["name"], X, y, g, split, Encoder.from_dict(header["encoder"]))


def sensitive_indicators(raw: RawTable, schema: DatasetSchema) -> tuple[np.ndarray, np.ndarray]:
    out = []
    for s in schema.sensitive:
        v = raw[s.column]
        if v.dtype.kind == "f":
            target = float(s.value)
            out.append((v == target).astype(np.int64))
        else:
            out.append(np.array([x == s.value for x in v], dtype=np.int64))
    return out[0], out[1]


def encode(raw: RawTable, schema: DatasetSchema, split: SplitSpec | None = None) -> TabularDataset:
    split = split or SplitSpec()
    if split.mode == "predefined":
        if schema.split_column is None or schema.split_column not in raw.columns:
            raise SchemaError("predefined split mode needs a split column")
        tags = assign_splits(raw.n_rows, split, raw[schema.split_column])
    else:
        tags = assign_splits(raw.n_rows, split)

    target = raw[schema.target]
    pos = set(schema.positive_values)
    if target.dtype.kind == "f":
        y = np.isin(target, [float(p) for p in pos]).astype(np.int64)
    else:
        y = np.array([x in pos for x in target], dtype=np.int64)

    a1, a2 = sensitive_indicators(raw, schema)
    group_id = (2 * a1 + a2).astype(np.int64)

    train = tags == "train"
    counts = np.bincount(group_id[train], minlength=N_GROUPS)
    empty = [g for g in range(N_GROUPS) if counts[g] == 0]
    if empty:
        raise DegenerateDatasetError(
            f"{schema.name}: empty training subgroup(s) {empty} (train group counts {counts.tolist()})")
    if len(np.unique(y[train])) < 2:
        logger.warning("%s: training labels contain a single class", schema.name)

    enc = Encoder.fit(raw, train, schema)
    X = enc.transform(raw)
    return TabularDataset(schema.name, X, y, group_id, tags, enc)


def prepare(csv_path, schema: DatasetSchema, split: SplitSpec | None = None) -> TabularDataset:
    """load_csv + encode, choosing predefined mode when the schema has a split column."""
    raw = load_csv(csv_path, schema)
    if split is None:
        split = SplitSpec(mode="predefined" if schema.split_column else "random")
    return encode(raw, schema, split)
