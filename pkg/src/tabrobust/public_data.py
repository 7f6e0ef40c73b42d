"""Builders for the public benchmark datasets (Adult, German Credit, COMPAS).

The raw files are the original distributions (UCI ``adult.data`` /
``adult.test`` / ``german.data`` and ProPublica's
``compas-scores-two-years.csv``). :func:`fetch_raw` downloads them from
their home pages, falling back to the copies vendored inside the
``responsibly`` wheel on PyPI. :func:`build_csv` converts each raw file into
a headered CSV matching the schema shipped in ``tabrobust/schemas``.
"""

from __future__ import annotations

import csv
import logging
import shutil
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

DATASETS = ("adult", "german", "compas")

RAW_FILES = {
    "adult.data": "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data",
    "adult.test": "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.test",
    "german.data": "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data",
    "compas-scores-two-years.csv":
        "https://raw.githubusercontent.com/propublica/compas-analysis/master/compas-scores-two-years.csv",
}

WHEEL_PACKAGE = "responsibly==0.1.2"
WHEEL_MEMBERS = {
    "adult.data": "responsibly/dataset/adult/adult.data",
    "adult.test": "responsibly/dataset/adult/adult.test",
    "german.data": "responsibly/dataset/german/german.data",
    "compas-scores-two-years.csv": "responsibly/dataset/compas/compas-scores-two-years.csv",
}

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]

GERMAN_COLUMNS = [
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status", "other_debtors",
    "residence_since", "property", "age", "installment_plans", "housing",
    "existing_credits", "job", "num_dependents", "telephone", "foreign_worker", "credit",
]
# personal_status codes -> (sex, marital status)
GERMAN_PERSONAL = {
    "A91": ("male", "divorced_separated"),
    "A92": ("female", "divorced_separated_married"),
    "A93": ("male", "single"),
    "A94": ("male", "married_widowed"),
    "A95": ("female", "single"),
}

COMPAS_FEATURES = [
    "sex", "age", "age_cat", "race", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "days_b_screening_arrest",
]


def schema_path(name: str) -> Path:
    return Path(str(resources.files("tabrobust") / "schemas" / f"{name}.toml"))


def _download(url: str, dest: Path, timeout: float) -> bool:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as r, open(dest, "wb") as f:
            shutil.copyfileobj(r, f)
        return True
    except OSError as e:
        logger.info("download of %s failed: %s", url, e)
        dest.unlink(missing_ok=True)
        return False


def _extract_from_wheel(names: list[str], raw_dir: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        cmd = [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
               "-d", tmp, WHEEL_PACKAGE]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        wheels = list(Path(tmp).glob("*.whl"))
        if proc.returncode != 0 or not wheels:
            raise RuntimeError(f"pip download {WHEEL_PACKAGE} failed:\n{proc.stderr.strip()}")
        with zipfile.ZipFile(wheels[0]) as z:
            for name in names:
                (raw_dir / name).write_bytes(z.read(WHEEL_MEMBERS[name]))


def fetch_raw(raw_dir, timeout: float = 15.0, try_urls: bool = True) -> Path:
    """Make sure every raw file exists under ``raw_dir``; returns the directory."""
    raw_dir = Path(raw_dir)
    raw_dir.mkdir(parents=True, exist_ok=True)
    missing = [n for n in RAW_FILES if not (raw_dir / n).exists()]
    if try_urls:
        missing = [n for n in missing if not _download(RAW_FILES[n], raw_dir / n, timeout)]
    if missing:
        logger.info("extracting %s from the %s wheel", missing, WHEEL_PACKAGE)
        _extract_from_wheel(missing, raw_dir)
    return raw_dir


def _write(path: Path, header: list[str], rows) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
            n += 1
    return n


def _adult_rows(raw_dir: Path):
    for fname, split in (("adult.data", "train"), ("adult.test", "test")):
        with open(raw_dir / fname, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("|"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != len(ADULT_COLUMNS):
                    continue
                parts[-1] = parts[-1].rstrip(".")
                yield parts + [split]


def _german_rows(raw_dir: Path):
    with open(raw_dir / "german.data", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) != len(GERMAN_COLUMNS):
                continue
            rec = dict(zip(GERMAN_COLUMNS, parts))
            sex, marital = GERMAN_PERSONAL[rec.pop("personal_status")]
            rec["sex"] = sex
            rec["marital_status"] = marital
            rec["age_over_25"] = "1" if int(rec["age"]) > 25 else "0"
            rec["credit"] = "good" if rec["credit"] == "1" else "bad"
            yield [rec[c] for c in _german_header()]


def _german_header() -> list[str]:
    cols = [c for c in GERMAN_COLUMNS if c not in ("personal_status", "credit")]
    return cols + ["sex", "marital_status", "age_over_25", "credit"]


def _compas_rows(raw_dir: Path):
    with open(raw_dir / "compas-scores-two-years.csv", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        # the file repeats some column names; the first occurrence is kept
        index = {}
        for i, name in enumerate(header):
            index.setdefault(name, i)
        for row in reader:
            if not row:
                continue
            yield [row[index[c]] for c in COMPAS_FEATURES] + [row[index["two_year_recid"]]]


def build_csv(name: str, raw_dir, out_path) -> int:
    """Write the headered CSV for one dataset; returns the number of rows."""
    raw_dir, out_path = Path(raw_dir), Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if name == "adult":
        return _write(out_path, ADULT_COLUMNS + ["split"], _adult_rows(raw_dir))
    if name == "german":
        return _write(out_path, _german_header(), _german_rows(raw_dir))
    if name == "compas":
        return _write(out_path, COMPAS_FEATURES + ["two_year_recid"], _compas_rows(raw_dir))
    raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")


def build_all(out_dir, raw_dir=None, try_urls: bool = True) -> dict[str, Path]:
    out_dir = Path(out_dir)
    raw_dir = Path(raw_dir) if raw_dir is not None else out_dir / "raw"
    fetch_raw(raw_dir, try_urls=try_urls)
    paths = {}
    for name in DATASETS:
        path = out_dir / f"{name}.csv"
        if not path.exists():
            n = build_csv(name, raw_dir, path)
            logger.info("wrote %s (%d rows)", path, n)
        paths[name] = path
    return paths
