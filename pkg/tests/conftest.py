from __future__ import annotations

import sys
from pathlib import Path

import pytest

from tabrobust import data, public_data

HERE = Path(__file__).resolve().parent
DATA_DIR = HERE.parent / "data"
sys.path.insert(0, str(HERE))


def _csv(name: str) -> Path:
    p = DATA_DIR / f"{name}.csv"
    if not p.exists():
        public_data.build_all(DATA_DIR)
    return p


def _prepared(name: str) -> data.TabularDataset:
    return data.prepare(_csv(name), data.load_schema(public_data.schema_path(name)))


@pytest.fixture(scope="session")
def german():
    return _prepared("german")


@pytest.fixture(scope="session")
def compas():
    return _prepared("compas")


@pytest.fixture(scope="session")
def adult():
    return _prepared("adult")


@pytest.fixture(scope="session")
def csv_path():
    return _csv


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
