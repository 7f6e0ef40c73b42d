from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from tabrobust import cli, learners
from tabrobust.sweep.runner import ResultStore

BAD_GRID = """name = "bad"
family = "logistic"

[params]
C = [1.0, -1.0]
"""


@pytest.fixture(scope="module")
def german_cache(tmp_path_factory, csv_path):
    out = tmp_path_factory.mktemp("cache") / "german.cache"
    assert cli.main(["prepare", "--schema", "german", "--data", str(csv_path("german")), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def logistic_store(tmp_path_factory, german_cache):
    out = tmp_path_factory.mktemp("store") / "german.jsonl"
    assert cli.main(["sweep", "--data", str(german_cache), "--grid", "logistic", "--out", str(out)]) == 0
    return out


def test_prepare_prints_groups_and_cache_is_byte_identical(tmp_path, csv_path, capsys, german_cache):
    out = tmp_path / "again.cache"
    assert cli.main(["prepare", "--schema", "german", "--data", str(csv_path("german")), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "1000" in text
    assert out.read_bytes() == german_cache.read_bytes()


def test_prepare_missing_sensitive_column_is_exit_2(tmp_path, capsys):
    schema = tmp_path / "s.toml"
    schema.write_text('name = "t"\ntarget = "y"\npositive_value = "1"\nsensitive = ["sex:M", "race:W"]\n'
                      'columns = [{name = "x", kind = "numeric"}, {name = "sex", kind = "binary"},'
                      ' {name = "race", kind = "binary"}]\n')
    data = tmp_path / "d.csv"
    data.write_text("x,sex,y\n1,M,1\n2,F,0\n")
    assert cli.main(["prepare", "--schema", str(schema), "--data", str(data)]) == 2
    err = capsys.readouterr().err
    assert "race" in err and len(err.strip().splitlines()) == 1


def test_sweep_logistic_gives_eight_ok_records(logistic_store, capsys):
    recs = ResultStore(logistic_store).read()
    assert len(recs) == 8 and all(r.ok for r in recs)


def test_sweep_resume_skips(german_cache, logistic_store, capsys):
    assert cli.main(["sweep", "--data", str(german_cache), "--grid", "logistic", "--out", str(logistic_store)]) == 0
    out = capsys.readouterr().out
    assert "8 skipped" in out and "done: 0 ok" in out
    assert len(ResultStore(logistic_store).read()) == 8


def test_sweep_parallelism_4_matches_1(german_cache, logistic_store, tmp_path):
    out = tmp_path / "p4.jsonl"
    assert cli.main(["sweep", "--data", str(german_cache), "--grid", "logistic", "--out", str(out),
                     "--parallelism", "4"]) == 0

    def key(path):
        return sorted((r.comparable() for r in ResultStore(path).read()), key=lambda d: d["config_id"])

    assert key(out) == key(logistic_store)


def test_failed_configs_do_not_fail_the_sweep(german_cache, tmp_path, capsys):
    grid = tmp_path / "bad.toml"
    grid.write_text(BAD_GRID)
    assert cli.main(["sweep", "--data", str(german_cache), "--grid", str(grid), "--out", str(tmp_path / "b.jsonl")]) == 0
    assert "1 ok, 1 failed" in capsys.readouterr().out


@pytest.mark.parametrize("analysis,extra,files", [
    ("frontier", [], ["frontier_german.csv"]),
    ("select", ["--rule", "best_accuracy", "--rule", "best_cvar"], ["select_german.csv"]),
    ("correlations", [], ["correlations.csv", "correlations_median.csv"]),
])
def test_analyze_outputs_are_reproducible(logistic_store, tmp_path, analysis, extra, files):
    for d in ("a", "b"):
        assert cli.main(["analyze", analysis, "--store", str(logistic_store), "--out", str(tmp_path / d),
                         "--no-timestamp", *extra]) == 0
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert "generated" not in (tmp_path / "a" / f).read_text()


def test_analyze_select_reports_both_rules(logistic_store, tmp_path):
    assert cli.main(["analyze", "select", "--store", str(logistic_store), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "select_german.csv").read_text().splitlines()
    assert lines[0].startswith("# generated")
    rows = list(csv.DictReader(line for line in lines if not line.startswith("#")))
    assert [r["rule"] for r in rows] == ["best_accuracy", "best_cvar"]
    for r in rows:
        assert float(r["worst_group_lo"]) <= float(r["worst_group_accuracy"]) <= float(r["worst_group_hi"])


def test_analyze_compare(logistic_store, tmp_path):
    ids = sorted(r.config_id for r in ResultStore(logistic_store).read())[:2]
    assert cli.main(["analyze", "compare", "--store", str(logistic_store), "--ids", *ids,
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "compare.csv").exists()
    assert cli.main(["analyze", "compare", "--store", str(logistic_store), "--ids", ids[0], "nope",
                     "--out", str(tmp_path)]) == 1


def test_frontier_on_two_record_store(logistic_store, tmp_path):
    recs = ResultStore(logistic_store).read()[:2]
    small = ResultStore(tmp_path / "two.jsonl")
    small.ensure()
    for r in recs:
        small.append(r)
    assert cli.main(["analyze", "frontier", "--store", str(small.path), "--out", str(tmp_path), "--no-timestamp"]) == 0
    lines = [x for x in (tmp_path / "frontier_german.csv").read_text().splitlines() if not x.startswith("#")]
    rows = list(csv.DictReader(lines))
    assert len(rows) == 2 and 1 <= sum(r["on_frontier"] == "1" for r in rows) <= 2


def test_train_and_save(german_cache, tmp_path, capsys):
    path = tmp_path / "m.json"
    assert cli.main(["train", "--data", str(german_cache), "--family", "logistic", "--config", '{"C": 1.0}',
                     "--save", str(path)]) == 0
    out = capsys.readouterr().out
    metrics = json.loads(out[:out.rindex("}") + 1])
    assert 0.5 <= metrics["test"]["accuracy"] <= 1.0
    assert learners.load_model(path) is not None


@pytest.mark.parametrize("argv,code", [
    (["analyze", "nonsense", "--store", "x"], 2),
    (["analyze", "frontier", "--store", "/nonexistent/store.jsonl"], 2),
    (["analyze", "frontier"], 2),
    (["analyze", "select", "--store", "STORE", "--rule", "best_f1"], 2),
    (["sweep", "--data", "CACHE", "--grid", "/nonexistent/grid.toml"], 2),
    (["sweep", "--data", "CACHE"], 2),
    (["sweep", "--data", "CACHE", "--grid", "logistic", "--parallelism", "0"], 2),
    (["train", "--data", "CACHE", "--family", "nope"], 2),
    (["train", "--data", "CACHE", "--family", "logistic", "--config", "{bad"], 2),
    (["train", "--data", "CACHE", "--family", "logistic", "--config", '{"C": -1}'], 1),
    (["train", "--data", "/nonexistent/x.cache", "--family", "logistic"], 2),
    (["prepare", "--data", "x.csv"], 2),
])
def test_exit_codes(argv, code, german_cache, logistic_store, capsys):
    argv = [str(german_cache) if a == "CACHE" else str(logistic_store) if a == "STORE" else a for a in argv]
    try:
        rc = cli.main(argv)
    except SystemExit as e:
        rc = e.code
    assert rc == code


def test_corrupt_store_is_runtime_error(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"format": "tabrobust-results", "version": 42}\n')
    assert cli.main(["analyze", "frontier", "--store", str(p), "--out", str(tmp_path)]) == 1


def test_console_entry_point(german_cache):
    proc = subprocess.run([sys.executable, "-m", "tabrobust.cli", "analyze", "nonsense"], capture_output=True)
    assert proc.returncode == 2
