from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabrobust.frontier import frontier
from tabrobust.metrics import clopper_pearson
from tabrobust.sweep import analysis, grids
from tabrobust.sweep.analysis import SelectionError, SelectionRule
from tabrobust.sweep.runner import (ResultStore, RunRecord, StoreError, config_id, derive_seed, run_config,
                                    run_sweep)

BAD = {"family": "logistic", "C": -1.0}


def fake_record(cid, acc=0.8, wga=0.7, cvar=1.0, doro=0.9, dp=0.1, eo=0.1, n=(25, 25, 25, 25), config=None,
                status="ok", dataset="toy", alpha=0.5, epsilon=0.01):
    """A record whose metrics are set directly, in the layout written by evaluate."""
    if status != "ok":
        return RunRecord(dataset, cid, config or {"family": "f"}, 0, status=status, error="x")
    per = {"overall": acc, "worst_group": wga, "disparity": acc - wga, "group_sizes": list(n)}
    m = {"accuracy": per, "cross_entropy": {"overall": 0.5, "worst_group": 0.7},
         "cvar": {"overall": cvar}, "doro_cvar": {"overall": doro}, "dp_diff": dp, "eo_diff": eo,
         "n_correct": [round(acc * k) for k in n]}
    return RunRecord(dataset, cid, config or {"family": "f"}, 0, alpha=alpha, epsilon=epsilon,
                     metrics={"val": m, "test": m})


# ---------------------------------------------------------------------------
# grids


def test_two_param_grid_order():
    spec = grids.GridSpec("t", "f", params={"b": ["x", "y"], "a": [1, 2]})
    assert [(c["a"], c["b"]) for c in grids.expand_grid(spec)] == [(1, "x"), (1, "y"), (2, "x"), (2, "y")]


@pytest.mark.parametrize("name,size", [
    ("mlp", 405), ("dro_chi2", 2835), ("logistic", 8), ("gbm", 100), ("compas_chi2_small", 64),
])
def test_bundled_grid_sizes(name, size):
    spec = grids.load_grid(name)
    assert spec.size == size
    assert len(grids.expand_grid(spec)) == size


def test_wrapper_grid_crosses_objectives_and_epochs():
    cfgs = grids.expand_grid(grids.load_grid("dro_chi2"), dataset="german")
    assert {c["objective"]["variant"] for c in cfgs} == {"chi2"}
    assert len({c["objective"]["alpha"] for c in cfgs}) == 7
    assert all(c["epochs"] == 50 for c in cfgs)


def test_empty_value_list_is_an_error():
    with pytest.raises(grids.GridSpecError):
        grids.GridSpec("t", "f", params={"a": []})
    with pytest.raises(grids.GridSpecError):
        grids.expand_grid(grids.GridSpec("t", "f"))


def test_missing_grid_file():
    with pytest.raises(grids.GridSpecError):
        grids.load_grid("/nonexistent/grid.toml")


# ---------------------------------------------------------------------------
# ids, seeds and the store


def test_config_ids_distinct_and_key_order_free():
    cfgs = grids.expand_grid(grids.load_grid("mlp"))
    assert len({config_id(c) for c in cfgs}) == len(cfgs)
    assert config_id({"a": 1, "b": 2}) == config_id({"b": 2, "a": 1})
    assert config_id({"a": 1}) != config_id({"a": 1.5})


def test_seed_derivation():
    cid = config_id({"family": "logistic", "C": 1.0})
    assert derive_seed(0, cid) == derive_seed(0, cid)
    assert derive_seed(0, cid) != derive_seed(1, cid)
    assert 0 <= derive_seed(7, cid) < 2**32


def test_store_round_trip(tmp_path):
    store = ResultStore(tmp_path / "r.jsonl")
    store.ensure()
    recs = [fake_record("a"), fake_record("b", acc=0.9), fake_record("c", status="failed")]
    for r in recs:
        store.append(r)
    back = store.read()
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    assert back[1].value("accuracy") == 0.9
    assert store.completed_ids() == {"a", "b", "c"}


def test_store_header_checks(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps({"format": "tabrobust-results", "version": 99, "fields": []}) + "\n")
    with pytest.raises(StoreError, match="version"):
        ResultStore(p).read()
    p.write_text("hello\n")
    with pytest.raises(StoreError):
        ResultStore(p).ensure()
    with pytest.raises(StoreError):
        ResultStore(tmp_path / "missing.jsonl").read()


def test_torn_final_line_is_skipped(tmp_path):
    store = ResultStore(tmp_path / "r.jsonl")
    store.ensure()
    store.append(fake_record("a"))
    with open(store.path, "a") as f:
        f.write('{"dataset":"toy","config_')
    assert [r.config_id for r in store.read()] == ["a"]


def test_null_metric_reads_as_nan():
    r = fake_record("a")
    r.metrics["test"]["accuracy"]["worst_group"] = None
    assert math.isnan(RunRecord.from_json(r.to_json()).value("worst_group_accuracy"))


# ---------------------------------------------------------------------------
# sweeps on German


@pytest.fixture(scope="module")
def logistic_configs():
    return grids.expand_grid(grids.load_grid("logistic"))


def test_sweep_parallelism_does_not_change_records(german, logistic_configs, tmp_path):
    cfgs = logistic_configs + [BAD]
    a = run_sweep(cfgs, german, parallelism=1, base_seed=3)
    b = run_sweep(cfgs, german, parallelism=8, base_seed=3, store=ResultStore(tmp_path / "p8.jsonl"))
    assert [r.comparable() for r in a] == [r.comparable() for r in b]
    back = sorted(ResultStore(tmp_path / "p8.jsonl").read(), key=lambda r: r.config_id)
    assert [r.to_json() for r in back] == [r.to_json() for r in b]


def test_failed_config_is_isolated(german, logistic_configs):
    recs = run_sweep(logistic_configs[:2] + [BAD], german)
    status = {r.config_id: r.status for r in recs}
    assert status[config_id(BAD)] == "failed"
    assert sum(s == "ok" for s in status.values()) == 2
    bad = next(r for r in recs if not r.ok)
    assert "FitError" in bad.error and bad.metrics == {}


def test_resume_skips_completed(german, logistic_configs, tmp_path):
    store = ResultStore(tmp_path / "r.jsonl")
    first = run_sweep(logistic_configs[:3], german, store=store)
    assert len(first) == 3
    second = run_sweep(logistic_configs, german, store=store)
    assert len(second) == 5
    assert not {r.config_id for r in first} & {r.config_id for r in second}
    assert run_sweep(logistic_configs, german, store=store) == []
    assert len(store.read()) == 8
    assert len(run_sweep(logistic_configs[:2], german, store=store, resume=False)) == 2


def test_rerun_from_recorded_seed_reproduces_metrics(german, logistic_configs):
    cfg = {"family": "random_forest", "n_estimators": 5, "max_depth": 4}
    rec = run_sweep([cfg, logistic_configs[0]], german, base_seed=11)
    for r in rec:
        again = run_config(r.config, german, r.seed, r.alpha, r.epsilon)
        assert again.comparable() == r.comparable()


def test_val_frontier_never_selects_failed(german, logistic_configs):
    recs = run_sweep(logistic_configs + [BAD], german)
    rows, _ = analysis.frontier_rows(recs, split="val")
    ids = {r["config_id"] for r in rows if r["on_frontier"]}
    assert ids and config_id(BAD) not in ids
    assert config_id(BAD) not in {r["config_id"] for r in rows}


def test_parallelism_must_be_positive(german):
    with pytest.raises(ValueError):
        run_sweep([], german, parallelism=0)


# ---------------------------------------------------------------------------
# selection and comparison


def test_select_examples():
    assert analysis.select([fake_record("z")], SelectionRule()) == "z"
    recs = [fake_record("a", acc=0.7), fake_record("b", acc=0.9)]
    assert analysis.select(recs, SelectionRule("best_accuracy")) == "b"
    recs = [fake_record("a", cvar=2.0, wga=0.5), fake_record("b", cvar=1.0, wga=0.9)]
    assert analysis.select(recs, SelectionRule("best_cvar")) == "b"
    assert analysis.select(recs, SelectionRule("best_worst_group")) == "b"


def test_select_errors():
    with pytest.raises(SelectionError):
        analysis.select([fake_record("a", status="failed")], SelectionRule())
    with pytest.raises(SelectionError):
        analysis.select([fake_record("a", alpha=0.2)], SelectionRule("best_cvar", alpha=0.5))
    with pytest.raises(SelectionError):
        SelectionRule("best_f1")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.randoms(use_true_random=False),
       st.sampled_from(list(analysis.RULES)))
def test_select_is_order_free_with_smallest_id_on_ties(vals, rnd, rule):
    recs = [fake_record(f"id{i:02d}", acc=v / 5, wga=v / 5, cvar=v, doro=v) for i, v in enumerate(vals)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    r = SelectionRule(rule)
    chosen = analysis.select(recs, r)
    assert analysis.select(shuffled, r) == chosen
    target = max(vals) if r.maximize else min(vals)
    assert chosen == min(f"id{i:02d}" for i, v in enumerate(vals) if v == target)


def test_compare_intervals_examples():
    sig = analysis.compare_intervals(clopper_pearson(95, 100), clopper_pearson(50, 100))
    assert sig.significant
    assert not analysis.compare_intervals(clopper_pearson(52, 100), clopper_pearson(48, 100)).significant
    a = fake_record("a", acc=0.95, n=(25, 25, 25, 25))
    b = fake_record("b", acc=0.5, n=(25, 25, 25, 25))
    assert analysis.compare_ci(a, b).significant
    assert not analysis.compare_ci(a, a).significant


def test_compare_intervals_agree_with_interval_oracle():
    from scipy.stats import beta
    for (k1, k2), expect in [((95, 50), True), ((52, 48), False)]:
        lo = [beta.ppf(0.025, k, 100 - k + 1) for k in (k1, k2)]
        hi = [beta.ppf(0.975, k + 1, 100 - k) for k in (k1, k2)]
        assert (hi[1] < lo[0]) == expect


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100), st.integers(0, 100), st.sampled_from(["overall", "worst"]))
def test_compare_ci_is_symmetric(k1, k2, group):
    a = fake_record("a", acc=k1 / 100, wga=k1 / 100)
    b = fake_record("b", acc=k2 / 100, wga=k2 / 100)
    assert analysis.compare_ci(a, b, group=group).significant == analysis.compare_ci(b, a, group=group).significant


def test_worst_group_interval_uses_smallest_group():
    r = fake_record("a", wga=0.5, n=(10, 40, 0, 50))
    ci = analysis.accuracy_interval(r, "worst")
    ref = clopper_pearson(5, 10)
    assert (ci.lower, ci.upper) == (ref.lower, ref.upper)
    with pytest.raises(analysis.AnalysisError):
        analysis.accuracy_interval(fake_record("z", n=(0, 0, 0, 0)), "worst")


def test_selection_rows_report_both_rules():
    recs = [fake_record("a", acc=0.9, wga=0.5, cvar=2.0), fake_record("b", acc=0.8, wga=0.7, cvar=1.0)]
    rows = analysis.selection_rows(recs, [SelectionRule("best_accuracy"), SelectionRule("best_cvar")])
    assert [r["config_id"] for r in rows] == ["a", "b"]
    assert [r["worst_group_accuracy"] for r in rows] == [0.5, 0.7]
    for r in rows:
        assert r["accuracy_lo"] <= r["accuracy"] <= r["accuracy_hi"]
        assert r["worst_group_lo"] <= r["worst_group_accuracy"] <= r["worst_group_hi"]


# ---------------------------------------------------------------------------
# sensitivity


def grid_records(dataset, score):
    """Records over a 3 x 2 grid of (lr, act) scored by ``score(lr, act)``."""
    out = []
    for lr in (0.001, 0.01, 0.1):
        for act in ("relu", "tanh"):
            cfg = {"family": "mlp", "lr": lr, "act": act}
            out.append(fake_record(config_id(cfg) + dataset, acc=score(lr, act), config=cfg, dataset=dataset))
    return out


def test_sensitivity_collapses_shared_best_value():
    by_ds = {d: grid_records(d, lambda lr, act: 0.9 if (lr, act) == (0.01, "relu") else 0.5 + lr)
             for d in ("d1", "d2")}
    allowed = analysis.truncation(by_ds, "accuracy", "mlp")
    assert allowed == {"lr": {0.01}, "act": {"relu"}}
    series = analysis.sensitivity(by_ds, "accuracy", "mlp")
    assert all(len(s) == 1 and s[0][2] == 0.9 for s in series.values())


def test_sensitivity_without_truncation_covers_grid():
    by_ds = {"d1": grid_records("d1", lambda lr, act: 0.9 if (lr, act) == (0.001, "relu") else 0.5),
             "d2": grid_records("d2", lambda lr, act: 0.9 if (lr, act) == (0.1, "tanh") else 0.5)}
    series = analysis.sensitivity(by_ds, "accuracy", "mlp")
    assert all(len(s) == 6 for s in series.values())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=12, max_size=12))
def test_sensitivity_series_is_ranked_and_monotone(scores):
    it = iter(scores)
    by_ds = {d: grid_records(d, lambda lr, act: next(it) / 100) for d in ("d1", "d2")}
    for s in analysis.sensitivity(by_ds, "accuracy", "mlp").values():
        assert [row[0] for row in s] == list(range(1, len(s) + 1))
        vals = [row[2] for row in s]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(row[3] > 0 for row in s)


def test_sensitivity_names_missing_dataset():
    by_ds = {"d1": grid_records("d1", lambda lr, act: 0.5), "d2": []}
    with pytest.raises(analysis.AnalysisError, match="d2"):
        analysis.sensitivity(by_ds, "accuracy", "mlp")
    with pytest.raises(analysis.AnalysisError):
        analysis.sensitivity({"d1": by_ds["d1"]}, "accuracy", "mlp")


# ---------------------------------------------------------------------------
# correlations and frontier reports


def test_metric_pairs_split_into_complementary_and_not():
    pairs = list(analysis.metric_pairs())
    assert len(pairs) == 15
    assert sum(flag for _, _, flag in pairs) == 3
    assert {frozenset((a, b)) for a, b, flag in pairs if flag} == {frozenset(c) for c in analysis.COMPLEMENTARY_PAIRS}


def test_correlations_rows():
    rng = np.random.default_rng(0)
    recs = []
    for i in range(20):
        a = rng.random()
        recs.append(fake_record(f"c{i}", acc=a, wga=a - 0.1 * rng.random(), cvar=rng.random(),
                                doro=rng.random(), dp=rng.random(), eo=rng.random(), config={"family": "gbm"}))
    rows = analysis.correlations({"toy": recs + [fake_record("bad", status="failed")]})
    assert len(rows) == 15
    row = next(r for r in rows if {r["metric_1"], r["metric_2"]} == {"accuracy", "worst_group_accuracy"})
    assert row["complementary"] and row["n"] == 20
    x = [r.value("accuracy") for r in recs]
    y = [r.value("worst_group_accuracy") for r in recs]
    assert row["r"] == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    med = analysis.median_correlations(rows)
    assert len(med) == 15


def test_frontier_rows_small_store():
    recs = [fake_record("a", acc=0.8, wga=0.6, config={"family": "gbm"}),
            fake_record("b", acc=0.7, wga=0.7, config={"family": "gbm"})]
    rows, _ = analysis.frontier_rows(recs)
    assert {r["config_id"] for r in rows if r["on_frontier"]} == {"a", "b"}
    recs[1] = fake_record("b", acc=0.7, wga=0.5, config={"family": "gbm"})
    rows, _ = analysis.frontier_rows(recs)
    assert {r["config_id"] for r in rows if r["on_frontier"]} == {"a"}
    pts = [(r.value("accuracy"), r.value("worst_group_accuracy")) for r in recs]
    assert len(frontier(pts)) == 1


def test_write_csv_timestamp_toggle(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan")}]
    p1 = analysis.write_csv(tmp_path / "x.csv", rows, ["a", "b"], comments=["note"], timestamp=False)
    text = p1.read_text()
    assert text.splitlines()[0] == "# note" and "generated" not in text
    p2 = analysis.write_csv(tmp_path / "y.csv", rows, ["a", "b"], timestamp=True)
    assert p2.read_text().startswith("# generated")
