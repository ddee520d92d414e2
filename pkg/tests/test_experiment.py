import math
import warnings

import numpy as np
import pytest

from eventssl.dataset import ExperimentPlan, ResultRecord, read_results
from eventssl.experiment import (
    SplitError,
    aggregate,
    binary_auc,
    make_folds,
    make_label_split,
    rng_for,
    roc_auc_ovr,
    run_experiment,
    select_unlabeled_step,
    step_size,
    summary_table,
    write_aggregate,
)

TINY_GRIDS = {
    "kNN": {"k": [1, 3]},
    "DT": {"max_depth": [3]},
    "GB": {"n_trees": [10]},
    "SVML": {"C": [1.0]},
    "SVMR": {"C": [1.0]},
    "tsvm": {"C": [1.0], "C_u": [0.5]},
    "label_spreading": {"alpha": [0.2], "sigma_scale": [0.5]},
}


def tiny_plan(**kw):
    base = dict(n_K=2, n_Q=2, n_L=12, delta_U=10, n_R=2, master_seed=3, grids=TINY_GRIDS,
                combos=[("self_training", "kNN"), ("tsvm", "kNN"), ("label_spreading", "kNN"),
                        ("label_spreading", "SVML")])
    base.update(kw)
    return ExperimentPlan(**base)


# -- folds and splits --------------------------------------------------------------------

def test_fold_sizes_table_values():
    folds = make_folds(1827, 10, seed=0)
    sizes = np.bincount(folds)
    assert sizes.sum() == 1827 and sizes.max() - sizes.min() <= 1
    plan = ExperimentPlan(n_K=10)
    assert (plan.n_T(1827), plan.n_V(1827)) == (1644, 183)


def test_folds_partition():
    folds = make_folds(10, 5, seed=1)
    assert np.bincount(folds).tolist() == [2] * 5
    np.testing.assert_array_equal(make_folds(10, 5, seed=1), folds)
    with pytest.raises(SplitError):
        make_folds(3, 5, seed=0)


def test_label_split_balance_bounds():
    Y = np.repeat([1, 2, 3, 4], [300, 300, 300, 200])
    I_T = np.arange(len(Y))
    for q in range(20):
        I_L, I_U = make_label_split(I_T, Y, 24, 0.2, 0.8, rng_for(0, 1, 0, q))
        counts = np.bincount(Y[I_L], minlength=5)[1:]
        assert counts.min() >= 5 and counts.max() <= 19
        assert len(I_L) == 24 and len(I_U) == len(Y) - 24
        assert len(np.intersect1d(I_L, I_U)) == 0
        np.testing.assert_array_equal(np.union1d(I_L, I_U), I_T)


def test_label_split_vacuous_range_takes_first_draw():
    Y = np.repeat([1, 2, 3, 4], 10)
    I_T = np.arange(40)
    I_L, _ = make_label_split(I_T, Y, 8, 0.0, 1.0, rng_for(5, 1))
    first = np.sort(rng_for(5, 1).choice(I_T, size=8, replace=False))
    np.testing.assert_array_equal(I_L, first)


def test_label_split_infeasible():
    Y = np.repeat([1, 2, 3], 10)
    with pytest.raises(SplitError, match="no labeled split"):
        make_label_split(np.arange(30), Y, 12, 0.2, 0.8, rng_for(0), classes=[1, 2, 3, 4])
    with pytest.raises(SplitError):
        make_label_split(np.arange(30), Y, 40, 0.0, 1.0, rng_for(0))


def test_label_split_max_tries_message():
    # feasible but practically unreachable: one rare class needs exactly half the labels
    Y = np.array([1] * 990 + [2] * 10)
    with pytest.raises(SplitError, match="max_tries"):
        make_label_split(np.arange(1000), Y, 20, 0.5, 0.5, rng_for(0), max_tries=50)


def test_steps_table_values():
    plan = ExperimentPlan(n_K=10, n_L=24, delta_U=100)
    n_U = plan.n_U(1827)
    sizes = [step_size(s, 100, n_U) for s in range(plan.n_S(1827))]
    assert len(sizes) == 18
    assert sizes[0] == 0 and sizes[1] == 100 and sizes[-1] == 1620


def test_select_step_edges():
    I_U = np.arange(100, 150)
    assert select_unlabeled_step(I_U, 0, 20, rng_for(0)).size == 0
    for r in range(3):
        sel = select_unlabeled_step(I_U, 3, 20, rng_for(0, r))
        np.testing.assert_array_equal(np.sort(sel), I_U)
    sel = select_unlabeled_step(I_U, 2, 20, rng_for(1))
    assert len(sel) == 40 and len(np.unique(sel)) == 40
    with pytest.raises(SplitError):
        select_unlabeled_step(I_U, -1, 20, rng_for(0))


# -- AUC --------------------------------------------------------------------------------

def pair_count_auc(scores, labels, classes):
    aucs = []
    for j, c in enumerate(classes):
        pos = [scores[i][j] for i in range(len(labels)) if labels[i] == c]
        neg = [scores[i][j] for i in range(len(labels)) if labels[i] != c]
        if not pos:
            continue
        wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
        aucs.append(wins / (len(pos) * len(neg)))
    return sum(aucs) / len(aucs)


def test_auc_hand_matrix():
    S = np.array([[0.9, 0.1, 0.3, 0.2], [0.4, 0.4, 0.1, 0.6], [0.2, 0.5, 0.5, 0.1], [0.3, 0.3, 0.7, 0.2],
                  [0.6, 0.2, 0.2, 0.4], [0.1, 0.6, 0.6, 0.3], [0.6, 0.5, 0.4, 0.4], [0.2, 0.1, 0.3, 0.5]])
    Y = [1, 4, 2, 3, 4, 2, 1, 3]
    # per class 23/24, 23/24, 17/24, 7/8 by exact fraction arithmetic
    assert roc_auc_ovr(S, Y, [1, 2, 3, 4]) == 0.875


def test_auc_perfect_and_constant():
    Y = np.array([1, 2, 3, 4, 1, 2, 3, 4])
    onehot = (Y[:, None] == np.arange(1, 5)[None, :]).astype(float)
    assert roc_auc_ovr(onehot, Y, [1, 2, 3, 4]) == 1.0
    assert roc_auc_ovr(np.ones((8, 4)), Y, [1, 2, 3, 4]) == 0.5


def test_auc_random_against_pair_count():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(8, 51))
        Y = rng.choice([1, 2, 3, 4], size=n)
        Y[:4] = [1, 2, 3, 4]
        S = np.round(rng.uniform(size=(n, 4)), 1)  # coarse grid forces ties
        assert abs(roc_auc_ovr(S, Y, [1, 2, 3, 4]) - pair_count_auc(S, Y, [1, 2, 3, 4])) < 1e-12


def test_auc_absent_class_and_single_class():
    Y = np.array([1, 1, 2, 2])
    S = np.array([[0.9, 0.1, 0.5], [0.8, 0.3, 0.5], [0.2, 0.7, 0.5], [0.1, 0.9, 0.5]])
    with pytest.warns(UserWarning, match="absent"):
        assert roc_auc_ovr(S, Y, [1, 2, 3]) == 1.0
    with pytest.raises(ValueError):
        roc_auc_ovr(S, np.ones(4, dtype=int), [1, 2, 3])
    with pytest.raises(ValueError):
        binary_auc([1.0, 2.0], [True, True])


# -- aggregation -------------------------------------------------------------------------

def rec(auc, s=1, r=0, k=0, q=0, engine="tsvm", kind="kNN", error=""):
    return ResultRecord(engine, kind, k, q, s, r, 10 * s, auc, True, None, error)


def test_aggregate_percentiles():
    rows = aggregate([rec(i / 100, r=i) for i in range(101)])
    assert len(rows) == 1
    assert rows[0].p5_auc == pytest.approx(0.05, abs=1e-12)
    assert rows[0].p95_auc == pytest.approx(0.95, abs=1e-12)
    assert rows[0].mean_auc == pytest.approx(0.5, abs=1e-12)
    single = aggregate([rec(0.7)])[0]
    assert single.mean_auc == single.p5_auc == single.p95_auc == 0.7


def test_aggregate_excludes_failures_and_orders_rows():
    recs = [rec(0.8, s=1), rec(float("nan"), s=1, r=1, error="EngineError: x"),
            rec(0.6, s=0, engine="self_training"), rec(0.9, s=0, kind="DT")]
    rows = aggregate(recs)
    assert [(a.engine, a.classifier, a.s) for a in rows] == [
        ("self_training", "kNN", 0), ("tsvm", "kNN", 1), ("tsvm", "DT", 0)]
    assert rows[1].n_cells == 1 and rows[1].n_failed == 1
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert aggregate([rec(float("nan"), error="x")]) == []
    assert any("no successful" in str(x.message) for x in w)


def test_summary_names_best():
    rows = aggregate([rec(0.7, s=0), rec(0.8, s=2), rec(0.6, s=0, engine="label_spreading"),
                      rec(0.9, s=2, engine="label_spreading")])
    text, best = summary_table(rows)
    assert best == ("label_spreading", "kNN")
    assert "best final-step p5 AUC: label_spreading/kNN" in text


# -- end-to-end grid ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    from conftest import make_blob_dataset

    data = make_blob_dataset()
    plan = tiny_plan()
    path = tmp_path_factory.mktemp("run") / "results.csv"
    return data, plan, path, run_experiment(data, plan, path)


def test_cell_count(tiny_run):
    data, plan, path, records = tiny_run
    n_D = data.n
    assert len(records) == plan.total_cells(n_D)
    n_S = plan.n_S(n_D)
    assert plan.total_cells(n_D) == 4 * 2 * 2 * (1 + (n_S - 1) * 2)
    assert len({r.key for r in records}) == len(records)
    assert not any(r.failed for r in records)
    per_s = {}
    for r in records:
        per_s.setdefault((r.engine, r.classifier, r.s), 0)
        per_s[(r.engine, r.classifier, r.s)] += 1
    for (e, c, s), n in per_s.items():
        assert n == plan.n_K * plan.n_Q * (1 if s == 0 else plan.n_R)


def test_step_zero_identical_across_engines(tiny_run):
    _, _, _, records = tiny_run
    by = {}
    for r in records:
        if r.s == 0 and r.classifier == "kNN":
            by.setdefault((r.k, r.q), set()).add(r.auc)
    assert all(len(v) == 1 for v in by.values())


def test_final_step_uses_whole_pool(tiny_run):
    data, plan, _, records = tiny_run
    last = max(r.s for r in records)
    assert {r.n_U_s for r in records if r.s == last} == {plan.n_U(data.n)}


def test_results_file_sorted_and_reloadable(tiny_run):
    _, _, path, records = tiny_run
    assert read_results(path) == records


def test_parallel_and_resume_identical(tiny_run, tmp_path):
    data, plan, path, records = tiny_run
    par = tmp_path / "par.csv"
    run_experiment(data, plan, par, jobs=2)
    assert par.read_bytes() == path.read_bytes()
    # drop a slice of cells and resume
    partial = [r for r in records if not (r.k == 1 and r.s >= 2)]
    res = tmp_path / "resume.csv"
    run_experiment(data, plan, res, existing=partial)
    assert res.read_bytes() == path.read_bytes()


def test_failed_cells_recorded(tmp_path):
    from conftest import make_blob_dataset

    grids = dict(TINY_GRIDS, label_spreading={"alpha": [0.2], "sigma_scale": [1e-4]})
    plan = tiny_plan(n_Q=1, n_R=1, combos=[("label_spreading", "kNN")], grids=grids)
    records = run_experiment(make_blob_dataset(), plan, tmp_path / "r.csv")
    failed = [r for r in records if r.failed]
    assert failed and all(r.s > 0 for r in failed)
    assert all(math.isnan(r.auc) and "zero-degree" in r.error for r in failed)
    with pytest.warns(UserWarning, match="no successful cells"):
        rows = aggregate(records)
    assert rows[0].s == 0 and rows[0].n_failed == 0
    assert len(rows) == 1
    path = write_aggregate(rows, tmp_path / "agg.csv")
    assert path.read_text().splitlines()[0].split(",")[-1] == "n_failed"


def test_unlabeled_rows_rejected(tmp_path):
    from conftest import make_blob_dataset
    from eventssl.dataset import DataError, FeatureDataset

    d = make_blob_dataset()
    Y = d.Y.copy()
    Y[0] = -1
    bad = FeatureDataset(d.X, Y, d.feature_names, d.event_ids, d.meta)
    with pytest.raises(DataError):
        run_experiment(bad, tiny_plan())
