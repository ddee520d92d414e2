"""Cross-validated semi-supervised benchmark over the (fold, label split, step, repeat) grid.

For every fold ``k`` and labeled split ``q`` the hyperparameters of each
classifier and engine are grid-searched on the labeled ids only.  Then for
every step ``s`` and repeat ``r`` an unlabeled subset is drawn, pseudo-labeled
by each engine, and a downstream classifier fit on the union is scored by
macro one-vs-rest ROC-AUC on the held-out fold.
"""
from __future__ import annotations

import csv
import logging
import math
import multiprocessing
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.stats import rankdata

from .classifiers import ClassifierSpec, FitError, fit, grid_search, score
from .dataset import (
    CLASSIFIERS,
    ENGINES,
    DataError,
    ExperimentPlan,
    FeatureDataset,
    ResultRecord,
    fmt_float,
    steps_for,
    write_results,
)
from .engines import EngineError, engine_grid_search, proximity_order, pseudo_label

log = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


def rng_for(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one node of the protocol tree."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key)))


# -- index sets -----------------------------------------------------------------

def make_folds(n_D: int, n_K: int, seed: int) -> np.ndarray:
    """Fold id per sample: one shuffle, then contiguous slices of near-equal size."""
    if n_K < 2:
        raise SplitError(f"need n_K >= 2, got {n_K}")
    if n_K > n_D:
        raise SplitError(f"n_K={n_K} exceeds n_D={n_D}")
    perm = rng_for(seed, 0).permutation(n_D)
    folds = np.empty(n_D, dtype=int)
    for k, part in enumerate(np.array_split(perm, n_K)):
        folds[part] = k
    return folds


def make_label_split(I_T, Y, n_L: int, B_min: float, B_max: float, rng: np.random.Generator,
                     max_tries: int = 10000, classes=None) -> "tuple[np.ndarray, np.ndarray]":
    """Draw ``n_L`` labeled ids from ``I_T`` whose class shares all lie in ``[B_min, B_max]``.

    Uniform subsets are drawn until one satisfies the balance range.  Returns
    ``(I_L, I_U)``, both sorted.
    """
    I_T = np.asarray(I_T)
    Y = np.asarray(Y)
    classes = np.unique(Y) if classes is None else np.asarray(classes)
    if n_L > len(I_T):
        raise SplitError(f"n_L={n_L} exceeds the {len(I_T)} training ids")
    avail = np.array([np.sum(Y[I_T] == c) for c in classes])
    lo = math.ceil(n_L * B_min - 1e-9)
    hi = math.floor(n_L * B_max + 1e-9)
    if np.any(avail < lo) or np.minimum(avail, hi).sum() < n_L or lo * len(classes) > n_L:
        raise SplitError(
            f"no labeled split of size {n_L} with class shares in [{B_min}, {B_max}] exists "
            f"(per-class availability {avail.tolist()}); widen the balance range or change n_L")
    for _ in range(max_tries):
        I_L = rng.choice(I_T, size=n_L, replace=False)
        counts = np.array([np.sum(Y[I_L] == c) for c in classes])
        if np.all(counts >= lo) and np.all(counts <= hi):
            I_L = np.sort(I_L)
            return I_L, np.setdiff1d(I_T, I_L)
    raise SplitError(f"no balanced labeled split found in {max_tries} tries; "
                     "widen the balance range, change n_L or raise max_tries")


def step_size(s: int, delta_U: int, n_U: int) -> int:
    return min(s * delta_U, n_U)


def select_unlabeled_step(I_U, s: int, delta_U: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of ``min(s * delta_U, n_U)`` ids from the unlabeled pool, in draw order."""
    if s < 0:
        raise SplitError(f"step must be >= 0, got {s}")
    I_U = np.asarray(I_U)
    size = step_size(s, delta_U, len(I_U))
    if size == 0:
        return I_U[:0]
    return rng.choice(I_U, size=size, replace=False)


# -- metric ---------------------------------------------------------------------

def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_ovr(scores, labels, classes) -> float:
    """Macro one-vs-rest AUC; ``scores[:, j]`` scores membership of ``classes[j]``.

    Classes with no positives in ``labels`` are skipped with a warning.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    classes = list(classes)
    present = [c for c in classes if np.any(labels == c)]
    if len(np.unique(labels)) < 2:
        raise ValueError("AUC needs at least two classes among the labels")
    unknown = set(np.unique(labels).tolist()) - set(classes)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} have no score column")
    if len(present) < len(classes):
        warnings.warn(f"classes {[c for c in classes if c not in present]} absent; skipped in AUC",
                      stacklevel=2)
    return float(np.mean([binary_auc(scores[:, classes.index(c)], labels == c) for c in present]))


# -- one (k, q) work unit ---------------------------------------------------------

@dataclass(frozen=True)
class Unit:
    k: int
    q: int


def _combo_order(plan: ExperimentPlan) -> dict:
    return {c: i for i, c in enumerate(plan.cell_combos())}


def sort_key(plan: ExperimentPlan) -> Callable:
    order = _combo_order(plan)
    return lambda rec: (order.get((rec.engine, rec.classifier), len(order)), rec.engine,
                        rec.classifier, rec.k, rec.q, rec.s, rec.r)


def _f2_auc(spec: ClassifierSpec, X_tr, Y_tr, X_V, Y_V, classes) -> float:
    model = fit(spec, X_tr, Y_tr)
    S = score(model, X_V)
    full = np.zeros((len(X_V), len(classes)))
    for j, c in enumerate(model.classes):
        full[:, classes.index(c)] = S[:, j]
    return roc_auc_ovr(full, Y_V, classes)


def run_unit(unit: Unit, X: np.ndarray, Y: np.ndarray, folds: np.ndarray, plan: ExperimentPlan,
             skip: "frozenset | set" = frozenset()) -> list:
    """All missing cells for one fold and labeled split."""
    k, q = unit.k, unit.q
    combos = plan.cell_combos()
    classes = sorted(np.unique(Y).tolist())
    I_V = np.flatnonzero(folds == k)
    I_T = np.flatnonzero(folds != k)
    I_L, I_U = make_label_split(I_T, Y, plan.n_L, plan.B_min, plan.B_max, rng_for(plan.master_seed, 1, k, q),
                                plan.max_tries, classes)
    X_L, Y_L, X_V, Y_V = X[I_L], Y[I_L], X[I_V], Y[I_V]
    n_U = len(I_U)
    n_S = steps_for(n_U, plan.delta_U)
    settings = dict(plan.engine_params)
    settings["self_training"] = {"delta": plan.delta_self()}

    hyper: dict = {}
    failures: dict = {}

    def classifier_params(kind):
        if kind not in hyper:
            try:
                hyper[kind] = grid_search(kind, plan.grids[kind], X_L, Y_L, plan.cv_folds)
            except FitError as exc:
                failures[kind] = f"grid search: {exc}"
                hyper[kind] = None
        return hyper[kind]

    def engine_params(engine):
        key = ("engine", engine)
        if key not in hyper:
            if engine == "self_training":
                hyper[key] = {}
            else:
                try:
                    hyper[key] = engine_grid_search(engine, plan.grids[engine], X_L, Y_L,
                                                    settings[engine], plan.cv_folds)
                except (FitError, EngineError) as exc:
                    failures[key] = f"grid search: {exc}"
                    hyper[key] = None
        return hyper[key]

    out = []
    for s in range(n_S):
        n_U_s = step_size(s, plan.delta_U, n_U)
        for r in range(1 if s == 0 else plan.n_R):
            todo = [(e, c) for e, c in combos if (e, c, k, q, s, r) not in skip]
            if not todo:
                continue
            sel = select_unlabeled_step(I_U, s, plan.delta_U, rng_for(plan.master_seed, 2, k, q, s, r))
            if len(sel):
                sel = sel[proximity_order(X_L, X[sel])]
            X_U = X[sel]
            pseudo: dict = {}  # engine output shared by every downstream classifier
            supervised: dict = {}
            for engine, kind in todo:
                t0 = time.perf_counter()
                auc, converged, error = float("nan"), True, ""
                try:
                    f2 = classifier_params(kind)
                    if f2 is None:
                        raise FitError(failures[kind])
                    spec = ClassifierSpec(kind, f2)
                    if s == 0:
                        # every engine is a no-op without unlabeled data
                        if kind not in supervised:
                            supervised[kind] = _f2_auc(spec, X_L, Y_L, X_V, Y_V, classes)
                        auc = supervised[kind]
                    else:
                        key = (engine, kind) if engine == "self_training" else engine
                        if key not in pseudo:
                            h = engine_params(engine)
                            if h is None:
                                raise EngineError(failures[("engine", engine)])
                            pseudo[key] = pseudo_label(engine, X_L, Y_L, X_U, h, settings[engine],
                                                       base=spec)
                        Y_U, converged = pseudo[key]
                        auc = _f2_auc(spec, np.vstack([X_L, X_U]), np.concatenate([Y_L, Y_U]),
                                      X_V, Y_V, classes)
                except (FitError, EngineError, ValueError) as exc:
                    error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
                    log.warning("cell %s/%s k=%d q=%d s=%d r=%d failed: %s", engine, kind, k, q, s, r, error)
                wall = (time.perf_counter() - t0) * 1e3 if plan.record_timing else None
                out.append(ResultRecord(engine, kind, k, q, s, r, n_U_s, auc, bool(converged), wall, error))
    return out


# -- whole grid -----------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(X, Y, folds, plan, skip):
    _WORKER.update(X=X, Y=Y, folds=folds, plan=plan, skip=skip)


def _run_worker(unit):
    w = _WORKER
    return run_unit(unit, w["X"], w["Y"], w["folds"], w["plan"], w["skip"])


def run_experiment(data: FeatureDataset, plan: ExperimentPlan, results_path: "str | Path | None" = None,
                   existing: Iterable[ResultRecord] = (), jobs: int = 1,
                   progress: "Callable[[int, int], None] | None" = None) -> list:
    """Run every missing cell of ``plan`` and return all records sorted by key.

    Cells already in ``existing`` are skipped.  With ``results_path`` each
    finished work unit is appended as it completes and the file is rewritten
    in sorted order at the end, so the output bytes do not depend on ``jobs``.
    """
    X = np.asarray(data.X, dtype=float)
    Y = np.asarray(data.Y, dtype=int)
    if np.any(Y < 0):
        raise DataError("every row needs a ground-truth label to run the benchmark")
    n_D = len(Y)
    plan.validate_for(n_D)
    folds = make_folds(n_D, plan.n_K, plan.master_seed)
    done = {rec.key: rec for rec in existing}
    skip = frozenset(done)
    units = [Unit(k, q) for k in range(plan.n_K) for q in range(plan.n_Q)]

    # uneven folds can give one fold an extra step
    n_S = [steps_for(int(np.sum(folds != k)) - plan.n_L, plan.delta_U) for k in range(plan.n_K)]

    def missing(u):
        return any((e, c, u.k, u.q, s, r) not in skip for e, c in plan.cell_combos()
                   for s in range(n_S[u.k]) for r in range(1 if s == 0 else plan.n_R))

    todo = [u for u in units if missing(u)]
    path = Path(results_path) if results_path is not None else None
    if path is not None and not path.exists():
        write_results([], path)

    def consume(records, i):
        for rec in records:
            done[rec.key] = rec
        if path is not None:
            write_results(records, path, append=True)
        if progress is not None:
            progress(i + 1, len(todo))

    if jobs > 1 and len(todo) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(X, Y, folds, plan, skip)) as pool:
            for i, records in enumerate(pool.imap(_run_worker, todo)):
                consume(records, i)
    else:
        for i, u in enumerate(todo):
            consume(run_unit(u, X, Y, folds, plan, skip), i)

    records = sorted(done.values(), key=sort_key(plan))
    if path is not None:
        write_results(records, path)
    return records


# -- aggregation -----------------------------------------------------------------

AGGREGATE_COLUMNS = ["engine", "classifier", "s", "n_U_s", "mean_auc", "p5_auc", "p95_auc", "n_cells", "n_failed"]


@dataclass(frozen=True)
class AggregateRow:
    engine: str
    classifier: str
    s: int
    n_U_s: int
    mean_auc: float
    p5_auc: float
    p95_auc: float
    n_cells: int
    n_failed: int = 0


def aggregate(records: Iterable[ResultRecord]) -> list:
    """Mean and 5th/95th percentiles of AUC per (engine, classifier, step), failures excluded."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.engine, rec.classifier, rec.s), []).append(rec)

    def order(key):
        e, c, s = key
        return (ENGINES.index(e) if e in ENGINES else len(ENGINES), e,
                CLASSIFIERS.index(c) if c in CLASSIFIERS else len(CLASSIFIERS), c, s)

    rows = []
    for key in sorted(groups, key=order):
        recs = groups[key]
        auc = np.array([r.auc for r in recs if not r.failed])
        n_failed = len(recs) - len(auc)
        if auc.size == 0:
            warnings.warn(f"group {key} has no successful cells; skipped", stacklevel=2)
            continue
        p5, p95 = np.percentile(auc, [5, 95])
        rows.append(AggregateRow(key[0], key[1], key[2], recs[0].n_U_s, float(auc.mean()),
                                 float(p5), float(p95), int(auc.size), n_failed))
    return rows


def write_aggregate(rows: Iterable[AggregateRow], path: "str | Path") -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for a in rows:
            w.writerow([a.engine, a.classifier, a.s, a.n_U_s, fmt_float(a.mean_auc), fmt_float(a.p5_auc),
                        fmt_float(a.p95_auc), a.n_cells, a.n_failed])
    return path


def summary_table(rows: list) -> "tuple[str, tuple | None]":
    """Console table of p5 AUC at the first and last step, plus the best final-step combination."""
    by_combo: dict = {}
    for a in rows:
        by_combo.setdefault((a.engine, a.classifier), []).append(a)
    lines = [f"{'engine':<16} {'classifier':<10} {'p5@first':>9} {'p5@last':>9} {'mean@last':>10} {'cells':>6}"]
    best, best_val = None, -np.inf
    for (e, c), group in by_combo.items():
        group = sorted(group, key=lambda a: a.s)
        first, last = group[0], group[-1]
        lines.append(f"{e:<16} {c:<10} {first.p5_auc:>9.4f} {last.p5_auc:>9.4f} {last.mean_auc:>10.4f} "
                     f"{sum(a.n_cells for a in group):>6d}")
        if last.p5_auc > best_val:
            best, best_val = (e, c), last.p5_auc
    if best is not None:
        lines.append(f"best final-step p5 AUC: {best[0]}/{best[1]} ({best_val:.4f})")
    return "\n".join(lines), best
