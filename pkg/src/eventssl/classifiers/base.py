from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from ._smo import smo_solve
from ._tree_kernels import (
    apply_tree,
    fit_gradient_boosting_hist,
    grow_classification,
    make_bins,
    predict_gradient_boosting,
)

KINDS = ("kNN", "DT", "GB", "SVML", "SVMR")

DEFAULT_PARAMS = {
    "kNN": {"k": 5},
    "DT": {"max_depth": 5, "min_leaf": 1},
    "GB": {"n_trees": 100, "depth": 3, "learning_rate": 0.1, "min_leaf": 1, "max_bins": 32},
    "SVML": {"C": 1.0},
    "SVMR": {"C": 1.0, "gamma": 0.1},  # effective RBF width is gamma / d
}

SVM_TOL = 1e-4


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FitError(f"unknown classifier kind {self.kind!r}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise FitError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        for name, v in merged.items():
            if self.kind == "GB" and name == "n_trees":
                if v < 0:
                    raise FitError("GB n_trees must be >= 0")
            elif not v > 0:
                raise FitError(f"{self.kind}: hyperparameter {name} must be positive, got {v}")
        object.__setattr__(self, "params", merged)

    def with_params(self, **params) -> "ClassifierSpec":
        return ClassifierSpec(self.kind, {**self.params, **params})


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: ClassifierSpec
    classes: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    state: dict

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise FitError(f"expected inputs with {self.d} features, got shape {X.shape}")
        return (X - self.mean) / self.std


def _check_training(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise FitError(f"X shape {X.shape} incompatible with {Y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise FitError("non-finite feature values")
    if np.any(Y < 0):
        raise FitError("training labels contain the unlabeled sentinel")
    classes = np.unique(Y)
    if classes.size < 2:
        raise FitError(f"need at least 2 classes, got {classes.tolist()}")
    return X, Y.astype(int), classes


def fit(spec: ClassifierSpec, X, Y) -> TrainedModel:
    X, Y, classes = _check_training(X, Y)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Xs = (X - mean) / std
    yi = np.searchsorted(classes, Y)
    state = _FITTERS[spec.kind](Xs, yi, len(classes), spec.params)
    return TrainedModel(spec, classes, mean, std, state)


def score(model: TrainedModel, X) -> np.ndarray:
    """n x |classes| scores, higher meaning more likely; columns follow ``model.classes``."""
    Xs = model.transform(X)
    if Xs.shape[0] == 0:
        return np.zeros((0, len(model.classes)))
    return _SCORERS[model.spec.kind](model.state, Xs, len(model.classes))


def predict(model: TrainedModel, X) -> np.ndarray:
    s = score(model, X)
    if s.shape[0] == 0:
        return np.zeros(0, dtype=int)
    # argmax returns the first maximum, i.e. the lowest class code
    return model.classes[np.argmax(s, axis=1)]


# -- kNN ----------------------------------------------------------------------

def _fit_knn(Xs, yi, n_classes, params):
    return {"X": Xs, "y": yi, "k": int(min(params["k"], len(yi)))}


def _score_knn(state, Xs, n_classes):
    D = cdist(Xs, state["X"], "sqeuclidean")
    k = state["k"]
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    votes = np.zeros((Xs.shape[0], n_classes))
    rows = np.repeat(np.arange(Xs.shape[0]), k)
    np.add.at(votes, (rows, state["y"][nn].ravel()), 1.0)
    return votes / k


# -- trees --------------------------------------------------------------------

def _presort(Xs):
    order = np.ascontiguousarray(np.argsort(Xs, axis=0, kind="stable").T)
    xs = np.ascontiguousarray(np.take_along_axis(Xs.T, order, axis=1))
    return order, xs


def _fit_dt(Xs, yi, n_classes, params):
    f, t, l, r, v = grow_classification(Xs, *_presort(Xs), yi.astype(np.int64), n_classes,
                                        int(params["max_depth"]), float(params["min_leaf"]))
    return {"tree": (f, t, l, r), "value": v}


def _score_dt(state, Xs, n_classes):
    leaf = apply_tree(Xs, *state["tree"])
    return state["value"][leaf]


def bin_features(Xs, max_bins: int):
    return make_bins(np.ascontiguousarray(Xs), int(max(2, min(max_bins, 255))))


def _fit_gb(Xs, yi, n_classes, params):
    bins, edges, n_edges = bin_features(Xs, params["max_bins"])
    out = fit_gradient_boosting_hist(Xs, bins, edges, n_edges, yi.astype(np.int64), n_classes,
                                     int(params["n_trees"]), int(params["depth"]),
                                     float(params["min_leaf"]), float(params["learning_rate"]))
    return {"model": out, "rate": float(params["learning_rate"])}


def _score_gb(state, Xs, n_classes):
    init, feats, thrs, lefts, rights, vals = state["model"]
    F = predict_gradient_boosting(Xs, init, feats, thrs, lefts, rights, vals, n_classes, state["rate"])
    F -= F.max(axis=1, keepdims=True)
    P = np.exp(F)
    return P / P.sum(axis=1, keepdims=True)


# -- SVM ----------------------------------------------------------------------

def kernel_matrix(A, B, kind: str, gamma: float = 0.0) -> np.ndarray:
    if kind == "linear":
        return A @ B.T
    if kind == "rbf":
        return np.exp(-gamma * cdist(A, B, "sqeuclidean"))
    raise FitError(f"unknown kernel {kind!r}")


def train_binary_svm(K, y, C, tol=SVM_TOL, alpha0=None, max_iter=None):
    """Solve one dual problem on a precomputed kernel; ``C`` may be a scalar or per-sample."""
    n = K.shape[0]
    Cv = np.broadcast_to(np.asarray(C, dtype=float), (n,)).copy()
    a0 = np.zeros(n) if alpha0 is None else np.asarray(alpha0, dtype=float)
    if max_iter is None:
        max_iter = max(1_000_000, 100 * n)
    alpha, rho, it, ok = smo_solve(np.ascontiguousarray(K), y.astype(float), Cv, tol, a0, max_iter)
    return alpha, rho, bool(ok)


def _fit_svm(Xs, yi, n_classes, params, kernel):
    gamma = params.get("gamma", 0.0) / Xs.shape[1]
    K = kernel_matrix(Xs, Xs, kernel, gamma)
    coefs, rhos = [], []
    for c in range(n_classes):
        y = np.where(yi == c, 1.0, -1.0)
        alpha, rho, _ = train_binary_svm(K, y, params["C"])
        coefs.append(alpha * y)
        rhos.append(rho)
    coef = np.array(coefs)  # classes x n
    state = {"kernel": kernel, "gamma": gamma, "rho": np.array(rhos)}
    if kernel == "linear":
        state["w"] = coef @ Xs  # classes x d
    else:
        sv = np.any(coef != 0, axis=0)
        state["sv"] = Xs[sv]
        state["coef"] = coef[:, sv]
    return state


def _score_svm(state, Xs, n_classes):
    if state["kernel"] == "linear":
        return Xs @ state["w"].T - state["rho"]
    if state["sv"].shape[0] == 0:
        return np.tile(-state["rho"], (Xs.shape[0], 1))
    K = kernel_matrix(Xs, state["sv"], "rbf", state["gamma"])
    return K @ state["coef"].T - state["rho"]


_FITTERS = {
    "kNN": _fit_knn,
    "DT": _fit_dt,
    "GB": _fit_gb,
    "SVML": lambda Xs, yi, K, p: _fit_svm(Xs, yi, K, p, "linear"),
    "SVMR": lambda Xs, yi, K, p: _fit_svm(Xs, yi, K, p, "rbf"),
}
_SCORERS = {
    "kNN": _score_knn,
    "DT": _score_dt,
    "GB": _score_gb,
    "SVML": _score_svm,
    "SVMR": _score_svm,
}


# -- model selection ----------------------------------------------------------

def stratified_folds(Y, folds: int) -> np.ndarray:
    """Fold id per sample: within each class, samples in index order go round-robin."""
    Y = np.asarray(Y)
    out = np.empty(len(Y), dtype=int)
    for c in np.unique(Y):
        idx = np.flatnonzero(Y == c)
        out[idx] = np.arange(len(idx)) % folds
    return out


def grid_points(grid: dict) -> list:
    """Cartesian product in key insertion order, last key varying fastest."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise FitError("empty grid")
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def cv_grid_search(evaluate: Callable, grid: dict, X, Y, folds: int = 3) -> dict:
    """Return the grid point with the best pooled held-out accuracy (first wins ties).

    ``evaluate(params, X_train, Y_train, X_test)`` returns predicted labels.
    Stratified ``folds``-fold CV is used when ``n >= folds * |classes|``,
    leave-one-out otherwise.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    points = grid_points(grid)
    if len(points) == 1:
        return points[0]
    n_classes = len(np.unique(Y))
    if len(Y) >= folds * n_classes:
        fold_id = stratified_folds(Y, folds)
        n_folds = folds
    else:
        fold_id = np.arange(len(Y))
        n_folds = len(Y)
    best, best_acc = points[0], -1.0
    for params in points:
        correct = 0
        for f in range(n_folds):
            te = fold_id == f
            tr = ~te
            if not te.any() or len(np.unique(Y[tr])) < 2:
                continue
            try:
                pred = evaluate(params, X[tr], Y[tr], X[te])
            except FitError:
                continue
            correct += int(np.sum(pred == Y[te]))
        acc = correct / len(Y)
        if acc > best_acc:
            best, best_acc = params, acc
    return best


def grid_search(kind: str, grid: dict, X, Y, folds: int = 3, fixed: "dict | None" = None) -> dict:
    """Best hyperparameters of classifier ``kind`` over ``grid`` on labeled data."""
    fixed = fixed or {}

    def evaluate(params, Xtr, Ytr, Xte):
        return predict(fit(ClassifierSpec(kind, {**fixed, **params}), Xtr, Ytr), Xte)

    return {**fixed, **cv_grid_search(evaluate, grid, X, Y, folds)}
