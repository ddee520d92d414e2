"""Pseudo-labeling engines: batched self-training, transductive SVM, label spreading.

Each engine takes a labeled block ``(X_L, Y_L)`` and an unlabeled block ``X_U``
(rows already sorted by proximity to the labeled set) and returns one label
per unlabeled row.  Labeled rows are never relabeled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .classifiers import ClassifierSpec, FitError, cv_grid_search, fit, predict
from .classifiers.base import SVM_TOL, kernel_matrix, train_binary_svm


class EngineError(RuntimeError):
    pass


def _standardize(X: np.ndarray) -> np.ndarray:
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return (X - X.mean(axis=0)) / std


def _check_labeled(Y_L) -> np.ndarray:
    Y_L = np.asarray(Y_L).astype(int)
    if np.any(Y_L < 0):
        raise EngineError("labeled block contains the unlabeled sentinel")
    if np.unique(Y_L).size < 2:
        raise EngineError("labeled block needs at least 2 classes")
    return Y_L


def proximity_order(X_L, X_U) -> np.ndarray:
    """Permutation of ``X_U`` by ascending distance to the nearest labeled row.

    Distances are taken in features standardized over the union of both blocks;
    ties keep the original order.
    """
    X_L = np.asarray(X_L, dtype=float)
    X_U = np.asarray(X_U, dtype=float)
    if X_U.shape[0] == 0:
        return np.zeros(0, dtype=int)
    Z = _standardize(np.vstack([X_L, X_U]))
    near = cdist(Z[len(X_L):], Z[:len(X_L)], "sqeuclidean").min(axis=1)
    return np.argsort(near, kind="stable")


# -- self-training --------------------------------------------------------------

def self_train(base: ClassifierSpec, X_L, Y_L, X_U, delta: int) -> np.ndarray:
    """Pseudo labels for ``X_U`` from a base classifier refit after every batch.

    The base is fit on the current pool, labels the next ``delta`` unlabeled rows
    in order, and those rows join the pool.  The last batch may be shorter.
    """
    if delta < 1:
        raise EngineError(f"batch size must be >= 1, got {delta}")
    X_L = np.asarray(X_L, dtype=float)
    Y_L = _check_labeled(Y_L)
    X_U = np.asarray(X_U, dtype=float)
    n_U = X_U.shape[0]
    out = np.empty(n_U, dtype=int)
    for b, start in enumerate(range(0, n_U, delta)):
        stop = min(start + delta, n_U)
        pool_X = np.vstack([X_L, X_U[:start]])
        pool_Y = np.concatenate([Y_L, out[:start]])
        try:
            model = fit(base, pool_X, pool_Y)
        except FitError as exc:
            raise EngineError(f"self-training batch {b}: {exc}") from exc
        out[start:stop] = predict(model, X_U[start:stop])
    return out


# -- transductive SVM -------------------------------------------------------------

@dataclass
class TSVMResult:
    coef: np.ndarray  # alpha * y over all rows, labeled first
    rho: float
    y_U: np.ndarray  # +-1 per unlabeled row
    decision_U: np.ndarray
    converged: bool
    trace: list = field(default_factory=list)  # (C_u stage, objective) at each stage start and accepted swap
    n_swaps: int = 0


def tsvm_objective(coef, rho, K, y_L, C, C_u) -> float:
    """``||w|| + C sum hinge(labeled) + C_u sum min(hinge(+1), hinge(-1))`` on unlabeled rows."""
    n_L = len(y_L)
    f = K @ coef - rho
    w_norm = np.sqrt(max(float(coef @ K @ coef), 0.0))
    lab = np.maximum(0.0, 1.0 - y_L * f[:n_L]).sum()
    unl = np.maximum(0.0, 1.0 - np.abs(f[n_L:])).sum()
    return w_norm + C * lab + C_u * unl


def _swap_candidates(y_U, xi, limit):
    pos = np.flatnonzero((y_U > 0) & (xi > 0))
    neg = np.flatnonzero((y_U < 0) & (xi > 0))
    pos = pos[np.argsort(-xi[pos], kind="stable")][:limit]
    neg = neg[np.argsort(-xi[neg], kind="stable")][:limit]
    pairs = [(xi[i] + xi[j], i, j) for i in pos for j in neg if xi[i] + xi[j] > 2.0]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [(i, j) for _, i, j in pairs]


def tsvm_binary(X_L, y_L, X_U, C: float = 1.0, C_u: "float | None" = None, kernel: str = "linear",
                gamma: float = 0.1, anneal_steps: int = 5, max_swaps: int = 200,
                balance: bool = False, candidates: int = 8, tol: float = SVM_TOL) -> TSVMResult:
    """Two-class transductive SVM by label switching.

    Unlabeled labels start from the supervised SVM.  The unlabeled cost is raised
    geometrically from ``C_u/100`` to ``C_u``; at every stage opposite-labeled
    pairs with slack sum above 2 are swapped, and a swap is kept only if the
    retrained model strictly lowers the objective at that stage.  Features are
    standardized over both blocks; the RBF width is ``gamma / d``.
    """
    X_L = np.asarray(X_L, dtype=float)
    X_U = np.asarray(X_U, dtype=float)
    y_L = np.asarray(y_L, dtype=float)
    if not (np.any(y_L > 0) and np.any(y_L < 0)):
        raise EngineError("tsvm_binary needs both classes in the labeled block")
    if not set(np.unique(y_L)) <= {-1.0, 1.0}:
        raise EngineError("binary labels must be +-1")
    C_u = C if C_u is None else C_u
    if C <= 0 or C_u < 0:
        raise EngineError("need C > 0 and C_u >= 0")
    n_L, n_U = len(y_L), X_U.shape[0]
    Z = _standardize(np.vstack([X_L, X_U]))
    K = kernel_matrix(Z, Z, kernel, gamma / Z.shape[1])
    K_L = np.ascontiguousarray(K[:n_L, :n_L])

    alpha, rho, ok = train_binary_svm(K_L, y_L, C, tol)
    coef = np.concatenate([alpha * y_L, np.zeros(n_U)])
    converged = ok
    f_U = K[n_L:, :n_L] @ coef[:n_L] - rho
    if balance and n_U:
        n_pos = int(round(np.mean(y_L > 0) * n_U))
        y_U = -np.ones(n_U)
        y_U[np.argsort(-f_U, kind="stable")[:n_pos]] = 1.0
    else:
        y_U = np.where(f_U >= 0, 1.0, -1.0)
    trace: list = []
    if n_U == 0 or C_u == 0:
        return TSVMResult(coef, rho, y_U, f_U, converged, trace)

    alpha_full = np.concatenate([alpha, np.zeros(n_U)])
    swaps = 0
    for c_u in np.geomspace(C_u / 100.0, C_u, anneal_steps):
        Cv = np.concatenate([np.full(n_L, C), np.full(n_U, c_u)])
        y = np.concatenate([y_L, y_U])
        alpha_full, rho, ok = train_binary_svm(K, y, Cv, tol, alpha0=alpha_full)
        converged &= ok
        coef = alpha_full * y
        best = tsvm_objective(coef, rho, K, y_L, C, c_u)
        trace.append((float(c_u), float(best)))
        improved = True
        while improved and swaps < max_swaps:
            improved = False
            f_U = K[n_L:] @ coef - rho
            xi = np.maximum(0.0, 1.0 - y_U * f_U)
            for i, j in _swap_candidates(y_U, xi, candidates):
                y_try = y.copy()
                y_try[n_L + i], y_try[n_L + j] = -y[n_L + i], -y[n_L + j]
                a0 = alpha_full.copy()
                a0[n_L + i], a0[n_L + j] = alpha_full[n_L + j], alpha_full[n_L + i]
                a_new, rho_new, ok_new = train_binary_svm(K, y_try, Cv, tol, alpha0=a0)
                obj = tsvm_objective(a_new * y_try, rho_new, K, y_L, C, c_u)
                if obj < best:
                    y, alpha_full, rho, best = y_try, a_new, rho_new, obj
                    converged &= ok_new
                    coef = alpha_full * y
                    y_U = y[n_L:].copy()
                    trace.append((float(c_u), float(obj)))
                    swaps += 1
                    improved = True
                    break
        if swaps >= max_swaps:
            converged = False
            break
    f_U = K[n_L:] @ coef - rho
    return TSVMResult(coef, rho, y_U, f_U, converged, trace, swaps)


def tsvm_multiclass(X_L, Y_L, X_U, C: float = 1.0, C_u: "float | None" = None,
                    **kwargs) -> "tuple[np.ndarray, bool]":
    """One-vs-rest over :func:`tsvm_binary`; each row takes the class with the largest decision."""
    Y_L = _check_labeled(Y_L)
    X_U = np.asarray(X_U, dtype=float)
    classes = np.unique(Y_L)
    if X_U.shape[0] == 0:
        return np.zeros(0, dtype=int), True
    if classes.size == 2:
        res = tsvm_binary(X_L, np.where(Y_L == classes[1], 1.0, -1.0), X_U, C, C_u, **kwargs)
        return np.where(res.y_U > 0, classes[1], classes[0]), res.converged
    dec = np.empty((X_U.shape[0], classes.size))
    converged = True
    for c_idx, c in enumerate(classes):
        res = tsvm_binary(X_L, np.where(Y_L == c, 1.0, -1.0), X_U, C, C_u, **kwargs)
        dec[:, c_idx] = res.decision_U
        converged &= res.converged
    return classes[np.argmax(dec, axis=1)], converged


# -- label spreading --------------------------------------------------------------

@dataclass(frozen=True)
class AffinityGraph:
    W: np.ndarray
    degree: np.ndarray
    Z: np.ndarray
    sigma: float


def default_sigma(X) -> float:
    """Median pairwise distance of standardized rows divided by sqrt(2)."""
    d = pdist(_standardize(np.asarray(X, dtype=float)))
    return float(np.median(d)) / np.sqrt(2.0) if d.size else 1.0


def build_affinity(X_M, sigma: "float | None" = None) -> AffinityGraph:
    X_M = np.asarray(X_M, dtype=float)
    if X_M.shape[0] < 2:
        raise EngineError("affinity graph needs at least 2 rows")
    if sigma is None:
        sigma = default_sigma(X_M)
    if not sigma > 0:
        raise EngineError(f"sigma must be positive, got {sigma}")
    Xs = _standardize(X_M)
    D = cdist(Xs, Xs, "sqeuclidean")
    W = np.exp(-D / (2.0 * sigma * sigma))
    np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise EngineError("zero-degree row in affinity graph; increase sigma")
    s = 1.0 / np.sqrt(deg)
    Z = s[:, None] * W * s[None, :]
    return AffinityGraph(W, deg, Z, float(sigma))


def one_hot(Y_M, classes) -> np.ndarray:
    Y_M = np.asarray(Y_M)
    F = (Y_M[:, None] == np.asarray(classes)[None, :]).astype(float)
    return F


@dataclass
class SpreadResult:
    labels: np.ndarray  # all rows, labeled rows unchanged
    F: np.ndarray
    classes: np.ndarray
    converged: bool
    n_iter: int


def label_spread(G: AffinityGraph, Y_M, alpha: float = 0.2, tol: float = 1e-6,
                 max_iter: int = 1000) -> SpreadResult:
    """Iterate ``F <- alpha Z F + (1 - alpha) F0`` until the max-abs change drops below ``tol``."""
    if not 0 < alpha < 1:
        raise EngineError(f"alpha must lie in (0, 1), got {alpha}")
    Y_M = np.asarray(Y_M).astype(int)
    if Y_M.shape[0] != G.Z.shape[0]:
        raise EngineError("label vector does not match graph size")
    labeled = Y_M >= 0
    if not labeled.any():
        raise EngineError("label spreading needs at least one labeled row")
    classes = np.unique(Y_M[labeled])
    F0 = one_hot(Y_M, classes)
    F = F0.copy()
    converged = False
    it = 0
    while it < max_iter:
        F_next = alpha * (G.Z @ F) + (1.0 - alpha) * F0
        it += 1
        change = np.max(np.abs(F_next - F))
        F = F_next
        if change < tol:
            converged = True
            break
    labels = np.where(labeled, Y_M, classes[np.argmax(F, axis=1)])
    return SpreadResult(labels, F, classes, converged, it)


def spread_labels(X_L, Y_L, X_U, alpha: float = 0.2, sigma_scale: float = 1.0,
                  tol: float = 1e-6, max_iter: int = 1000) -> "tuple[np.ndarray, bool]":
    """Label spreading on ``[X_L; X_U]``; returns the unlabeled rows' labels and convergence."""
    Y_L = _check_labeled(Y_L)
    X_U = np.asarray(X_U, dtype=float)
    if X_U.shape[0] == 0:
        return np.zeros(0, dtype=int), True
    X_M = np.vstack([np.asarray(X_L, dtype=float), X_U])
    G = build_affinity(X_M, sigma_scale * default_sigma(X_M))
    Y_M = np.concatenate([Y_L, np.full(X_U.shape[0], -1)])
    res = label_spread(G, Y_M, alpha, tol, max_iter)
    return res.labels[len(Y_L):], res.converged


# -- uniform entry points -----------------------------------------------------------

ENGINE_NAMES = ("self_training", "tsvm", "label_spreading")


def pseudo_label(engine: str, X_L, Y_L, X_U, hyper: dict, settings: dict,
                 base: "ClassifierSpec | None" = None) -> "tuple[np.ndarray, bool]":
    """Labels for ``X_U`` from ``engine``.

    ``hyper`` holds grid-searched values, ``settings`` the fixed engine options.
    """
    if engine == "self_training":
        if base is None:
            raise EngineError("self-training needs a base classifier")
        return self_train(base, X_L, Y_L, X_U, int(settings["delta"])), True
    if engine == "tsvm":
        opts = {k: settings[k] for k in ("kernel", "anneal_steps", "max_swaps", "balance") if k in settings}
        return tsvm_multiclass(X_L, Y_L, X_U, **hyper, **opts)
    if engine == "label_spreading":
        return spread_labels(X_L, Y_L, X_U, **hyper, tol=settings.get("tol", 1e-6),
                             max_iter=settings.get("max_iter", 1000))
    raise EngineError(f"unknown engine {engine!r}")


def engine_grid_search(engine: str, grid: dict, X_L, Y_L, settings: dict, folds: int = 3) -> dict:
    """Transductive CV on the labeled set: held-out folds act as the unlabeled block."""
    def evaluate(params, Xtr, Ytr, Xte):
        try:
            return pseudo_label(engine, Xtr, Ytr, Xte, params, settings)[0]
        except EngineError as exc:
            raise FitError(str(exc)) from exc

    return cv_grid_search(evaluate, grid, X_L, Y_L, folds)
