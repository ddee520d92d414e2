"""Numba kernels for depth-limited binary trees grown level by level.

All nodes of one depth are split in a single pass per feature over the
presorted sample order, so a level costs O(n d) regardless of node count.
Candidates are visited feature by feature with thresholds ascending and only
strictly better gains replace the incumbent, which makes ties resolve to the
lowest feature index, then the lowest threshold.
"""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _midpoint(a, b):
    t = a + (b - a) * 0.5
    if t >= b:
        t = a
    return t


@njit(cache=True)
def _gini_sum(counts, n):
    # n * gini impurity
    if n <= 0:
        return 0.0
    s = 0.0
    for c in range(counts.shape[0]):
        s += counts[c] * counts[c]
    return n - s / n


@njit(cache=True)
def grow_classification(X, order, xs, y, n_classes, max_depth, min_leaf):
    """CART with Gini impurity. Returns (feature, threshold, left, right, value)."""
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, LEAF, np.int64)
    right = np.full(max_nodes, LEAF, np.int64)
    counts = np.zeros((max_nodes, n_classes))
    node_of = np.zeros(n, np.int64)
    for i in range(n):
        counts[0, y[i]] += 1.0
    n_nodes = 1
    level_start, level_end = 0, 1

    for depth in range(max_depth):
        n_level = level_end - level_start
        if n_level == 0:
            break
        best_gain = np.zeros(n_level)
        best_feat = np.full(n_level, -1, np.int64)
        best_thr = np.zeros(n_level)
        parent_imp = np.zeros(n_level)
        node_n = np.zeros(n_level)
        for v in range(n_level):
            tot = 0.0
            for c in range(n_classes):
                tot += counts[level_start + v, c]
            node_n[v] = tot
            parent_imp[v] = _gini_sum(counts[level_start + v], tot)
        acc = np.zeros((n_level, n_classes))
        acc_n = np.zeros(n_level)
        last = np.zeros(n_level)
        right_c = np.zeros(n_classes)
        for f in range(d):
            acc[:, :] = 0.0
            acc_n[:] = 0.0
            for t in range(n):
                i = order[f, t]
                v = node_of[i] - level_start
                if v < 0 or v >= n_level:
                    continue
                x = xs[f, t]
                if acc_n[v] >= min_leaf and x > last[v] and node_n[v] - acc_n[v] >= min_leaf and parent_imp[v] > 0.0:
                    for c in range(n_classes):
                        right_c[c] = counts[level_start + v, c] - acc[v, c]
                    gain = parent_imp[v] - _gini_sum(acc[v], acc_n[v]) - _gini_sum(right_c, node_n[v] - acc_n[v])
                    if gain > best_gain[v] + 1e-12:
                        best_gain[v] = gain
                        best_feat[v] = f
                        best_thr[v] = _midpoint(last[v], x)
                acc[v, y[i]] += 1.0
                acc_n[v] += 1.0
                last[v] = x
        # create children
        new_start = n_nodes
        child_left = np.full(n_level, LEAF, np.int64)
        for v in range(n_level):
            if best_feat[v] >= 0:
                node = level_start + v
                feature[node] = best_feat[v]
                threshold[node] = best_thr[v]
                left[node] = n_nodes
                right[node] = n_nodes + 1
                child_left[v] = n_nodes
                n_nodes += 2
        for i in range(n):
            v = node_of[i] - level_start
            if v < 0 or v >= n_level:
                continue
            if child_left[v] == LEAF:
                node_of[i] = -1
                continue
            node = level_start + v
            if X[i, feature[node]] <= threshold[node]:
                node_of[i] = left[node]
            else:
                node_of[i] = right[node]
            counts[node_of[i], y[i]] += 1.0
        level_start, level_end = new_start, n_nodes

    value = np.zeros((n_nodes, n_classes))
    for v in range(n_nodes):
        tot = 0.0
        for c in range(n_classes):
            tot += counts[v, c]
        if tot > 0:
            for c in range(n_classes):
                value[v, c] = counts[v, c] / tot
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value


@njit(cache=True)
def grow_regression(X, order, xs, r, h, max_depth, min_leaf, newton_scale):
    """Least-squares tree on residuals ``r`` with Newton leaf values
    ``newton_scale * sum(r) / sum(h)`` (multinomial deviance step)."""
    n, d = X.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, LEAF, np.int64)
    right = np.full(max_nodes, LEAF, np.int64)
    s_r = np.zeros(max_nodes)
    s_h = np.zeros(max_nodes)
    s_n = np.zeros(max_nodes)
    node_of = np.zeros(n, np.int64)
    for i in range(n):
        s_r[0] += r[i]
        s_h[0] += h[i]
        s_n[0] += 1.0
    n_nodes = 1
    level_start, level_end = 0, 1

    for depth in range(max_depth):
        n_level = level_end - level_start
        if n_level == 0:
            break
        best_gain = np.zeros(n_level)
        best_feat = np.full(n_level, -1, np.int64)
        best_thr = np.zeros(n_level)
        acc = np.zeros(n_level)
        acc_n = np.zeros(n_level)
        last = np.zeros(n_level)
        for f in range(d):
            acc[:] = 0.0
            acc_n[:] = 0.0
            for t in range(n):
                i = order[f, t]
                v = node_of[i] - level_start
                if v < 0 or v >= n_level:
                    continue
                x = xs[f, t]
                node = level_start + v
                nr = s_n[node] - acc_n[v]
                if acc_n[v] >= min_leaf and x > last[v] and nr >= min_leaf:
                    sr = s_r[node] - acc[v]
                    gain = acc[v] * acc[v] / acc_n[v] + sr * sr / nr - s_r[node] * s_r[node] / s_n[node]
                    if gain > best_gain[v] + 1e-12:
                        best_gain[v] = gain
                        best_feat[v] = f
                        best_thr[v] = _midpoint(last[v], x)
                acc[v] += r[i]
                acc_n[v] += 1.0
                last[v] = x
        new_start = n_nodes
        child_left = np.full(n_level, LEAF, np.int64)
        for v in range(n_level):
            if best_feat[v] >= 0:
                node = level_start + v
                feature[node] = best_feat[v]
                threshold[node] = best_thr[v]
                left[node] = n_nodes
                right[node] = n_nodes + 1
                child_left[v] = n_nodes
                n_nodes += 2
        for i in range(n):
            v = node_of[i] - level_start
            if v < 0 or v >= n_level:
                continue
            if child_left[v] == LEAF:
                node_of[i] = -1
                continue
            node = level_start + v
            if X[i, feature[node]] <= threshold[node]:
                node_of[i] = left[node]
            else:
                node_of[i] = right[node]
            c = node_of[i]
            s_r[c] += r[i]
            s_h[c] += h[i]
            s_n[c] += 1.0
        level_start, level_end = new_start, n_nodes

    value = np.zeros(n_nodes)
    for v in range(n_nodes):
        if s_h[v] > 1e-12:
            value[v] = newton_scale * s_r[v] / s_h[v]
        elif s_n[v] > 0:
            value[v] = 0.0
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of X."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        v = 0
        while feature[v] != LEAF:
            if X[i, feature[v]] <= threshold[v]:
                v = left[v]
            else:
                v = right[v]
        out[i] = v
    return out


@njit(cache=True)
def fit_gradient_boosting(X, order, xs, y, n_classes, n_trees, max_depth, min_leaf, rate):
    """Multinomial gradient boosting. Returns (init scores, stacked tree arrays)."""
    n = X.shape[0]
    K = n_classes
    prior = np.zeros(K)
    for i in range(n):
        prior[y[i]] += 1.0
    init = np.log(np.maximum(prior / n, 1e-12))
    F = np.empty((n, K))
    for i in range(n):
        F[i, :] = init
    max_nodes = 2 ** (max_depth + 1)
    T = n_trees * K
    feats = np.full((T, max_nodes), LEAF, np.int64)
    thrs = np.zeros((T, max_nodes))
    lefts = np.full((T, max_nodes), LEAF, np.int64)
    rights = np.full((T, max_nodes), LEAF, np.int64)
    vals = np.zeros((T, max_nodes))
    P = np.empty((n, K))
    r = np.empty(n)
    h = np.empty(n)
    scale = (K - 1.0) / K
    for m in range(n_trees):
        for i in range(n):
            mx = F[i, 0]
            for k in range(1, K):
                if F[i, k] > mx:
                    mx = F[i, k]
            s = 0.0
            for k in range(K):
                P[i, k] = np.exp(F[i, k] - mx)
                s += P[i, k]
            for k in range(K):
                P[i, k] /= s
        for k in range(K):
            for i in range(n):
                r[i] = (1.0 if y[i] == k else 0.0) - P[i, k]
                a = abs(r[i])
                h[i] = a * (1.0 - a)
            f_, t_, l_, r_, v_ = grow_regression(X, order, xs, r, h, max_depth, min_leaf, scale)
            t = m * K + k
            nn = f_.shape[0]
            feats[t, :nn] = f_
            thrs[t, :nn] = t_
            lefts[t, :nn] = l_
            rights[t, :nn] = r_
            vals[t, :nn] = v_
            leaf = apply_tree(X, f_, t_, l_, r_)
            for i in range(n):
                F[i, k] += rate * v_[leaf[i]]
    return init, feats, thrs, lefts, rights, vals


@njit(cache=True)
def predict_gradient_boosting(X, init, feats, thrs, lefts, rights, vals, n_classes, rate):
    n = X.shape[0]
    K = n_classes
    F = np.empty((n, K))
    for i in range(n):
        F[i, :] = init
    for t in range(feats.shape[0]):
        k = t % K
        leaf = apply_tree(X, feats[t], thrs[t], lefts[t], rights[t])
        for i in range(n):
            F[i, k] += rate * vals[t, leaf[i]]
    return F


@njit(cache=True)
def grow_regression_hist(bins, edges, n_edges, r, h, max_depth, min_leaf, newton_scale):
    """Least-squares tree on binned features.

    ``bins[i, f]`` is the bin of sample i; splitting after bin b sends
    ``x <= edges[f, b]`` left, so the returned thresholds are real values.
    """
    n, d = bins.shape
    nb = edges.shape[1] + 1
    max_nodes = 2 ** (max_depth + 1)
    feature = np.full(max_nodes, LEAF, np.int64)
    threshold = np.zeros(max_nodes)
    split_bin = np.zeros(max_nodes, np.int64)
    left = np.full(max_nodes, LEAF, np.int64)
    right = np.full(max_nodes, LEAF, np.int64)
    s_r = np.zeros(max_nodes)
    s_h = np.zeros(max_nodes)
    s_n = np.zeros(max_nodes)
    node_of = np.zeros(n, np.int64)
    for i in range(n):
        s_r[0] += r[i]
        s_h[0] += h[i]
        s_n[0] += 1.0
    n_nodes = 1
    level_start, level_end = 0, 1

    for depth in range(max_depth):
        n_level = level_end - level_start
        if n_level == 0:
            break
        hr = np.zeros((n_level, d, nb))
        hn = np.zeros((n_level, d, nb))
        for i in range(n):
            v = node_of[i] - level_start
            if v < 0 or v >= n_level:
                continue
            ri = r[i]
            for f in range(d):
                b = bins[i, f]
                hr[v, f, b] += ri
                hn[v, f, b] += 1.0
        new_start = n_nodes
        child_left = np.full(n_level, LEAF, np.int64)
        for v in range(n_level):
            node = level_start + v
            tot_r = s_r[node]
            tot_n = s_n[node]
            base = tot_r * tot_r / tot_n
            best_gain = 0.0
            best_f = -1
            best_b = 0
            for f in range(d):
                acc = 0.0
                acc_n = 0.0
                for b in range(n_edges[f]):
                    acc += hr[v, f, b]
                    acc_n += hn[v, f, b]
                    nr = tot_n - acc_n
                    if acc_n < min_leaf or hn[v, f, b] == 0.0:
                        continue
                    if nr < min_leaf:
                        break
                    sr = tot_r - acc
                    gain = acc * acc / acc_n + sr * sr / nr - base
                    if gain > best_gain + 1e-12:
                        best_gain = gain
                        best_f = f
                        best_b = b
            if best_f >= 0:
                feature[node] = best_f
                threshold[node] = edges[best_f, best_b]
                split_bin[node] = best_b
                left[node] = n_nodes
                right[node] = n_nodes + 1
                child_left[v] = n_nodes
                n_nodes += 2
        for i in range(n):
            v = node_of[i] - level_start
            if v < 0 or v >= n_level:
                continue
            if child_left[v] == LEAF:
                node_of[i] = -1
                continue
            node = level_start + v
            if bins[i, feature[node]] <= split_bin[node]:
                node_of[i] = left[node]
            else:
                node_of[i] = right[node]
            c = node_of[i]
            s_r[c] += r[i]
            s_h[c] += h[i]
            s_n[c] += 1.0
        level_start, level_end = new_start, n_nodes

    value = np.zeros(n_nodes)
    for v in range(n_nodes):
        if s_h[v] > 1e-12:
            value[v] = newton_scale * s_r[v] / s_h[v]
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value


@njit(cache=True)
def fit_gradient_boosting_hist(X, bins, edges, n_edges, y, n_classes, n_trees, max_depth, min_leaf, rate):
    """Multinomial gradient boosting on binned features. Returns (init scores, stacked tree arrays)."""
    n = X.shape[0]
    K = n_classes
    prior = np.zeros(K)
    for i in range(n):
        prior[y[i]] += 1.0
    init = np.log(np.maximum(prior / n, 1e-12))
    F = np.empty((n, K))
    for i in range(n):
        F[i, :] = init
    max_nodes = 2 ** (max_depth + 1)
    T = n_trees * K
    feats = np.full((T, max_nodes), LEAF, np.int64)
    thrs = np.zeros((T, max_nodes))
    lefts = np.full((T, max_nodes), LEAF, np.int64)
    rights = np.full((T, max_nodes), LEAF, np.int64)
    vals = np.zeros((T, max_nodes))
    P = np.empty((n, K))
    r = np.empty(n)
    h = np.empty(n)
    scale = (K - 1.0) / K
    for m in range(n_trees):
        for i in range(n):
            mx = F[i, 0]
            for k in range(1, K):
                if F[i, k] > mx:
                    mx = F[i, k]
            s = 0.0
            for k in range(K):
                P[i, k] = np.exp(F[i, k] - mx)
                s += P[i, k]
            for k in range(K):
                P[i, k] /= s
        for k in range(K):
            for i in range(n):
                r[i] = (1.0 if y[i] == k else 0.0) - P[i, k]
                a = abs(r[i])
                h[i] = a * (1.0 - a)
            f_, t_, l_, r_, v_ = grow_regression_hist(bins, edges, n_edges, r, h, max_depth, min_leaf, scale)
            t = m * K + k
            nn = f_.shape[0]
            feats[t, :nn] = f_
            thrs[t, :nn] = t_
            lefts[t, :nn] = l_
            rights[t, :nn] = r_
            vals[t, :nn] = v_
            leaf = apply_tree(X, f_, t_, l_, r_)
            for i in range(n):
                F[i, k] += rate * v_[leaf[i]]
    return init, feats, thrs, lefts, rights, vals


@njit(cache=True)
def make_bins(X, max_bins):
    """Split candidates per feature and the bin of every sample.

    With at most ``max_bins`` distinct values the candidates are all midpoints
    between neighbours (exact CART); otherwise they sit at quantile cut points.
    """
    n, d = X.shape
    edges = np.zeros((d, max_bins - 1))
    n_edges = np.zeros(d, np.int64)
    bins = np.zeros((n, d), np.uint8)
    for f in range(d):
        s = np.sort(X[:, f])
        u = 1
        for t in range(1, n):
            if s[t] > s[t - 1]:
                u += 1
        ne = 0
        if u <= max_bins:
            for t in range(1, n):
                if s[t] > s[t - 1]:
                    edges[f, ne] = _midpoint(s[t - 1], s[t])
                    ne += 1
        else:
            for j in range(1, max_bins):
                pos = j * n // max_bins
                if pos < 1:
                    continue
                e = _midpoint(s[pos - 1], s[pos]) if s[pos] > s[pos - 1] else s[pos - 1]
                if ne == 0 or e > edges[f, ne - 1]:
                    edges[f, ne] = e
                    ne += 1
        n_edges[f] = ne
        for i in range(n):
            x = X[i, f]
            lo, hi = 0, ne
            while lo < hi:  # first edge >= x
                mid = (lo + hi) // 2
                if edges[f, mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            bins[i, f] = lo
    return bins, edges, n_edges
