"""Greedy regression trees.

One grower serves both ensembles. In ``forest`` mode a node is scored by the
reduction in squared error and its leaf is the target mean. In ``boost`` mode
rows carry gradients ``g`` and hessians ``h`` and a split gains

    1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

with leaf weight ``-soft(G, alpha) / (H + lambda)``.

Candidate thresholds are midpoints between consecutive distinct values; rows
with ``x <= threshold`` go left. Ties in gain go to the lower feature index,
then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

FOREST, BOOST = 0, 1
TIE_RTOL = 1e-10


@njit(cache=True, nogil=True)
def _score(G, H, lam):
    return G * G / (H + lam)


@njit(cache=True, nogil=True)
def _leaf(G, H, lam, alpha, mode):
    if mode == FOREST:
        return G / H
    if G > alpha:
        return -(G - alpha) / (H + lam)
    if G < -alpha:
        return -(G + alpha) / (H + lam)
    return 0.0


@njit(cache=True, nogil=True)
def _grow(X, g, h, idx, allowed, feat_keys, mtry, max_depth, min_node_size,
          lam, alpha, gamma, min_child_weight, mode, presorted):
    n_total = idx.shape[0]
    cap = 2 * n_total + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.full(cap, np.nan)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = idx.copy()
    buf = np.empty_like(idx)
    # with presorted columns (distinct rows only) a node scans the global order
    # and skips rows it does not own; cheap for shallow trees
    use_presorted = presorted.shape[1] == X.shape[0]
    owner = np.full(X.shape[0], -1, dtype=np.int64)
    if use_presorted:
        for k in range(n_total):
            owner[idx[k]] = 0

    # stack entries: node id, start, end, depth
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, n_total, 0
    top = 1
    n_nodes = 1
    n_allowed = allowed.shape[0]

    while top > 0:
        top -= 1
        node, start, end, depth = st_node[top], st_start[top], st_end[top], st_depth[top]
        m = end - start
        G = 0.0
        H = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(start, end):
            r = idx[k]
            G += g[r]
            H += h[r]
            if g[r] < ymin:
                ymin = g[r]
            if g[r] > ymax:
                ymax = g[r]
        value[node] = _leaf(G, H, lam, alpha, mode)

        if max_depth >= 0 and depth >= max_depth:
            continue
        if mode == FOREST and (m <= min_node_size or ymax - ymin <= 0.0):
            continue
        if m < 2:
            continue

        # candidate features for this node, ascending
        if mtry < n_allowed:
            order = np.argsort(feat_keys[node, allowed], kind="mergesort")[:mtry]
            cand = np.sort(allowed[order])
        else:
            cand = allowed

        parent = _score(G, H, lam)
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        rows = idx[start:end]
        seq = np.empty(m, dtype=np.int64)
        for f in cand:
            if use_presorted:
                j = 0
                for r in presorted[f]:
                    if owner[r] == node:
                        seq[j] = r
                        j += 1
            else:
                seq = rows[np.argsort(X[rows, f], kind="mergesort")]
            GL = 0.0
            HL = 0.0
            for i in range(m - 1):
                r = seq[i]
                GL += g[r]
                HL += h[r]
                x0 = X[r, f]
                x1 = X[seq[i + 1], f]
                if not x0 < x1:
                    continue
                GR = G - GL
                HR = H - HL
                if mode == BOOST and (HL < min_child_weight or HR < min_child_weight):
                    continue
                gain = _score(GL, HL, lam) + _score(GR, HR, lam) - parent
                if mode == BOOST:
                    gain = 0.5 * gain - gamma
                tol = TIE_RTOL * max(1.0, abs(best_gain)) if best_gain > -np.inf else 0.0
                if gain > best_gain + tol:
                    thr = 0.5 * (x0 + x1)
                    if not thr < x1:
                        thr = x0
                    best_gain = gain
                    best_f = f
                    best_thr = thr

        if best_f < 0:
            continue
        if mode == BOOST and not best_gain > 0.0:
            continue

        # stable partition of idx[start:end]
        nl = 0
        for k in range(start, end):
            if X[idx[k], best_f] <= best_thr:
                buf[nl] = idx[k]
                nl += 1
        nr = nl
        for k in range(start, end):
            if X[idx[k], best_f] > best_thr:
                buf[nr] = idx[k]
                nr += 1
        for k in range(m):
            idx[start + k] = buf[k]

        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        if use_presorted:
            for k in range(start, end):
                owner[idx[k]] = lnode if k < start + nl else rnode
        feature[node] = best_f
        threshold[node] = best_thr
        # right child pushed first so the left subtree is numbered first;
        # ids are re-labelled to pre-order afterwards
        st_node[top], st_start[top], st_end[top], st_depth[top] = rnode, start + nl, end, depth + 1
        top += 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = lnode, start, start + nl, depth + 1
        top += 1
        left[node] = lnode
        right[node] = rnode

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def _preorder(left, right):
    n = left.shape[0]
    order = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    top = 1
    stack[0] = 0
    k = 0
    while top > 0:
        top -= 1
        node = stack[top]
        order[k] = node
        k += 1
        if left[node] >= 0:
            stack[top] = right[node]
            stack[top + 1] = left[node]
            top += 2
    return order


@njit(cache=True, nogil=True)
def _predict(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat node arrays in pre-order; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict(self.feature, self.threshold, self.left, self.right, self.value,
                        np.ascontiguousarray(X, dtype=np.float64))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):  # pre-order: parents precede children
            if self.feature[node] >= 0:
                d[self.left[node]] = d[self.right[node]] = d[node] + 1
        return int(d.max())

    def structure(self) -> list[tuple]:
        return [(int(f), float(t) if f >= 0 else None, float(v))
                for f, t, v in zip(self.feature, self.threshold, self.value)]


def presort(X: np.ndarray) -> np.ndarray:
    """Row ids of each column in ascending (stable) order, shape (p, n)."""
    return np.ascontiguousarray(np.argsort(np.asarray(X, dtype=np.float64), axis=0, kind="stable").T)


def _relabel(feature, threshold, left, right, value) -> RegressionTree:
    order = _preorder(left, right)
    new_id = np.empty_like(order)
    new_id[order] = np.arange(len(order))
    l, r = left[order], right[order]
    l = np.where(l >= 0, new_id[np.maximum(l, 0)], -1)
    r = np.where(r >= 0, new_id[np.maximum(r, 0)], -1)
    return RegressionTree(feature[order], threshold[order], l, r, value[order])


def fit_tree(X: np.ndarray, targets: np.ndarray | None = None, *, grad: np.ndarray | None = None,
             hess: np.ndarray | None = None, rows: np.ndarray | None = None,
             features: np.ndarray | None = None, mtry: int | None = None,
             feature_keys: np.ndarray | None = None, max_depth: int | None = None,
             min_node_size: int = 5, reg_lambda: float = 0.0, reg_alpha: float = 0.0,
             gamma_split: float = 0.0, min_child_weight: float = 1.0,
             presorted: np.ndarray | None = None) -> RegressionTree:
    """Grow one tree.

    Pass ``targets`` for a least-squares (forest) tree or ``grad``/``hess`` for
    a second-order boosting tree. ``rows`` selects (possibly repeated) training
    rows, ``features`` restricts the usable columns and ``mtry`` with
    ``feature_keys`` (one row of uniforms per node) draws a column subset at
    every split. ``presorted`` (per column, all row ids in ascending order of
    that column, as from :func:`presort`) speeds up shallow trees on distinct
    rows and does not change the result.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-d feature matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    n, p = X.shape
    if targets is not None:
        mode = FOREST
        g = np.ascontiguousarray(targets, dtype=np.float64)
        h = np.ones(n)
        reg_lambda = 0.0
        reg_alpha = 0.0
    else:
        if grad is None:
            raise ValueError("pass targets or grad/hess")
        mode = BOOST
        g = np.ascontiguousarray(grad, dtype=np.float64)
        h = np.ones(n) if hess is None else np.ascontiguousarray(hess, dtype=np.float64)
    rows = np.arange(n, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    allowed = np.arange(p, dtype=np.int64) if features is None else np.sort(np.asarray(features, dtype=np.int64))
    mtry = len(allowed) if mtry is None else int(mtry)
    if not 1 <= mtry <= len(allowed):
        raise ValueError(f"mtry must lie in 1..{len(allowed)}")
    if mtry < len(allowed):
        if feature_keys is None or feature_keys.shape[0] < 2 * len(rows) + 1 or feature_keys.shape[1] != p:
            raise ValueError("feature subsampling needs a (2*rows+1, p) key matrix")
        keys = np.ascontiguousarray(feature_keys, dtype=np.float64)
    else:
        keys = np.zeros((1, p))
    depth = -1 if max_depth is None else int(max_depth)
    if presorted is None:
        presorted = np.zeros((p, 0), dtype=np.int64)
    elif len(np.unique(rows)) != len(rows):
        raise ValueError("presorted scanning needs distinct rows")
    parts = _grow(X, g, h, rows, allowed, keys, mtry, depth, int(min_node_size),
                  float(reg_lambda), float(reg_alpha), float(gamma_split), float(min_child_weight), mode,
                  np.ascontiguousarray(presorted, dtype=np.int64))
    return _relabel(*parts)
