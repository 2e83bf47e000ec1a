"""Decision-tree kernels shared by the random-forest and boosted ensembles.

Split search is EXACT: candidate thresholds are the midpoints between
consecutive distinct sorted values of each candidate feature — no histogram
binning, no threshold subsampling.  Thresholds are computed in float64 as
(v_lo + v_hi) / 2 and routing is always "go left iff feature < threshold".
Ties between candidate splits are broken by higher score, then lower
feature id, then lower threshold, which makes the chosen split independent
of feature-evaluation order.

Randomness comes from splitmix64 counters.  Every consumer seeds its own
stream from (seed, stream tag, unit) so any tree can be regenerated in
isolation and results never depend on thread scheduling:

    tag 1  forest bootstrap rows   (unit = tree index)
    tag 2  forest split features   (unit = tree index)
    tag 3  boosting bag rows       (unit = iteration)
    tag 4  boosting split features (unit = iteration * n_classes + class)

All kernels are single-threaded per tree and release the GIL, so drivers
can build trees concurrently with plain thread pools without affecting the
result.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

TAG_RF_BOOTSTRAP = 1
TAG_RF_SPLIT = 2
TAG_GBT_BAG = 3
TAG_GBT_SPLIT = 4

_U_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_U_M1 = np.uint64(0xBF58476D1CE4E5B9)
_U_M2 = np.uint64(0x94D049BB133111EB)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)


# ---------------------------------------------------------------------------
# splitmix64
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _sm64(state):
    """One splitmix64 step: returns (next state, 64-bit output)."""
    state = state + _U_GAMMA
    z = state
    z = (z ^ (z >> _U30)) * _U_M1
    z = (z ^ (z >> _U27)) * _U_M2
    z = z ^ (z >> _U31)
    return state, z


@njit(cache=True)
def _stream_state(seed, tag, unit):
    """Starting state of the (seed, tag, unit) stream."""
    s = np.uint64(seed)
    s, z = _sm64(s)
    return z ^ (np.uint64(tag) * _U_M1) ^ (np.uint64(unit) * _U_M2)


@njit(cache=True)
def _bootstrap_rows(state, n, rows):
    """len(rows) draws from range(n) with replacement, in draw order."""
    un = np.uint64(n)
    for i in range(rows.shape[0]):
        state, z = _sm64(state)
        rows[i] = np.int64(z % un)
    return state


@njit(cache=True, inline="always")
def _draw_k_of_n(state, n, k, perm, chosen):
    """Partial Fisher-Yates: k distinct draws from range(n) into chosen[:k]."""
    for i in range(n):
        perm[i] = i
    for i in range(k):
        state, z = _sm64(state)
        j = i + np.int64(z % np.uint64(n - i))
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
        chosen[i] = perm[i]
    return state


# ---------------------------------------------------------------------------
# Classification tree (random forest member)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _rf_build(X, y, rows, n_class, mtry, max_depth, min_leaf, state,
              feat, thr, left, right, value,
              work, scratch, perm, chosen, fvals, flabs,
              stk_node, stk_lo, stk_hi, stk_depth):
    """Grow one classification tree; returns the node count.

    Nodes are numbered in depth-first left-first order.  A node splits only
    if the best exact split strictly beats the parent purity score
    sum_c(count_c^2)/n; leaves store class frequencies in ``value``.
    """
    m = rows.shape[0]
    for i in range(m):
        work[i] = rows[i]
    counts = np.zeros(n_class, dtype=np.int64)
    lcounts = np.zeros(n_class, dtype=np.int64)

    n_nodes = 1
    stk_node[0] = 0
    stk_lo[0] = 0
    stk_hi[0] = m
    stk_depth[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stk_node[top]
        lo = stk_lo[top]
        hi = stk_hi[top]
        depth = stk_depth[top]
        mn = hi - lo

        for c in range(n_class):
            counts[c] = 0
        for i in range(lo, hi):
            counts[y[work[i]]] += 1
        pure = False
        parent_num = np.int64(0)
        for c in range(n_class):
            if counts[c] == mn:
                pure = True
            parent_num += counts[c] * counts[c]
        parent_score = parent_num / mn

        if pure or depth >= max_depth or mn < 2 * min_leaf:
            feat[node] = -1
            for c in range(n_class):
                value[node, c] = counts[c] / mn
            continue

        state = _draw_k_of_n(state, X.shape[1], mtry, perm, chosen)
        for i in range(mn):
            flabs[i] = y[work[lo + i]]

        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        for fi in range(mtry):
            f = chosen[fi]
            for i in range(mn):
                fvals[i] = X[work[lo + i], f]
            idx = np.argsort(fvals[:mn])
            for c in range(n_class):
                lcounts[c] = 0
            nl = 0
            for i in range(mn - 1):
                si = idx[i]
                lcounts[flabs[si]] += 1
                nl += 1
                v1 = fvals[si]
                v2 = fvals[idx[i + 1]]
                if v2 > v1:
                    nr = mn - nl
                    if nl >= min_leaf and nr >= min_leaf:
                        lnum = np.int64(0)
                        rnum = np.int64(0)
                        for c in range(n_class):
                            lc = lcounts[c]
                            rc = counts[c] - lc
                            lnum += lc * lc
                            rnum += rc * rc
                        score = lnum / nl + rnum / nr
                        if score > best_score or (
                            score == best_score
                            and (f < best_f or (f == best_f and (v1 + v2) / 2.0 < best_thr))
                        ):
                            best_score = score
                            best_f = f
                            best_thr = (v1 + v2) / 2.0

        split = best_f >= 0 and best_score > parent_score
        cl = 0
        if split:
            # stable partition by value < threshold
            for i in range(lo, hi):
                r = work[i]
                if X[r, best_f] < best_thr:
                    scratch[lo + cl] = r
                    cl += 1
            cr = cl
            for i in range(lo, hi):
                r = work[i]
                if not (X[r, best_f] < best_thr):
                    scratch[lo + cr] = r
                    cr += 1
            if cl == 0 or cr == cl:
                # threshold rounded onto a data value; unsplittable
                split = False
            else:
                for i in range(lo, hi):
                    work[i] = scratch[i]

        if not split:
            feat[node] = -1
            for c in range(n_class):
                value[node, c] = counts[c] / mn
            continue

        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_thr
        left[node] = l_id
        right[node] = r_id
        stk_node[top] = r_id
        stk_lo[top] = lo + cl
        stk_hi[top] = hi
        stk_depth[top] = depth + 1
        top += 1
        stk_node[top] = l_id
        stk_lo[top] = lo
        stk_hi[top] = lo + cl
        stk_depth[top] = depth + 1
        top += 1
    return n_nodes


# ---------------------------------------------------------------------------
# Regression tree (gradient-boosting member), leaf-wise growth
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _gbt_eval_split(X, gr, hr, work, lo, hi, gp, hp, fsub, min_leaf, lam, state,
                    perm, chosen, fvals, fg, fh):
    """Best exact split of work[lo:hi] by Newton gain.

    gain = GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam); only gains > 0
    qualify.  Returns (state, gain, feature, threshold); feature -1 when no
    qualifying split exists.
    """
    mn = hi - lo
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    if mn < 2 * min_leaf:
        return state, best_gain, best_f, best_thr
    state = _draw_k_of_n(state, X.shape[1], fsub, perm, chosen)
    parent = gp * gp / (hp + lam)
    for i in range(mn):
        r = work[lo + i]
        fg[i] = gr[r]
        fh[i] = hr[r]
    for fi in range(fsub):
        f = chosen[fi]
        for i in range(mn):
            fvals[i] = X[work[lo + i], f]
        idx = np.argsort(fvals[:mn])
        gl = 0.0
        hl = 0.0
        for i in range(mn - 1):
            si = idx[i]
            gl += fg[si]
            hl += fh[si]
            v1 = fvals[si]
            v2 = fvals[idx[i + 1]]
            if v2 > v1:
                nl = i + 1
                nr = mn - nl
                if nl >= min_leaf and nr >= min_leaf:
                    gright = gp - gl
                    hright = hp - hl
                    gain = gl * gl / (hl + lam) + gright * gright / (hright + lam) - parent
                    if gain > best_gain or (
                        gain == best_gain
                        and best_f >= 0
                        and (f < best_f or (f == best_f and (v1 + v2) / 2.0 < best_thr))
                    ):
                        best_gain = gain
                        best_f = f
                        best_thr = (v1 + v2) / 2.0
    return state, best_gain, best_f, best_thr


@njit(cache=True, nogil=True)
def _gbt_build(X, gr, hr, rows, fsub, max_leaves, min_leaf, lam, state,
               feat, thr, left, right, value,
               work, scratch, perm, chosen, fvals, fg, fh):
    """Grow one regression tree leaf-wise; returns the node count.

    The leaf whose cached best split has the highest gain is split next
    (ties: the earlier-created leaf).  Nodes are numbered in creation
    order; children of a split are evaluated left then right.  Leaves get
    the Newton value -G/(H+lam).
    """
    m = rows.shape[0]
    for i in range(m):
        work[i] = rows[i]
    max_nodes = 2 * max_leaves - 1
    n_start = np.empty(max_nodes, dtype=np.int64)
    n_end = np.empty(max_nodes, dtype=np.int64)
    n_g = np.empty(max_nodes, dtype=np.float64)
    n_h = np.empty(max_nodes, dtype=np.float64)
    c_gain = np.zeros(max_nodes, dtype=np.float64)
    c_feat = np.full(max_nodes, -1, dtype=np.int64)
    c_thr = np.zeros(max_nodes, dtype=np.float64)

    g0 = 0.0
    h0 = 0.0
    for i in range(m):
        g0 += gr[work[i]]
        h0 += hr[work[i]]
    n_start[0] = 0
    n_end[0] = m
    n_g[0] = g0
    n_h[0] = h0
    feat[0] = -1
    n_nodes = 1
    n_leaves = 1
    state, gain, f, t = _gbt_eval_split(
        X, gr, hr, work, 0, m, g0, h0, fsub, min_leaf, lam, state,
        perm, chosen, fvals, fg, fh,
    )
    c_gain[0] = gain
    c_feat[0] = f
    c_thr[0] = t

    while n_leaves < max_leaves:
        best = -1
        bg = 0.0
        for nd in range(n_nodes):
            if feat[nd] == -1 and c_gain[nd] > bg:
                bg = c_gain[nd]
                best = nd
        if best < 0:
            break
        lo = n_start[best]
        hi = n_end[best]
        bf = c_feat[best]
        bt = c_thr[best]
        cl = 0
        for i in range(lo, hi):
            r = work[i]
            if X[r, bf] < bt:
                scratch[lo + cl] = r
                cl += 1
        cr = cl
        for i in range(lo, hi):
            r = work[i]
            if not (X[r, bf] < bt):
                scratch[lo + cr] = r
                cr += 1
        if cl == 0 or cr == cl:
            c_gain[best] = 0.0  # threshold rounded onto a data value
            continue
        for i in range(lo, hi):
            work[i] = scratch[i]

        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        feat[best] = bf
        thr[best] = bt
        left[best] = l_id
        right[best] = r_id
        n_start[l_id] = lo
        n_end[l_id] = lo + cl
        n_start[r_id] = lo + cl
        n_end[r_id] = hi
        feat[l_id] = -1
        feat[r_id] = -1
        for child in (l_id, r_id):
            gc = 0.0
            hc = 0.0
            for i in range(n_start[child], n_end[child]):
                gc += gr[work[i]]
                hc += hr[work[i]]
            n_g[child] = gc
            n_h[child] = hc
            if n_leaves < max_leaves:
                state, gain, f, t = _gbt_eval_split(
                    X, gr, hr, work, n_start[child], n_end[child], gc, hc,
                    fsub, min_leaf, lam, state, perm, chosen, fvals, fg, fh,
                )
                c_gain[child] = gain
                c_feat[child] = f
                c_thr[child] = t

    for nd in range(n_nodes):
        if feat[nd] == -1:
            value[nd] = -n_g[nd] / (n_h[nd] + lam)
    return n_nodes


# ---------------------------------------------------------------------------
# Prediction kernels (flat concatenated trees, global child ids)
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _rf_predict_proba(X, feat, thr, left, right, value, roots, out):
    """out[i] = mean over trees of the reached leaf's class frequencies."""
    n = X.shape[0]
    nt = roots.shape[0]
    nc = out.shape[1]
    for i in prange(n):
        for c in range(nc):
            out[i, c] = 0.0
        for t in range(nt):
            nd = roots[t]
            while feat[nd] >= 0:
                if X[i, feat[nd]] < thr[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            for c in range(nc):
                out[i, c] += value[nd, c]
        for c in range(nc):
            out[i, c] /= nt
    return out


@njit(cache=True, parallel=True)
def _gbt_predict_proba(X, feat, thr, left, right, value, roots, tclass, lr, out):
    """Accumulate lr * leaf value per class tree, then softmax per row."""
    n = X.shape[0]
    nt = roots.shape[0]
    nc = out.shape[1]
    for i in prange(n):
        scores = np.zeros(nc)
        for t in range(nt):
            nd = roots[t]
            while feat[nd] >= 0:
                if X[i, feat[nd]] < thr[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            scores[tclass[t]] += lr * value[nd]
        smax = scores[0]
        for c in range(1, nc):
            if scores[c] > smax:
                smax = scores[c]
        tot = 0.0
        for c in range(nc):
            e = np.exp(scores[c] - smax)
            out[i, c] = e
            tot += e
        for c in range(nc):
            out[i, c] /= tot
    return out


@njit(cache=True, parallel=True)
def _tree_apply(X, feat, thr, left, right, value, root, out):
    """out[i] = leaf value of one regression tree at row i."""
    for i in prange(X.shape[0]):
        nd = root
        while feat[nd] >= 0:
            if X[i, feat[nd]] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]
    return out
