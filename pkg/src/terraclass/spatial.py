"""Immutable kd-tree over a point cloud: exact k-NN and radius queries.

Layout: array-based balanced 3D kd-tree. Internal nodes store (split axis,
split value, child ids); leaves store [start, end) ranges into a
leaf-ordered copy of the coordinates, so leaf scans are contiguous memory
reads. Splits are on the widest-spread axis at the median; leaf capacity
is 16.  Queries are exact:

* knn returns min(k, n) hits ascending by (distance, point id) — ties are
  broken toward the smaller id;
* radius_search returns every point with Euclidean distance <= r (closed
  ball).

The index never mutates after build; queries are lock-free and safe from
any number of threads, and batched queries return results identical to
serial evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .cloudio import Point, PointCloud

LEAF_CAPACITY = 16
_STACK = 96  # DFS stack bound; balanced median splits keep depth ~log2(n/16)


@njit(cache=True)
def _build(xyz, ids, naxis, nsplit, nleft, nright, stack):
    """Iterative median-split build. Leaves are marked axis=-1 and hold
    their [start, end) range in (nleft, nright)."""
    n = xyz.shape[0]
    n_nodes = 1
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    top = 1
    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        node = stack[top, 2]
        cnt = end - start
        if cnt <= LEAF_CAPACITY:
            naxis[node] = -1
            nleft[node] = start
            nright[node] = end
            continue
        # widest-spread axis
        best_ax = 0
        best_spread = -1.0
        for ax in range(3):
            lo = xyz[ids[start], ax]
            hi = lo
            for i in range(start + 1, end):
                v = xyz[ids[i], ax]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            spread = hi - lo
            if spread > best_spread:
                best_spread = spread
                best_ax = ax
        ax = best_ax
        # median-of-3 quickselect to the exact median position
        m = start + cnt // 2
        lo_i = start
        hi_i = end - 1
        while lo_i < hi_i:
            mid = (lo_i + hi_i) // 2
            if xyz[ids[lo_i], ax] > xyz[ids[mid], ax]:
                ids[lo_i], ids[mid] = ids[mid], ids[lo_i]
            if xyz[ids[lo_i], ax] > xyz[ids[hi_i], ax]:
                ids[lo_i], ids[hi_i] = ids[hi_i], ids[lo_i]
            if xyz[ids[mid], ax] > xyz[ids[hi_i], ax]:
                ids[mid], ids[hi_i] = ids[hi_i], ids[mid]
            pivot = xyz[ids[mid], ax]
            i = lo_i
            j = hi_i
            while i <= j:
                while xyz[ids[i], ax] < pivot:
                    i += 1
                while xyz[ids[j], ax] > pivot:
                    j -= 1
                if i <= j:
                    ids[i], ids[j] = ids[j], ids[i]
                    i += 1
                    j -= 1
            if m <= j:
                hi_i = j
            elif m >= i:
                lo_i = i
            else:
                break
        split = xyz[ids[m], ax]
        naxis[node] = ax
        nsplit[node] = split
        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        nleft[node] = left
        nright[node] = right
        stack[top, 0] = start
        stack[top, 1] = m
        stack[top, 2] = left
        top += 1
        stack[top, 0] = m
        stack[top, 1] = end
        stack[top, 2] = right
        top += 1
    return n_nodes


@njit(cache=True, inline="always")
def _knn_one(pts, ids, naxis, nsplit, nleft, nright, qx, qy, qz, k, nd2, nid, nstack):
    """Fill nd2/nid (size k) ascending by (squared distance, id); returns the
    number of hits (= min(k, n))."""
    cnt = 0
    worst = np.inf
    top = 0
    nstack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = nstack[top]
        ax = naxis[node]
        while ax >= 0:  # descend to the near leaf, queueing far children
            s = nsplit[node]
            if ax == 0:
                d = qx - s
            elif ax == 1:
                d = qy - s
            else:
                d = qz - s
            if d < 0.0:
                far = nright[node]
                node = nleft[node]
            else:
                far = nleft[node]
                node = nright[node]
            if d * d <= worst:
                nstack[top] = far
                top += 1
            ax = naxis[node]
        for i in range(nleft[node], nright[node]):
            dx = qx - pts[i, 0]
            dy = qy - pts[i, 1]
            dz = qz - pts[i, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if cnt < k:
                pid = ids[i]
                j = cnt
                while j > 0 and (nd2[j - 1] > d2 or (nd2[j - 1] == d2 and nid[j - 1] > pid)):
                    nd2[j] = nd2[j - 1]
                    nid[j] = nid[j - 1]
                    j -= 1
                nd2[j] = d2
                nid[j] = pid
                cnt += 1
                if cnt == k:
                    worst = nd2[k - 1]
            elif d2 <= worst:
                pid = ids[i]
                if d2 < worst or pid < nid[k - 1]:
                    j = k - 1
                    while j > 0 and (nd2[j - 1] > d2 or (nd2[j - 1] == d2 and nid[j - 1] > pid)):
                        nd2[j] = nd2[j - 1]
                        nid[j] = nid[j - 1]
                        j -= 1
                    nd2[j] = d2
                    nid[j] = pid
                    worst = nd2[k - 1]
    return cnt


@njit(cache=True, parallel=True)
def _knn_batch(pts, ids, naxis, nsplit, nleft, nright, queries, k):
    nq = queries.shape[0]
    out_id = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k), dtype=np.float64)
    for qi in prange(nq):
        nstack = np.empty(_STACK, dtype=np.int64)
        cnt = _knn_one(
            pts, ids, naxis, nsplit, nleft, nright,
            queries[qi, 0], queries[qi, 1], queries[qi, 2],
            k, out_d2[qi], out_id[qi], nstack,
        )
        for j in range(cnt, k):
            out_id[qi, j] = -1
            out_d2[qi, j] = np.inf
    return out_id, out_d2


@njit(cache=True)
def _radius_collect(pts, ids, naxis, nsplit, nleft, nright, qx, qy, qz, r, out, nstack):
    """Append ids within the closed ball into out; returns the hit count.
    Pass out of length 0 to only count."""
    r2 = r * r
    cnt = 0
    cap = out.shape[0]
    top = 0
    nstack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = nstack[top]
        ax = naxis[node]
        while ax >= 0:
            s = nsplit[node]
            if ax == 0:
                d = qx - s
            elif ax == 1:
                d = qy - s
            else:
                d = qz - s
            if d < 0.0:
                far = nright[node]
                node = nleft[node]
            else:
                far = nleft[node]
                node = nright[node]
            if d * d <= r2:
                nstack[top] = far
                top += 1
            ax = naxis[node]
        for i in range(nleft[node], nright[node]):
            dx = qx - pts[i, 0]
            dy = qy - pts[i, 1]
            dz = qz - pts[i, 2]
            if dx * dx + dy * dy + dz * dz <= r2:
                if cnt < cap:
                    out[cnt] = ids[i]
                cnt += 1
    return cnt


@dataclass(frozen=True)
class SpatialIndex:
    """Array kd-tree over a cloud; see module docstring for the layout."""

    cloud: PointCloud
    pts: np.ndarray      # (n, 3) float64, leaf-ordered copy of cloud.xyz
    ids: np.ndarray      # (n,) int64, leaf order -> original point id
    naxis: np.ndarray    # (n_nodes,) int8, split axis or -1 for leaf
    nsplit: np.ndarray   # (n_nodes,) float64 split value
    nleft: np.ndarray    # (n_nodes,) int64 left child / leaf range start
    nright: np.ndarray   # (n_nodes,) int64 right child / leaf range end
    leaf_capacity: int = LEAF_CAPACITY

    @property
    def n(self) -> int:
        return self.pts.shape[0]

    def leaf_ranges(self):
        """Yield (start, end) of every leaf — structural-audit helper."""
        for node in range(len(self.naxis)):
            if self.naxis[node] < 0:
                yield int(self.nleft[node]), int(self.nright[node])

    def knn(self, query, k: int):
        return knn(self, query, k)

    def radius_search(self, query, r: float):
        return radius_search(self, query, r)


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Build the kd-tree; deterministic for a fixed cloud."""
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(np.atleast_2d(np.asarray(cloud, dtype=np.float64)))
    n = cloud.n
    ids = np.arange(n, dtype=np.int64)
    max_nodes = max(4, n // 4 + 64)
    naxis = np.full(max_nodes, -1, dtype=np.int8)
    nsplit = np.zeros(max_nodes, dtype=np.float64)
    nleft = np.zeros(max_nodes, dtype=np.int64)
    nright = np.zeros(max_nodes, dtype=np.int64)
    stack = np.zeros((_STACK, 3), dtype=np.int64)
    n_nodes = _build(cloud.xyz, ids, naxis, nsplit, nleft, nright, stack)
    pts = np.ascontiguousarray(cloud.xyz[ids])
    for a in (pts, ids):
        a.setflags(write=False)
    return SpatialIndex(
        cloud, pts, ids,
        naxis[:n_nodes], nsplit[:n_nodes], nleft[:n_nodes], nright[:n_nodes],
    )


def _as_query(query) -> np.ndarray:
    if isinstance(query, Point):
        return query.xyz
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape != (3,):
        raise ValueError(f"query must be a 3D position, got shape {np.asarray(query).shape}")
    return q


def knn(index: SpatialIndex, query, k: int):
    """Exact k nearest neighbors.

    Returns a list of (point id, distance) of length min(k, n), ascending
    by distance with ties broken by the smaller id. The query need not be
    a cloud point.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _as_query(query)
    ids, d2 = _knn_batch(
        index.pts, index.ids, index.naxis, index.nsplit, index.nleft, index.nright,
        q[None, :], int(k),
    )
    m = min(k, index.n)
    return [(int(ids[0, j]), float(np.sqrt(d2[0, j]))) for j in range(m)]


def knn_batch(index: SpatialIndex, queries, k: int):
    """Vectorized knn over (m, 3) query positions.

    Returns (ids, dists) of shape (m, min-padded k): rows are padded with
    id -1 / dist inf when the cloud has fewer than k points.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise ValueError(f"queries must be (m, 3), got {queries.shape}")
    ids, d2 = _knn_batch(
        index.pts, index.ids, index.naxis, index.nsplit, index.nleft, index.nright,
        queries, int(k),
    )
    return ids, np.sqrt(d2)


def radius_search(index: SpatialIndex, query, r: float) -> np.ndarray:
    """All point ids within the closed ball of radius r (ascending id order)."""
    if not r > 0:
        raise ValueError("radius must be > 0")
    q = _as_query(query)
    nstack = np.empty(_STACK, dtype=np.int64)
    probe = np.empty(0, dtype=np.int64)
    cnt = _radius_collect(
        index.pts, index.ids, index.naxis, index.nsplit, index.nleft, index.nright,
        q[0], q[1], q[2], float(r), probe, nstack,
    )
    out = np.empty(cnt, dtype=np.int64)
    _radius_collect(
        index.pts, index.ids, index.naxis, index.nsplit, index.nleft, index.nright,
        q[0], q[1], q[2], float(r), out, nstack,
    )
    out.sort()
    return out
