"""Per-point geometric features from local covariance eigenstructure.

For a neighborhood S_x (the k nearest neighbors of the query in one pyramid
level), the covariance tensor is

    C = (1/|S_x|) * sum_i (p_i - m)(p_i - m)^T

where m is the MEDOID of S_x — the member minimizing the summed Euclidean
distance to all members (ties: smallest index in S_x; when S_x comes from a
knn query the list is (distance, id)-sorted, so this matches the knn tie
rule).  Eigenvalues are clamped at zero and unit-sum normalized,
l1 >= l2 >= l3, with eigenvectors e1, e2, e3.

The 15 features per scale, in column order:

    omnivariance      (l1*l2*l3)^(1/3)
    eigenentropy      -sum li*ln(li)          (0*ln 0 := 0)
    anisotropy        (l1 - l3) / l1
    planarity         (l2 - l3) / l1
    linearity         (l1 - l2) / l1
    surface_variation l3
    scatter           l3 / l1
    verticality       1 - |<(0,0,1), e3>|
    moment_1_e1       |sum <p - m, e1>|       (|.| cancels eigenvector sign)
    moment_1_e2       |sum <p - m, e2>|
    moment_2_e1       sum <p - m, e1>^2
    moment_2_e2       sum <p - m, e2>^2
    vertical_range    z_max(S_x) - z_min(S_x)
    height_below      z_query - z_min(S_x)
    height_above      z_max(S_x) - z_query

Degenerate neighborhoods (covariance trace <= 1e-15, e.g. coincident
points) yield zeros for all covariance/moment features; the three height
features are always computed.  No NaN/Inf is ever emitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .cloudio import Point
from .spatial import knn_batch

GEOM_FEATURE_NAMES = (
    "omnivariance",
    "eigenentropy",
    "anisotropy",
    "planarity",
    "linearity",
    "surface_variation",
    "scatter",
    "verticality",
    "moment_1_e1",
    "moment_1_e2",
    "moment_2_e1",
    "moment_2_e2",
    "vertical_range",
    "height_below",
    "height_above",
)

N_GEOM_FEATURES = len(GEOM_FEATURE_NAMES)

_DEGENERATE_TRACE = 1e-15


def multiscale_feature_names(n_levels: int) -> list[str]:
    """Level-major column names: all 15 features at scale 0, then scale 1, ..."""
    return [f"{name}@s{i}" for i in range(n_levels) for name in GEOM_FEATURE_NAMES]


# ---------------------------------------------------------------------------
# 3x3 symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _eig3_sym(a00, a01, a02, a11, a12, a22):
    """Eigen-decompose a symmetric 3x3 via cyclic Jacobi rotations.

    Returns (l1, l2, l3, e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z) with
    eigenvalues descending (ties keep the lower diagonal index first) and
    unit eigenvectors ei matching li.
    """
    v00 = 1.0; v01 = 0.0; v02 = 0.0
    v10 = 0.0; v11 = 1.0; v12 = 0.0
    v20 = 0.0; v21 = 0.0; v22 = 1.0
    for _ in range(48):
        off = a01 * a01 + a02 * a02 + a12 * a12
        diag = a00 * a00 + a11 * a11 + a22 * a22
        if off <= 1e-30 * diag or off == 0.0:
            break
        if a01 != 0.0:
            tau = (a11 - a00) / (2.0 * a01)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            a00 -= t * a01
            a11 += t * a01
            a01 = 0.0
            t02 = c * a02 - s * a12
            a12 = s * a02 + c * a12
            a02 = t02
            for_row0 = c * v00 - s * v01; v01 = s * v00 + c * v01; v00 = for_row0
            for_row1 = c * v10 - s * v11; v11 = s * v10 + c * v11; v10 = for_row1
            for_row2 = c * v20 - s * v21; v21 = s * v20 + c * v21; v20 = for_row2
        if a02 != 0.0:
            tau = (a22 - a00) / (2.0 * a02)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            a00 -= t * a02
            a22 += t * a02
            a02 = 0.0
            t01 = c * a01 - s * a12
            a12 = s * a01 + c * a12
            a01 = t01
            for_row0 = c * v00 - s * v02; v02 = s * v00 + c * v02; v00 = for_row0
            for_row1 = c * v10 - s * v12; v12 = s * v10 + c * v12; v10 = for_row1
            for_row2 = c * v20 - s * v22; v22 = s * v20 + c * v22; v20 = for_row2
        if a12 != 0.0:
            tau = (a22 - a11) / (2.0 * a12)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            a11 -= t * a12
            a22 += t * a12
            a12 = 0.0
            t01 = c * a01 - s * a02
            a02 = s * a01 + c * a02
            a01 = t01
            for_row0 = c * v01 - s * v02; v02 = s * v01 + c * v02; v01 = for_row0
            for_row1 = c * v11 - s * v12; v12 = s * v11 + c * v12; v11 = for_row1
            for_row2 = c * v21 - s * v22; v22 = s * v21 + c * v22; v21 = for_row2

    # order the three (eigenvalue, column) pairs descending; ties keep the
    # smaller original index first
    i0 = 0
    lmax = a00
    if a11 > lmax:
        i0 = 1
        lmax = a11
    if a22 > lmax:
        i0 = 2
        lmax = a22
    if i0 == 0:
        ja, jb = 1, 2
        ea, eb = a11, a22
    elif i0 == 1:
        ja, jb = 0, 2
        ea, eb = a00, a22
    else:
        ja, jb = 0, 1
        ea, eb = a00, a11
    if eb > ea:
        i1, i2 = jb, ja
        l1, l2 = eb, ea
    else:
        i1, i2 = ja, jb
        l1, l2 = ea, eb

    if i0 == 0:
        u0x, u0y, u0z = v00, v10, v20
    elif i0 == 1:
        u0x, u0y, u0z = v01, v11, v21
    else:
        u0x, u0y, u0z = v02, v12, v22
    if i1 == 0:
        u1x, u1y, u1z = v00, v10, v20
    elif i1 == 1:
        u1x, u1y, u1z = v01, v11, v21
    else:
        u1x, u1y, u1z = v02, v12, v22
    if i2 == 0:
        u2x, u2y, u2z = v00, v10, v20
    elif i2 == 1:
        u2x, u2y, u2z = v01, v11, v21
    else:
        u2x, u2y, u2z = v02, v12, v22
    return lmax, l1, l2, u0x, u0y, u0z, u1x, u1y, u1z, u2x, u2y, u2z


@dataclass(frozen=True)
class EigenDecomp3:
    """Sorted, unit-sum-normalized eigenstructure of a 3x3 covariance."""

    eigenvalues: np.ndarray       # (3,) descending, clamped >= 0, sum 1 (or all 0)
    eigenvalues_raw: np.ndarray   # (3,) descending, as decomposed (unnormalized)
    eigenvectors: np.ndarray      # (3, 3); column j is the eigenvector of eigenvalues[j]
    degenerate: bool


def eig3(C) -> EigenDecomp3:
    """Eigen-decompose a symmetric 3x3 covariance matrix.

    Raises ValueError if the input is asymmetric beyond 1e-12. A trace at or
    below 1e-15 sets the degenerate flag and returns zero eigenvalues with
    canonical-axis eigenvectors.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("matrix entries must be finite")
    if np.max(np.abs(C - C.T)) > 1e-12:
        raise ValueError("matrix is not symmetric within 1e-12")
    trace = C[0, 0] + C[1, 1] + C[2, 2]
    if trace <= _DEGENERATE_TRACE:
        return EigenDecomp3(np.zeros(3), np.zeros(3), np.eye(3), True)
    out = _eig3_sym(C[0, 0], C[0, 1], C[0, 2], C[1, 1], C[1, 2], C[2, 2])
    raw = np.array(out[:3])
    vecs = np.array(out[3:]).reshape(3, 3).T  # column j = eigenvector j
    clamped = np.maximum(raw, 0.0)
    return EigenDecomp3(clamped / clamped.sum(), raw, vecs, False)


# ---------------------------------------------------------------------------
# Covariance tensor and per-neighborhood features (reference path)
# ---------------------------------------------------------------------------


def _as_points_array(neighborhood) -> np.ndarray:
    if isinstance(neighborhood, np.ndarray):
        pts = np.asarray(neighborhood, dtype=np.float64)
    else:
        rows = [p.xyz if isinstance(p, Point) else np.asarray(p, dtype=np.float64) for p in neighborhood]
        pts = np.array(rows, dtype=np.float64) if rows else np.empty((0, 3))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"neighborhood must be (m, 3), got {pts.shape}")
    return pts


def covariance_tensor(neighborhood):
    """Covariance of a neighborhood about its medoid.

    Returns (C, medoid) where C is exactly symmetric (built from its six
    unique entries) and medoid is the (3,) position of the member with the
    smallest summed Euclidean distance to all members (ties: smallest index).
    """
    pts = _as_points_array(neighborhood)
    m = pts.shape[0]
    if m == 0:
        raise ValueError("neighborhood must contain at least one point")
    diff = pts[:, None, :] - pts[None, :, :]
    sums = np.sqrt(np.sum(diff * diff, axis=2)).sum(axis=1)
    medoid = pts[int(np.argmin(sums))]
    d = pts - medoid
    cxx = float(np.dot(d[:, 0], d[:, 0])) / m
    cyy = float(np.dot(d[:, 1], d[:, 1])) / m
    czz = float(np.dot(d[:, 2], d[:, 2])) / m
    cxy = float(np.dot(d[:, 0], d[:, 1])) / m
    cxz = float(np.dot(d[:, 0], d[:, 2])) / m
    cyz = float(np.dot(d[:, 1], d[:, 2])) / m
    C = np.array([[cxx, cxy, cxz], [cxy, cyy, cyz], [cxz, cyz, czz]])
    return C, medoid


@dataclass(frozen=True)
class GeomFeatures:
    """The 15 per-scale geometric features (see module docstring for formulas)."""

    omnivariance: float
    eigenentropy: float
    anisotropy: float
    planarity: float
    linearity: float
    surface_variation: float
    scatter: float
    verticality: float
    moment_1_e1: float
    moment_1_e2: float
    moment_2_e1: float
    moment_2_e2: float
    vertical_range: float
    height_below: float
    height_above: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GEOM_FEATURE_NAMES])

    @classmethod
    def from_array(cls, values) -> "GeomFeatures":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_GEOM_FEATURES,):
            raise ValueError(f"expected {N_GEOM_FEATURES} values, got {values.shape}")
        return cls(*(float(v) for v in values))


def features_from_neighborhood(neighborhood, query) -> GeomFeatures:
    """Compute the 15 features for an explicit neighborhood S_x and query point.

    ``query`` supplies z for the height features (it need not be a member of
    the neighborhood; at coarse pyramid levels it usually is not).
    """
    pts = _as_points_array(neighborhood)
    qz = float(query.z) if isinstance(query, Point) else float(np.asarray(query, dtype=np.float64).reshape(3)[2])
    zs = pts[:, 2]
    z_min = float(zs.min())
    z_max = float(zs.max())
    heights = (z_max - z_min, qz - z_min, z_max - qz)

    C, medoid = covariance_tensor(pts)
    dec = eig3(C)
    if dec.degenerate:
        return GeomFeatures(*(0.0,) * 12, *heights)

    l1, l2, l3 = (float(v) for v in dec.eigenvalues)
    ent = 0.0
    for lv in (l1, l2, l3):
        if lv > 0.0:
            ent -= lv * np.log(lv)
    d = pts - medoid
    p1 = d @ dec.eigenvectors[:, 0]
    p2 = d @ dec.eigenvectors[:, 1]
    return GeomFeatures(
        omnivariance=float(np.cbrt(l1 * l2 * l3)),
        eigenentropy=float(ent),
        anisotropy=(l1 - l3) / l1,
        planarity=(l2 - l3) / l1,
        linearity=(l1 - l2) / l1,
        surface_variation=l3,
        scatter=l3 / l1,
        verticality=1.0 - abs(float(dec.eigenvectors[2, 2])),
        moment_1_e1=abs(float(p1.sum())),
        moment_1_e2=abs(float(p2.sum())),
        moment_2_e1=float((p1 * p1).sum()),
        moment_2_e2=float((p2 * p2).sum()),
        vertical_range=heights[0],
        height_below=heights[1],
        height_above=heights[2],
    )


def _as_pos(query) -> np.ndarray:
    if isinstance(query, Point):
        return query.xyz
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape != (3,):
        raise ValueError("query must be a Point or a 3D position")
    return q


def _level_parts(level):
    """Accept a PyramidLevel or a (cloud, index) pair."""
    if hasattr(level, "cloud") and hasattr(level, "index"):
        return level.cloud, level.index
    cloud, index = level
    return cloud, index


def features_single_scale(query, level, k: int = 10) -> GeomFeatures:
    """Features of the query point against one pyramid level: S_x is the k
    nearest level points to the query position."""
    cloud, index = _level_parts(level)
    q = _as_pos(query)
    ids, _ = knn_batch(index, q[None, :], k)
    ids = ids[0]
    ids = ids[ids >= 0]
    return features_from_neighborhood(cloud.xyz[ids], q)


def features_multiscale(query, pyramid, k: int = 10) -> np.ndarray:
    """Level-major concatenation of the 15 features over all pyramid levels."""
    q = _as_pos(query)
    blocks = [features_single_scale(q, level, k).as_array() for level in pyramid.levels]
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Fused batch kernel (used by the pipeline; equals the reference path)
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _geom_batch(qxyz, nid, lxyz, out):
    """Per-query features from precomputed neighbor ids.

    qxyz: (B, 3) query positions; nid: (B, k) level point ids ascending by
    (distance, id), -1-padded; lxyz: (n, 3) level coordinates; out: (B, 15).
    """
    nq = qxyz.shape[0]
    kmax = nid.shape[1]
    for qi in prange(nq):
        m = 0
        for j in range(kmax):
            if nid[qi, j] >= 0:
                m += 1
            else:
                break
        # medoid: smallest summed distance, ties keep the earliest list index
        best_sum = np.inf
        med = 0
        for a in range(m):
            ia = nid[qi, a]
            ax = lxyz[ia, 0]
            ay = lxyz[ia, 1]
            az = lxyz[ia, 2]
            s = 0.0
            for b in range(m):
                ib = nid[qi, b]
                dx = ax - lxyz[ib, 0]
                dy = ay - lxyz[ib, 1]
                dz = az - lxyz[ib, 2]
                s += np.sqrt(dx * dx + dy * dy + dz * dz)
            if s < best_sum:
                best_sum = s
                med = a
        im = nid[qi, med]
        mx = lxyz[im, 0]
        my = lxyz[im, 1]
        mz = lxyz[im, 2]

        cxx = 0.0; cxy = 0.0; cxz = 0.0; cyy = 0.0; cyz = 0.0; czz = 0.0
        z_min = np.inf
        z_max = -np.inf
        for a in range(m):
            ia = nid[qi, a]
            dx = lxyz[ia, 0] - mx
            dy = lxyz[ia, 1] - my
            dz = lxyz[ia, 2] - mz
            cxx += dx * dx
            cxy += dx * dy
            cxz += dx * dz
            cyy += dy * dy
            cyz += dy * dz
            czz += dz * dz
            z = lxyz[ia, 2]
            if z < z_min:
                z_min = z
            if z > z_max:
                z_max = z
        inv = 1.0 / m
        cxx *= inv; cxy *= inv; cxz *= inv; cyy *= inv; cyz *= inv; czz *= inv

        qz = qxyz[qi, 2]
        out[qi, 12] = z_max - z_min
        out[qi, 13] = qz - z_min
        out[qi, 14] = z_max - qz

        trace = cxx + cyy + czz
        if trace <= _DEGENERATE_TRACE:
            for f in range(12):
                out[qi, f] = 0.0
            continue

        l1, l2, l3, e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z = _eig3_sym(
            cxx, cxy, cxz, cyy, cyz, czz
        )
        if l1 < 0.0:
            l1 = 0.0
        if l2 < 0.0:
            l2 = 0.0
        if l3 < 0.0:
            l3 = 0.0
        lsum = l1 + l2 + l3
        l1 /= lsum
        l2 /= lsum
        l3 /= lsum

        ent = 0.0
        if l1 > 0.0:
            ent -= l1 * np.log(l1)
        if l2 > 0.0:
            ent -= l2 * np.log(l2)
        if l3 > 0.0:
            ent -= l3 * np.log(l3)

        m1e1 = 0.0; m1e2 = 0.0; m2e1 = 0.0; m2e2 = 0.0
        for a in range(m):
            ia = nid[qi, a]
            dx = lxyz[ia, 0] - mx
            dy = lxyz[ia, 1] - my
            dz = lxyz[ia, 2] - mz
            p1 = dx * e1x + dy * e1y + dz * e1z
            p2 = dx * e2x + dy * e2y + dz * e2z
            m1e1 += p1
            m1e2 += p2
            m2e1 += p1 * p1
            m2e2 += p2 * p2

        out[qi, 0] = (l1 * l2 * l3) ** (1.0 / 3.0)
        out[qi, 1] = ent
        out[qi, 2] = (l1 - l3) / l1
        out[qi, 3] = (l2 - l3) / l1
        out[qi, 4] = (l1 - l2) / l1
        out[qi, 5] = l3
        out[qi, 6] = l3 / l1
        out[qi, 7] = 1.0 - abs(e3z)
        out[qi, 8] = abs(m1e1)
        out[qi, 9] = abs(m1e2)
        out[qi, 10] = m2e1
        out[qi, 11] = m2e2


def geom_features_batch(qxyz, level, k: int = 10) -> np.ndarray:
    """(B, 15) float64 features of many query positions against one level."""
    cloud, index = _level_parts(level)
    qxyz = np.ascontiguousarray(qxyz, dtype=np.float64)
    nid, _ = knn_batch(index, qxyz, k)
    out = np.empty((qxyz.shape[0], N_GEOM_FEATURES), dtype=np.float64)
    _geom_batch(qxyz, nid, cloud.xyz, out)
    return out
