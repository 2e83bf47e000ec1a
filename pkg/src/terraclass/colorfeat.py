"""HSV color features: per-point color and neighborhood color averages.

RGB in [0, 1] maps to hexcone HSV with h in [0, 1), s, v in [0, 1].  On
max-channel ties red takes precedence, then green (the classic hexcone
convention); a gray pixel (s = 0) gets h = 0 so the triple is unique.

The neighborhood color CN(r) of a query point is the plain arithmetic mean
of the per-neighbor HSV triples over the closed ball of radius r around the
query, searched in the full-resolution cloud.  A query that is itself a
cloud member is a member of every such ball, so the ball is never empty;
for a detached query position an empty ball falls back to the query's own
color.  Radii are meters; the defaults (0.4, 0.6, 0.9) bracket typical
object part sizes at ground-scan density.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .cloudio import Point, PointCloud
from .spatial import _STACK, SpatialIndex, radius_search

HSV_NAMES = ("h", "s", "v")


def color_feature_names(radii=(0.4, 0.6, 0.9)) -> list[str]:
    """Column names: point h, s, v then per-radius means h@r0.4, s@r0.4, ..."""
    names = list(HSV_NAMES)
    for r in radii:
        names.extend(f"{c}@r{r:g}" for c in HSV_NAMES)
    return names


# ---------------------------------------------------------------------------
# RGB -> HSV
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _rgb_to_hsv_one(r, g, b):
    maxc = max(r, g, b)
    minc = min(r, g, b)
    v = maxc
    if maxc == minc:
        return 0.0, 0.0, v
    span = maxc - minc
    s = span / maxc
    rc = (maxc - r) / span
    gc = (maxc - g) / span
    bc = (maxc - b) / span
    if r == maxc:
        h = bc - gc
    elif g == maxc:
        h = 2.0 + rc - bc
    else:
        h = 4.0 + gc - rc
    return (h / 6.0) % 1.0, s, v


@njit(cache=True, parallel=True)
def _rgb_to_hsv_kernel(rgb, out):
    for i in prange(rgb.shape[0]):
        h, s, v = _rgb_to_hsv_one(
            np.float64(rgb[i, 0]), np.float64(rgb[i, 1]), np.float64(rgb[i, 2])
        )
        out[i, 0] = h
        out[i, 1] = s
        out[i, 2] = v


def rgb_to_hsv(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Hexcone HSV of one RGB triple in [0, 1]; h in [0, 1)."""
    for name, c in (("r", r), ("g", g), ("b", b)):
        c = float(c)
        if not np.isfinite(c) or c < 0.0 or c > 1.0:
            raise ValueError(f"channel {name}={c!r} outside [0, 1]")
    h, s, v = _rgb_to_hsv_one(float(r), float(g), float(b))
    return float(h), float(s), float(v)


def rgb_to_hsv_batch(rgb) -> np.ndarray:
    """(n, 3) RGB in [0, 1] -> (n, 3) float64 HSV."""
    rgb = np.ascontiguousarray(rgb)
    if rgb.ndim != 2 or rgb.shape[1] != 3:
        raise ValueError(f"expected (n, 3) RGB, got {rgb.shape}")
    out = np.empty((rgb.shape[0], 3), dtype=np.float64)
    _rgb_to_hsv_kernel(rgb, out)
    return out


# ---------------------------------------------------------------------------
# Point and neighborhood color features
# ---------------------------------------------------------------------------


def _point_rgb(point) -> tuple[float, float, float]:
    if isinstance(point, Point):
        if point.r is None:
            raise ValueError("point has no color")
        return point.r, point.g, point.b
    arr = np.asarray(point, dtype=np.float64).reshape(-1)
    if arr.shape[0] == 3:
        return float(arr[0]), float(arr[1]), float(arr[2])
    raise ValueError("expected a Point or an RGB triple")


def point_color_features(point) -> np.ndarray:
    """(3,) HSV of the point's own color."""
    return np.array(rgb_to_hsv(*_point_rgb(point)))


def neighborhood_color_features(point: Point, index: SpatialIndex, radius: float) -> np.ndarray:
    """(3,) mean HSV over the closed ball around the point in index's cloud.

    An empty ball (possible only for a query that is not a cloud member)
    falls back to the point's own HSV.
    """
    cloud = index.cloud
    if not cloud.has_color:
        raise ValueError("neighborhood color features need a colored cloud")
    ids = radius_search(index, point, radius)
    if ids.size == 0:
        return point_color_features(point)
    hsv = rgb_to_hsv_batch(cloud.rgb[ids])
    return hsv.mean(axis=0)


def color_feature_block(point: Point, index: SpatialIndex, radii=(0.4, 0.6, 0.9)) -> np.ndarray:
    """(3 + 3R,) block: point HSV then the CN(r) mean for each radius."""
    _check_radii(radii)
    parts = [point_color_features(point)]
    parts.extend(neighborhood_color_features(point, index, r) for r in radii)
    return np.concatenate(parts)


def _check_radii(radii) -> tuple[float, ...]:
    radii = tuple(float(r) for r in radii)
    if not radii:
        raise ValueError("need at least one radius")
    if any(not np.isfinite(r) or r <= 0 for r in radii):
        raise ValueError(f"radii must be positive and finite, got {radii}")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be strictly increasing, got {radii}")
    return radii


# ---------------------------------------------------------------------------
# Fused batch kernel: one traversal at the largest radius serves all radii
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _color_means_batch(pts, ids, naxis, nsplit, nleft, nright, hsv, qxyz, qhsv, r2s, out):
    """Fill out[:, 3:] with per-radius mean HSV; out[:, :3] with qhsv.

    Hits are binned by the smallest radius that admits them; per-radius
    means then come from prefix sums over the bins (balls are nested).
    """
    nq = qxyz.shape[0]
    nr = r2s.shape[0]
    r2max = r2s[nr - 1]
    for qi in prange(nq):
        nstack = np.empty(_STACK, dtype=np.int64)
        acc = np.zeros((nr, 3))
        cnt = np.zeros(nr, dtype=np.int64)
        qx = qxyz[qi, 0]
        qy = qxyz[qi, 1]
        qz = qxyz[qi, 2]
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
                if d * d <= r2max:
                    nstack[top] = far
                    top += 1
                ax = naxis[node]
            for i in range(nleft[node], nright[node]):
                dx = qx - pts[i, 0]
                dy = qy - pts[i, 1]
                dz = qz - pts[i, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= r2max:
                    b = 0
                    while d2 > r2s[b]:
                        b += 1
                    pid = ids[i]
                    acc[b, 0] += hsv[pid, 0]
                    acc[b, 1] += hsv[pid, 1]
                    acc[b, 2] += hsv[pid, 2]
                    cnt[b] += 1
        out[qi, 0] = qhsv[qi, 0]
        out[qi, 1] = qhsv[qi, 1]
        out[qi, 2] = qhsv[qi, 2]
        sh = 0.0
        ss = 0.0
        sv = 0.0
        n = 0
        for b in range(nr):
            sh += acc[b, 0]
            ss += acc[b, 1]
            sv += acc[b, 2]
            n += cnt[b]
            col = 3 + 3 * b
            if n > 0:
                out[qi, col + 0] = sh / n
                out[qi, col + 1] = ss / n
                out[qi, col + 2] = sv / n
            else:
                out[qi, col + 0] = qhsv[qi, 0]
                out[qi, col + 1] = qhsv[qi, 1]
                out[qi, col + 2] = qhsv[qi, 2]


def color_features_batch(index: SpatialIndex, hsv, qxyz, qhsv, radii=(0.4, 0.6, 0.9)) -> np.ndarray:
    """(B, 3 + 3R) color block for many queries against one indexed cloud.

    hsv is the precomputed (n, 3) HSV of the indexed cloud (rgb_to_hsv_batch),
    qxyz/qhsv the query positions and their own HSV.  Equals the per-point
    reference path to float accumulation order.
    """
    radii = _check_radii(radii)
    qxyz = np.ascontiguousarray(qxyz, dtype=np.float64)
    qhsv = np.ascontiguousarray(qhsv, dtype=np.float64)
    hsv = np.ascontiguousarray(hsv, dtype=np.float64)
    if qxyz.shape != qhsv.shape or qxyz.ndim != 2 or qxyz.shape[1] != 3:
        raise ValueError("qxyz and qhsv must both be (B, 3)")
    r2s = np.array([r * r for r in radii], dtype=np.float64)
    out = np.empty((qxyz.shape[0], 3 + 3 * len(radii)), dtype=np.float64)
    _color_means_batch(
        index.pts, index.ids, index.naxis, index.nsplit, index.nleft, index.nright,
        hsv, qxyz, qhsv, r2s, out,
    )
    return out


def cloud_color_features(cloud: PointCloud, index: SpatialIndex, rows, radii=(0.4, 0.6, 0.9)) -> np.ndarray:
    """Color block for cloud members given by row ids (the pipeline path)."""
    if not cloud.has_color:
        raise ValueError("color features need a colored cloud")
    rows = np.asarray(rows, dtype=np.int64)
    hsv = rgb_to_hsv_batch(cloud.rgb)
    return color_features_batch(index, hsv, cloud.xyz[rows], hsv[rows], radii)
