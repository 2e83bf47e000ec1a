"""Synthetic labeled scene generation.

A scene recipe is a JSON-able dict::

    {"name": "...", "primitives": [ {...}, {...}, ... ]}

Each primitive has a ``kind`` plus geometry fields, a ``density`` in
points/m^2 of sampled surface, a positional ``noise`` sigma in meters, and
color fields (``{"rgb": [r,g,b], "jitter": s}`` with channels in [0,1]).
Supported kinds and their fields:

* ``ground`` / ``road``: ``center [cx,cy]``, ``size [sx,sy]``, optional
  ``angle`` (radians about z), ``z`` base height, ``slope [gx,gy]``
  (z = z + gx*(x-cx) + gy*(y-cy) before rotation-independent world slope).
* ``building``: ``center``, ``size``, ``angle``, ``z``, ``wall_height``,
  ``roof`` = ``{"type": "flat"}`` or ``{"type": "gabled", "ridge": h}``
  (ridge runs along the first footprint axis), ``color`` (walls),
  ``roof_color``.
* ``tree``: ``center``, ``z``, ``trunk`` = ``{"height": h, "radius": r}``,
  ``crown`` = ``{"rx": , "ry": , "rz": }`` (ellipsoid, surface-sampled),
  ``color`` (crown), ``trunk_color``.
* ``car``: ``center``, ``size [l,w,h]``, ``angle``, ``z`` (box, no bottom).
* ``pole``: ``center``, ``z``, ``height``, ``radius`` (cylinder side).

Every primitive carries a class (defaults by kind; override with
``"class": name``).  The number of points is ``round(total_area * density)``
exactly, split across the primitive's faces by largest remainder.
``synth_scene`` is a pure function of (recipe, seed).
"""

from __future__ import annotations

import json
import logging
import math
import os

import numpy as np

log = logging.getLogger(__name__)

_DEFAULT_CLASS = {
    "ground": "ground",
    "road": "road",
    "building": "building",
    "tree": "high_vegetation",
    "car": "car",
    "pole": "human_made_object",
}


def _alloc(n: int, areas) -> np.ndarray:
    """Split n into per-face counts proportional to areas (largest remainder)."""
    areas = np.asarray(areas, dtype=np.float64)
    exact = areas / areas.sum() * n
    base = np.floor(exact).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(areas)), -(exact - base)))
        base[order[:short]] += 1
    return base


def _rot_xy(u, v, angle, cx, cy):
    c, s = math.cos(angle), math.sin(angle)
    return cx + c * u - s * v, cy + s * u + c * v


def _colors(rng, n, spec) -> np.ndarray:
    base = np.asarray(spec.get("rgb", (0.5, 0.5, 0.5)), dtype=np.float64)
    jit = float(spec.get("jitter", 0.0))
    rgb = np.tile(base, (n, 1))
    if jit > 0:
        rgb = rgb + rng.normal(0.0, jit, (n, 3))
    return np.clip(rgb, 0.0, 1.0)


def _sample_rect3(rng, n, p0, e1, e2):
    """n points on the parallelogram p0 + t*e1 + s*e2, t,s ~ U(0,1)."""
    t = rng.uniform(0.0, 1.0, n)
    s = rng.uniform(0.0, 1.0, n)
    return p0[None, :] + t[:, None] * e1[None, :] + s[:, None] * e2[None, :]


def _sample_tri3(rng, n, a, b, c):
    u = rng.uniform(0.0, 1.0, n)
    v = rng.uniform(0.0, 1.0, n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return a[None, :] + u[:, None] * (b - a)[None, :] + v[:, None] * (c - a)[None, :]


def _ellipsoid_area(rx, ry, rz):
    p = 1.6075
    return 4.0 * math.pi * (((rx * ry) ** p + (rx * rz) ** p + (ry * rz) ** p) / 3.0) ** (1.0 / p)


def _gen_planar(prim, rng):
    cx, cy = prim["center"]
    sx, sy = prim["size"]
    angle = float(prim.get("angle", 0.0))
    z0 = float(prim.get("z", 0.0))
    gx, gy = prim.get("slope", (0.0, 0.0))
    density = float(prim["density"])
    n = int(round(sx * sy * density))
    u = rng.uniform(-sx / 2.0, sx / 2.0, n)
    v = rng.uniform(-sy / 2.0, sy / 2.0, n)
    x, y = _rot_xy(u, v, angle, cx, cy)
    z = z0 + gx * (x - cx) + gy * (y - cy)
    xyz = np.column_stack([x, y, z])
    return [(xyz, _colors(rng, n, prim.get("color", {})))]


def _box_wall_faces(cx, cy, sx, sy, angle, z0, h):
    """The four side walls of an axis-aligned box footprint, as 3D rects."""
    faces = []
    corners = [(-sx / 2, -sy / 2), (sx / 2, -sy / 2), (sx / 2, sy / 2), (-sx / 2, sy / 2)]
    up = np.array([0.0, 0.0, h])
    for i in range(4):
        u0, v0 = corners[i]
        u1, v1 = corners[(i + 1) % 4]
        x0, y0 = _rot_xy(u0, v0, angle, cx, cy)
        x1, y1 = _rot_xy(u1, v1, angle, cx, cy)
        p0 = np.array([x0, y0, z0])
        e1 = np.array([x1 - x0, y1 - y0, 0.0])
        length = math.hypot(u1 - u0, v1 - v0)
        faces.append((length * h, p0, e1, up))
    return faces


def _gen_building(prim, rng):
    cx, cy = prim["center"]
    sx, sy = prim["size"]
    angle = float(prim.get("angle", 0.0))
    z0 = float(prim.get("z", 0.0))
    h = float(prim["wall_height"])
    roof = prim.get("roof", {"type": "flat"})
    density = float(prim["density"])
    wall_color = prim.get("color", {})
    roof_color = prim.get("roof_color", wall_color)

    rect_faces = _box_wall_faces(cx, cy, sx, sy, angle, z0, h)
    tri_faces = []  # (area, a, b, c)
    if roof.get("type", "flat") == "flat":
        x0, y0 = _rot_xy(-sx / 2, -sy / 2, angle, cx, cy)
        xu, yu = _rot_xy(sx / 2, -sy / 2, angle, cx, cy)
        xv, yv = _rot_xy(-sx / 2, sy / 2, angle, cx, cy)
        p0 = np.array([x0, y0, z0 + h])
        rect_faces.append((sx * sy, p0, np.array([xu - x0, yu - y0, 0.0]), np.array([xv - x0, yv - y0, 0.0])))
        n_roof_rects = 1
    elif roof["type"] == "gabled":
        ridge = float(roof["ridge"])
        slant = math.hypot(sy / 2.0, ridge)
        # two inclined roof rectangles, eaves at v = +-sy/2, ridge along u at v = 0
        for side in (-1.0, 1.0):
            ex, ey = _rot_xy(-sx / 2, side * sy / 2, angle, cx, cy)
            ru, rv = _rot_xy(sx / 2, side * sy / 2, angle, cx, cy)
            mx, my = _rot_xy(-sx / 2, 0.0, angle, cx, cy)
            p0 = np.array([ex, ey, z0 + h])
            e1 = np.array([ru - ex, rv - ey, 0.0])
            e2 = np.array([mx - ex, my - ey, ridge])
            rect_faces.append((sx * slant, p0, e1, e2))
        # gable triangles closing the +-u walls above wall height
        for side in (-1.0, 1.0):
            ax, ay = _rot_xy(side * sx / 2, -sy / 2, angle, cx, cy)
            bx, by = _rot_xy(side * sx / 2, sy / 2, angle, cx, cy)
            tx, ty = _rot_xy(side * sx / 2, 0.0, angle, cx, cy)
            a = np.array([ax, ay, z0 + h])
            b = np.array([bx, by, z0 + h])
            t = np.array([tx, ty, z0 + h + ridge])
            tri_faces.append((sy * ridge / 2.0, a, b, t))
        n_roof_rects = 2
    else:
        raise ValueError(f"unknown roof type {roof.get('type')!r}")

    areas = [f[0] for f in rect_faces] + [f[0] for f in tri_faces]
    counts = _alloc(int(round(sum(areas) * density)), areas)
    blocks = []
    n_rect = len(rect_faces)
    for i, (area, p0, e1, e2) in enumerate(rect_faces):
        m = int(counts[i])
        is_roof = i >= n_rect - n_roof_rects
        spec = roof_color if is_roof else wall_color
        blocks.append((_sample_rect3(rng, m, p0, e1, e2), _colors(rng, m, spec)))
    for j, (area, a, b, t) in enumerate(tri_faces):
        m = int(counts[n_rect + j])
        blocks.append((_sample_tri3(rng, m, a, b, t), _colors(rng, m, wall_color)))
    return blocks


def _gen_car(prim, rng):
    car = dict(prim)
    length, width, height = prim.get("size", (4.4, 1.8, 1.5))
    car["size"] = (length, width)
    car["wall_height"] = height
    car["roof"] = {"type": "flat"}
    car["roof_color"] = prim.get("color", {})
    return _gen_building(car, rng)


def _gen_tree(prim, rng):
    cx, cy = prim["center"]
    z0 = float(prim.get("z", 0.0))
    trunk = prim.get("trunk", {"height": 2.0, "radius": 0.12})
    crown = prim["crown"]
    density = float(prim["density"])
    th, tr = float(trunk["height"]), float(trunk["radius"])
    rx, ry, rz = (float(crown[k]) for k in ("rx", "ry", "rz"))
    crown_c = np.array([cx, cy, z0 + th + 0.9 * rz])

    a_trunk = 2.0 * math.pi * tr * th
    a_crown = _ellipsoid_area(rx, ry, rz)
    n_trunk, n_crown = (int(v) for v in _alloc(int(round((a_trunk + a_crown) * density)), [a_trunk, a_crown]))

    theta = rng.uniform(0.0, 2.0 * math.pi, n_trunk)
    hh = rng.uniform(0.0, th, n_trunk)
    trunk_xyz = np.column_stack([cx + tr * np.cos(theta), cy + tr * np.sin(theta), z0 + hh])
    trunk_rgb = _colors(rng, n_trunk, prim.get("trunk_color", {"rgb": (0.36, 0.26, 0.16), "jitter": 0.04}))

    dirs = rng.normal(0.0, 1.0, (n_crown, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    crown_xyz = crown_c[None, :] + dirs * np.array([rx, ry, rz])[None, :]
    crown_rgb = _colors(rng, n_crown, prim.get("color", {}))
    return [(trunk_xyz, trunk_rgb), (crown_xyz, crown_rgb)]


def _gen_pole(prim, rng):
    cx, cy = prim["center"]
    z0 = float(prim.get("z", 0.0))
    h = float(prim["height"])
    r = float(prim.get("radius", 0.06))
    density = float(prim["density"])
    n = int(round(2.0 * math.pi * r * h * density))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    hh = rng.uniform(0.0, h, n)
    xyz = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta), z0 + hh])
    return [(xyz, _colors(rng, n, prim.get("color", {})))]


_GENERATORS = {
    "ground": _gen_planar,
    "road": _gen_planar,
    "building": _gen_building,
    "car": _gen_car,
    "tree": _gen_tree,
    "pole": _gen_pole,
}


def synth_scene(recipe, seed: int = 0):
    """Generate a labeled, colored cloud from a recipe dict or JSON file path.

    Deterministic for a fixed (recipe, seed); each primitive draws from its
    own child RNG stream so edits to one primitive do not reshuffle others.
    """
    from .cloudio import CLASSES, PointCloud

    if isinstance(recipe, (str, os.PathLike)):
        with open(recipe, "r", encoding="utf-8") as fh:
            recipe = json.load(fh)
    prims = recipe.get("primitives")
    if not prims:
        raise ValueError("recipe has no primitives")

    xyz_blocks, rgb_blocks, label_blocks = [], [], []
    for i, prim in enumerate(prims):
        kind = prim.get("kind")
        if kind not in _GENERATORS:
            raise ValueError(f"primitive {i}: unknown kind {kind!r}")
        if float(prim.get("density", 0.0)) <= 0.0:
            raise ValueError(f"primitive {i} ({kind}): zero-density primitive")
        class_id = CLASSES.id_of(prim.get("class", _DEFAULT_CLASS[kind]))
        rng = np.random.default_rng([seed, i])
        sigma = float(prim.get("noise", 0.02))
        for pts, rgb in _GENERATORS[kind](prim, rng):
            if len(pts) == 0:
                continue
            if sigma > 0:
                pts = pts + rng.normal(0.0, sigma, pts.shape)
            xyz_blocks.append(pts)
            rgb_blocks.append(rgb)
            label_blocks.append(np.full(len(pts), class_id, dtype=np.uint8))

    if not xyz_blocks:
        raise ValueError("recipe produced no points")
    cloud = PointCloud(
        np.vstack(xyz_blocks),
        np.vstack(rgb_blocks).astype(np.float32),
        np.concatenate(label_blocks),
    )
    log.info("synth scene %r: %d points %s", recipe.get("name", "?"), cloud.n, cloud.class_counts())
    return cloud


# ---------------------------------------------------------------------------
# Stock recipes: a three-scene suite with class-correlated colors, plus a
# large block for throughput runs.  Roads are geometrically identical to the
# surrounding flat ground (same plane, density, and noise) so they are only
# separable by color; buildings carry red or gray roofs; every scene contains
# all six classes.
# ---------------------------------------------------------------------------

_GROUND_COLOR = {"rgb": (0.70, 0.60, 0.42), "jitter": 0.06}
_ROAD_COLOR = {"rgb": (0.33, 0.34, 0.35), "jitter": 0.025}
_WALL_COLOR = {"rgb": (0.78, 0.73, 0.62), "jitter": 0.04}
_ROOF_RED = {"rgb": (0.72, 0.18, 0.14), "jitter": 0.03}
_ROOF_GRAY = {"rgb": (0.46, 0.47, 0.49), "jitter": 0.03}
_CROWN_COLOR = {"rgb": (0.20, 0.43, 0.16), "jitter": 0.06}
_POLE_COLOR = {"rgb": (0.24, 0.25, 0.27), "jitter": 0.03}
_CAR_COLORS = (
    {"rgb": (0.72, 0.10, 0.10), "jitter": 0.03},
    {"rgb": (0.15, 0.25, 0.62), "jitter": 0.03},
    {"rgb": (0.86, 0.87, 0.88), "jitter": 0.03},
    {"rgb": (0.58, 0.60, 0.63), "jitter": 0.03},
)


def _building(center, size, wall_height, roof, roof_color, density, z=0.0, angle=0.0):
    return {
        "kind": "building", "center": center, "size": size, "angle": angle, "z": z,
        "wall_height": wall_height, "roof": roof, "color": _WALL_COLOR,
        "roof_color": roof_color, "density": density,
    }


def _tree(center, r_xy, r_z, density, z=0.0):
    return {
        "kind": "tree", "center": center, "z": z,
        "trunk": {"height": 2.0, "radius": 0.12},
        "crown": {"rx": r_xy, "ry": r_xy * 0.9, "rz": r_z},
        "color": _CROWN_COLOR, "density": density,
    }


def _car(center, angle, color_i, density, z=0.0):
    return {
        "kind": "car", "center": center, "size": (4.4, 1.8, 1.5), "angle": angle,
        "z": z, "color": _CAR_COLORS[color_i % len(_CAR_COLORS)], "density": density,
    }


def _pole(center, density, z=0.0, height=3.5):
    return {
        "kind": "pole", "center": center, "z": z, "height": height,
        "radius": 0.06, "color": _POLE_COLOR, "density": density,
    }


def scene_suite(density_scale: float = 1.0) -> dict:
    """Three stock scene recipes ('alpha', 'beta', 'gamma') with differing
    composition but shared class-color conventions."""
    d_ground = 42.0 * density_scale
    d_struct = 40.0 * density_scale
    d_tree = 55.0 * density_scale
    d_car = 75.0 * density_scale
    d_pole = 650.0 * density_scale

    gabled = lambda ridge: {"type": "gabled", "ridge": ridge}
    flat = {"type": "flat"}

    alpha = {"name": "alpha", "primitives": [
        {"kind": "ground", "center": (0, 0), "size": (36, 36), "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "road", "center": (0, -6), "size": (36, 4), "color": _ROAD_COLOR, "density": d_ground},
        {"kind": "road", "center": (8, 5), "size": (4, 18), "color": _ROAD_COLOR, "density": d_ground},
        _building((-9, 6), (8, 6), 3.2, gabled(1.4), _ROOF_GRAY, d_struct),
        _building((9, -12), (7, 5), 2.8, flat, _ROOF_GRAY, d_struct),
        _building((-10, -12), (6, 5), 3.0, gabled(1.2), _ROOF_RED, d_struct),
        _building((13, 13), (5, 4), 2.5, flat, _ROOF_RED, d_struct),
        _tree((-13, 13), 2.0, 1.8, d_tree),
        _tree((-4, 14), 1.6, 1.5, d_tree),
        _tree((14, -3), 2.2, 2.0, d_tree),
        _tree((-14, -4), 1.8, 1.7, d_tree),
        _car((-6, -6), 0.0, 0, d_car),
        _car((3, -6), 0.0, 1, d_car),
        _car((8, 1), math.pi / 2, 2, d_car),
        _car((8, 9), math.pi / 2, 3, d_car),
    ] + [_pole((x, -8.5), d_pole) for x in (-14, -7, 0, 7, 14)]}

    beta_slope_z = lambda y: 1.08 + 0.12 * (y - 9.0)
    beta = {"name": "beta", "primitives": [
        {"kind": "ground", "center": (0, -9), "size": (36, 18), "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "ground", "center": (0, 9), "size": (36, 18), "z": 1.08, "slope": (0.0, 0.12),
         "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "road", "center": (0, -4), "size": (36, 4), "color": _ROAD_COLOR, "density": d_ground},
        _building((-11, -11), (12, 9), 4.0, gabled(1.8), _ROOF_RED, d_struct),
        _building((1, -13), (9, 7), 3.4, gabled(1.5), _ROOF_RED, d_struct),
        _building((12, -11), (8, 6), 3.0, flat, _ROOF_GRAY, d_struct),
        _building((-12, 5), (7, 6), 3.0, gabled(1.4), _ROOF_RED, d_struct, z=beta_slope_z(5)),
        _building((12, 6), (6, 5), 2.6, flat, _ROOF_GRAY, d_struct, z=beta_slope_z(6)),
        _building((0, 13), (6, 4), 2.6, gabled(1.1), _ROOF_RED, d_struct, z=beta_slope_z(13)),
        _tree((16, 15), 2.0, 1.8, d_tree, z=beta_slope_z(15)),
        _tree((-16, 14), 1.7, 1.6, d_tree, z=beta_slope_z(14)),
        _car((-4, -4), 0.0, 0, d_car),
        _car((6, -4), 0.0, 2, d_car),
    ] + [_pole((x, -6.5), d_pole) for x in (-15, -9, -3, 3, 9, 15)]}

    gamma_slope_z = lambda y: 0.70 + 0.10 * (y - 11.0)
    gamma = {"name": "gamma", "primitives": [
        {"kind": "ground", "center": (0, -7), "size": (36, 22), "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "ground", "center": (0, 11), "size": (36, 14), "z": 0.70, "slope": (0.0, 0.10),
         "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "road", "center": (0, -1.75), "size": (36, 4.5), "color": _ROAD_COLOR, "density": d_ground},
        _building((-10, -12), (9, 7), 3.2, gabled(1.5), _ROOF_RED, d_struct),
        _building((11, -13), (6, 5), 2.6, flat, _ROOF_GRAY, d_struct),
        _tree((-15, -6), 2.2, 2.0, d_tree),
        _tree((-8, -7), 1.5, 1.4, d_tree),
        _tree((4, -12), 2.0, 1.9, d_tree),
        _tree((15, -6), 1.8, 1.6, d_tree),
        _tree((-13, 8), 2.4, 2.1, d_tree, z=gamma_slope_z(8)),
        _tree((-5, 12), 1.9, 1.7, d_tree, z=gamma_slope_z(12)),
        _tree((3, 9), 2.1, 1.8, d_tree, z=gamma_slope_z(9)),
        _tree((10, 13), 1.6, 1.5, d_tree, z=gamma_slope_z(13)),
        _tree((15, 8), 2.0, 1.8, d_tree, z=gamma_slope_z(8)),
        _tree((-15, 15), 1.7, 1.5, d_tree, z=gamma_slope_z(15)),
        _car((-8, -1.75), 0.0, 1, d_car),
        _car((2, -1.75), 0.0, 2, d_car),
        _car((12, -1.75), 0.0, 3, d_car),
    ] + [_pole((x, -4.6), d_pole) for x in (-12, -4, 4, 12)]}

    return {"alpha": alpha, "beta": beta, "gamma": gamma}


def demo_recipe() -> dict:
    """A small single-scene recipe (~10k points) for demos and quick runs."""
    return {"name": "demo", "primitives": [
        {"kind": "ground", "center": (0, 0), "size": (14, 14), "color": _GROUND_COLOR, "density": 30.0},
        {"kind": "road", "center": (0, -3.5), "size": (14, 3), "color": _ROAD_COLOR, "density": 30.0},
        _building((-3, 3), (6, 4), 2.8, {"type": "gabled", "ridge": 1.2}, _ROOF_RED, 30.0),
        _tree((4.5, 3.5), 1.6, 1.5, 40.0),
        _car((1.5, -3.5), 0.0, 1, 60.0),
        _pole((-5.5, -1.5), 500.0),
    ]}


def big_recipe(density_scale: float = 1.0) -> dict:
    """A ~1M-point block (at scale 1.0) for throughput measurements."""
    d_ground = 56.0 * density_scale
    d_struct = 48.0 * density_scale
    d_tree = 52.0 * density_scale
    d_car = 72.0 * density_scale
    d_pole = 600.0 * density_scale
    prims = [
        {"kind": "ground", "center": (0, 0), "size": (112, 112), "color": _GROUND_COLOR, "density": d_ground},
        {"kind": "road", "center": (0, -20), "size": (112, 7), "color": _ROAD_COLOR, "density": d_ground},
        {"kind": "road", "center": (15, 19.75), "size": (7, 72.5), "color": _ROAD_COLOR, "density": d_ground},
    ]
    sizes = [(10, 8), (12, 9), (9, 7), (11, 8), (8, 6), (10, 7), (9, 8), (12, 10), (8, 7), (10, 9)]
    for i, (sx, sy) in enumerate(sizes):
        x = -44 + (i % 5) * 19
        y = 34 if i < 5 else 2
        if x > 4 and y > -10:
            x += 12  # keep clear of the vertical road
        roof = {"type": "gabled", "ridge": 1.6} if i % 3 else {"type": "flat"}
        color = _ROOF_RED if i % 2 else _ROOF_GRAY
        prims.append(_building((x, y), (sx, sy), 3.0 + (i % 4) * 0.5, roof, color, d_struct))
    for i in range(30):
        x = -50 + (i * 37) % 101
        y = -52 + (i * 23) % 45
        if -28 <= y <= -12:
            y -= 14  # stay off the horizontal road
        prims.append(_tree((x, y), 1.6 + (i % 5) * 0.25, 1.5 + (i % 4) * 0.2, d_tree))
    for i in range(14):
        if i < 8:
            prims.append(_car((-48 + i * 13, -20 + (1.8 if i % 2 else -1.8)), 0.0, i, d_car))
        else:
            prims.append(_car((15 + (1.9 if i % 2 else -1.9), -8 + (i - 8) * 14), math.pi / 2, i, d_car))
    for i in range(24):
        prims.append(_pole((-52 + i * 4.5, -24.6), d_pole, height=4.0))
    return {"name": "block", "primitives": prims}
