"""Point-cloud containers and file I/O.

Supported formats:

* PLY 1.0, ``ascii`` or ``binary_little_endian``, single ``vertex`` element
  with properties ``x,y,z`` (float32/float64), optional ``red,green,blue``
  (uint8) and optional ``classification`` (uint8).  Additional scalar
  properties of known type are skipped; unknown property types (including
  ``list``) and non-vertex elements are rejected with a parse error naming
  the header line.
* ``xyzrgb_text``: whitespace-separated ``x y z r g b [label]`` per line,
  colors as 0..255 integers, ``#`` starts a comment.

Colors are normalized to [0,1] on read and written back as 8-bit values.
Coordinates are written as float64 so a write/read round trip preserves
them to well below 1e-6 m.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np

#: Label value that marks a point as unlabeled in files and label arrays.
UNLABELED = 255


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed or written."""


@dataclass(frozen=True)
class ClassSet:
    """Ordered registry of class names; ids are the positions 0..n-1."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name: {name!r}") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise KeyError(f"unknown class id: {class_id}")
        return self.names[class_id]


#: The six semantic classes, in id order 0..5.
CLASSES = ClassSet(
    ("ground", "high_vegetation", "building", "road", "car", "human_made_object")
)

#: Fixed label -> display color (8-bit RGB) used by colorized output.
PALETTE = {
    0: (0xFF, 0xF3, 0x91),  # ground
    1: (0x4E, 0x9A, 0x06),  # high_vegetation
    2: (0xEF, 0x29, 0x29),  # building
    3: (0x88, 0x8A, 0x85),  # road
    4: (0xF5, 0x79, 0x00),  # car
    5: (0x3F, 0xF3, 0xF6),  # human_made_object
}

#: Display color for unlabeled points in colorized output (not part of PALETTE).
UNLABELED_COLOR = (0x7F, 0x7F, 0x7F)


@dataclass(frozen=True)
class Point:
    """A single point: position in meters, color in [0,1], optional label."""

    x: float
    y: float
    z: float
    r: float | None = None
    g: float | None = None
    b: float | None = None
    label: int | None = None

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def rgb(self) -> np.ndarray | None:
        if self.r is None:
            return None
        return np.array([self.r, self.g, self.b], dtype=np.float64)


class PointCloud:
    """Immutable ordered point set with optional per-point color and label.

    Attributes:
        xyz: (n, 3) float64 positions in meters.
        rgb: (n, 3) float32 colors in [0,1], or None.
        labels: (n,) uint8 class ids (UNLABELED allowed), or None.
    """

    __slots__ = ("xyz", "rgb", "labels", "_bounds")

    def __init__(self, xyz, rgb=None, labels=None):
        xyz = np.ascontiguousarray(xyz, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (n, 3), got {xyz.shape}")
        if xyz.shape[0] == 0:
            raise ValueError("point cloud must be non-empty")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("coordinates must be finite")
        if rgb is not None:
            rgb = np.ascontiguousarray(rgb, dtype=np.float32)
            if rgb.shape != xyz.shape:
                raise ValueError(f"rgb must match xyz shape, got {rgb.shape}")
            if not np.all(np.isfinite(rgb)) or rgb.min() < 0.0 or rgb.max() > 1.0:
                raise ValueError("color channels must be finite and within [0,1]")
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.uint8)
            if labels.shape != (xyz.shape[0],):
                raise ValueError(f"labels must be (n,), got {labels.shape}")
            bad = (labels >= len(CLASSES)) & (labels != UNLABELED)
            if bad.any():
                raise ValueError(
                    f"labels must be class ids 0..{len(CLASSES) - 1} or {UNLABELED}; "
                    f"found {sorted(set(labels[bad].tolist()))}"
                )
        for a in (xyz, rgb, labels):
            if a is not None:
                a.setflags(write=False)
        self.xyz = xyz
        self.rgb = rgb
        self.labels = labels
        self._bounds = None

    @property
    def n(self) -> int:
        return self.xyz.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def has_color(self) -> bool:
        return self.rgb is not None

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(min, max) corner of the axis-aligned bounding box."""
        if self._bounds is None:
            self._bounds = (self.xyz.min(axis=0), self.xyz.max(axis=0))
        return self._bounds

    def point(self, i: int) -> Point:
        r = g = b = None
        if self.rgb is not None:
            r, g, b = (float(v) for v in self.rgb[i])
        label = int(self.labels[i]) if self.labels is not None else None
        x, y, z = (float(v) for v in self.xyz[i])
        return Point(x, y, z, r, g, b, label)

    def select(self, idx) -> "PointCloud":
        """Sub-cloud of the given row indices (order preserved)."""
        return PointCloud(
            self.xyz[idx],
            self.rgb[idx] if self.rgb is not None else None,
            self.labels[idx] if self.labels is not None else None,
        )

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.xyz, self.rgb, labels)

    def colorized(self) -> "PointCloud":
        """Replace colors with the fixed per-class display palette."""
        if self.labels is None:
            raise ValueError("colorize requires a labeled cloud")
        lut = np.full((256, 3), UNLABELED_COLOR, dtype=np.float32)
        for cid, rgb in PALETTE.items():
            lut[cid] = rgb
        return PointCloud(self.xyz, lut[self.labels] / 255.0, self.labels)

    def class_counts(self) -> dict[str, int]:
        """Per-class point counts (unlabeled reported under 'unlabeled')."""
        if self.labels is None:
            raise ValueError("cloud has no labels")
        counts = {}
        binc = np.bincount(self.labels, minlength=256)
        for cid, name in enumerate(CLASSES.names):
            if binc[cid]:
                counts[name] = int(binc[cid])
        if binc[UNLABELED]:
            counts["unlabeled"] = int(binc[UNLABELED])
        return counts


# ---------------------------------------------------------------------------
# PLY reading / writing
# ---------------------------------------------------------------------------

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

FORMATS = ("ply_ascii", "ply_binary_le", "xyzrgb_text")


def _parse_ply_header(raw: bytes):
    """Parse a PLY header; returns (format, n_vertices, properties, body_offset,
    n_header_lines) where properties is a list of (name, numpy dtype str)."""
    end = raw.find(b"end_header\n")
    if end < 0:
        raise CloudFormatError("malformed header: missing 'end_header' line")
    body_offset = end + len(b"end_header\n")
    try:
        header = raw[:end].decode("ascii")
    except UnicodeDecodeError as e:
        raise CloudFormatError(f"malformed header: non-ASCII byte at offset {e.start}") from None
    lines = header.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError("malformed header: line 1: missing 'ply' magic")

    fmt = None
    n_vertices = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[2] != "1.0":
                raise CloudFormatError(f"malformed header: line {ln}: bad format line {line!r}")
            if tok[1] == "ascii":
                fmt = "ply_ascii"
            elif tok[1] == "binary_little_endian":
                fmt = "ply_binary_le"
            else:
                raise CloudFormatError(f"malformed header: line {ln}: unsupported format {tok[1]!r}")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise CloudFormatError(f"malformed header: line {ln}: bad element line {line!r}")
            if tok[1] != "vertex":
                raise CloudFormatError(
                    f"malformed header: line {ln}: unsupported element {tok[1]!r} (only 'vertex')"
                )
            if in_vertex:
                raise CloudFormatError(f"malformed header: line {ln}: duplicate vertex element")
            in_vertex = True
            try:
                n_vertices = int(tok[2])
            except ValueError:
                raise CloudFormatError(f"malformed header: line {ln}: bad vertex count {tok[2]!r}") from None
        elif tok[0] == "property":
            if not in_vertex:
                raise CloudFormatError(f"malformed header: line {ln}: property outside an element")
            if len(tok) != 3:
                raise CloudFormatError(
                    f"malformed header: line {ln}: unknown property type "
                    f"{' '.join(tok[1:-1])!r}"
                )
            ptype, pname = tok[1], tok[2]
            if ptype not in _PLY_DTYPES:
                raise CloudFormatError(f"malformed header: line {ln}: unknown property type {ptype!r}")
            props.append((pname, "<" + _PLY_DTYPES[ptype]))
        else:
            raise CloudFormatError(f"malformed header: line {ln}: unknown keyword {tok[0]!r}")
    if fmt is None:
        raise CloudFormatError("malformed header: missing format line")
    if n_vertices is None:
        raise CloudFormatError("malformed header: missing vertex element")
    if n_vertices < 1:
        raise CloudFormatError("empty cloud: vertex count is 0")
    return fmt, n_vertices, props, body_offset, len(lines)


def _check_ply_columns(props: list[tuple[str, str]]):
    names = [p[0] for p in props]
    for c in ("x", "y", "z"):
        if c not in names:
            raise CloudFormatError(f"missing required property {c!r}")
        dt = dict(props)[c]
        if dt not in ("<f4", "<f8"):
            raise CloudFormatError(f"property {c!r} must be float32/float64, got {dt}")
    color = [c for c in ("red", "green", "blue") if c in names]
    if color and len(color) != 3:
        raise CloudFormatError(f"incomplete color properties: found only {color}")
    for c in color:
        if dict(props)[c] != "<u1":
            raise CloudFormatError(f"property {c!r} must be uint8")
    if "classification" in names and dict(props)["classification"] != "<u1":
        raise CloudFormatError("property 'classification' must be uint8")
    return bool(color), "classification" in names


def _cloud_from_columns(cols: dict[str, np.ndarray], has_color: bool, has_labels: bool) -> PointCloud:
    xyz = np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64)
    rgb = None
    if has_color:
        rgb = np.column_stack([cols["red"], cols["green"], cols["blue"]]).astype(np.float32) / 255.0
    labels = cols["classification"].astype(np.uint8) if has_labels else None
    return PointCloud(xyz, rgb, labels)


def _read_ply(raw: bytes, declared: str | None) -> PointCloud:
    fmt, n, props, body_offset, header_lines = _parse_ply_header(raw)
    if declared is not None and declared != fmt:
        raise CloudFormatError(f"file is {fmt}, not the declared {declared}")
    has_color, has_labels = _check_ply_columns(props)

    if fmt == "ply_binary_le":
        dtype = np.dtype(props)
        need = n * dtype.itemsize
        body = raw[body_offset:]
        if len(body) < need:
            raise CloudFormatError(
                f"truncated payload: need {need} bytes for {n} vertices, "
                f"file ends at byte offset {body_offset + len(body)}"
            )
        if len(body) > need:
            raise CloudFormatError(f"trailing data after vertices at byte offset {body_offset + need}")
        rec = np.frombuffer(body, dtype=dtype, count=n)
        cols = {name: rec[name] for name, _ in props}
    else:
        text = raw[body_offset:].decode("ascii", errors="replace")
        tokens = text.split()
        p = len(props)
        if len(tokens) < n * p:
            line = header_lines + 1 + len(tokens) // p
            raise CloudFormatError(
                f"truncated payload: expected {n * p} values for {n} vertices, "
                f"got {len(tokens)} (ends near line {line})"
            )
        if len(tokens) > n * p:
            raise CloudFormatError(f"trailing data after {n} vertices")
        try:
            data = np.array(tokens, dtype=np.float64).reshape(n, p)
        except ValueError:
            for i, t in enumerate(tokens):
                try:
                    float(t)
                except ValueError:
                    raise CloudFormatError(
                        f"bad value {t!r} at line {header_lines + 1 + i // p}"
                    ) from None
            raise
        cols = {name: data[:, j] for j, (name, _) in enumerate(props)}
        if has_labels:
            cols["classification"] = cols["classification"].astype(np.uint8)
    return _cloud_from_columns(cols, has_color, has_labels)


def _read_xyzrgb_text(raw: bytes, path: str) -> PointCloud:
    rows = []
    arity = None
    for ln, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        if arity is None:
            if len(tok) not in (6, 7):
                raise CloudFormatError(f"{path}: line {ln}: expected 6 or 7 columns, got {len(tok)}")
            arity = len(tok)
        elif len(tok) != arity:
            raise CloudFormatError(f"{path}: line {ln}: expected {arity} columns, got {len(tok)}")
        try:
            rows.append([float(t) for t in tok])
        except ValueError:
            raise CloudFormatError(f"{path}: line {ln}: bad value in {body!r}") from None
    if not rows:
        raise CloudFormatError(f"{path}: no points found")
    data = np.array(rows, dtype=np.float64)
    rgb = data[:, 3:6].astype(np.float32) / 255.0
    labels = data[:, 6].astype(np.uint8) if arity == 7 else None
    return PointCloud(data[:, :3], rgb, labels)


def read_cloud(path: str | os.PathLike, format: str | None = None) -> PointCloud:
    """Read a point cloud; ``format`` is one of FORMATS or None to auto-detect.

    Auto-detection: files starting with the PLY magic are parsed as PLY
    (ascii/binary chosen by the header), anything else as xyzrgb_text.
    """
    if format is not None and format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    with open(path, "rb") as fh:
        raw = fh.read()
    is_ply = raw.startswith(b"ply\n") or raw.startswith(b"ply\r\n")
    if format in ("ply_ascii", "ply_binary_le") or (format is None and is_ply):
        if not is_ply:
            raise CloudFormatError(f"{path}: missing 'ply' magic at line 1")
        try:
            return _read_ply(raw, format)
        except CloudFormatError as e:
            raise CloudFormatError(f"{path}: {e}") from None
    return _read_xyzrgb_text(raw, str(path))


def _float_repr(v: float) -> str:
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(v))


def write_cloud(
    cloud: PointCloud,
    path: str | os.PathLike,
    format: str = "ply_binary_le",
    colorize: bool = False,
) -> None:
    """Write a cloud; labels (when present) are stored as 'classification'.

    With ``colorize=True`` the written colors are the fixed class palette
    instead of the cloud's own colors (requires labels).
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if cloud.n == 0:
        raise CloudFormatError("refusing to write an empty cloud")
    if colorize:
        cloud = cloud.colorized()

    rgb8 = None
    if cloud.has_color:
        rgb8 = np.clip(np.rint(cloud.rgb * 255.0), 0, 255).astype(np.uint8)

    if format == "xyzrgb_text":
        if rgb8 is None:
            raise CloudFormatError("xyzrgb_text requires a colored cloud")
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(cloud.n):
                parts = [_float_repr(v) for v in cloud.xyz[i]]
                parts += [str(int(v)) for v in rgb8[i]]
                if cloud.has_labels:
                    parts.append(str(int(cloud.labels[i])))
                fh.write(" ".join(parts) + "\n")
        return

    props = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    ply_types = ["double"] * 3
    if rgb8 is not None:
        props += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
        ply_types += ["uchar"] * 3
    if cloud.has_labels:
        props.append(("classification", "<u1"))
        ply_types.append("uchar")

    header = ["ply"]
    header.append("format ascii 1.0" if format == "ply_ascii" else "format binary_little_endian 1.0")
    header.append(f"element vertex {cloud.n}")
    for (name, _), pt in zip(props, ply_types):
        header.append(f"property {pt} {name}")
    header.append("end_header")

    if format == "ply_ascii":
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(header) + "\n")
            for i in range(cloud.n):
                parts = [_float_repr(v) for v in cloud.xyz[i]]
                if rgb8 is not None:
                    parts += [str(int(v)) for v in rgb8[i]]
                if cloud.has_labels:
                    parts.append(str(int(cloud.labels[i])))
                fh.write(" ".join(parts) + "\n")
        return

    rec = np.empty(cloud.n, dtype=np.dtype(props))
    rec["x"], rec["y"], rec["z"] = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    if rgb8 is not None:
        rec["red"], rec["green"], rec["blue"] = rgb8[:, 0], rgb8[:, 1], rgb8[:, 2]
    if cloud.has_labels:
        rec["classification"] = cloud.labels
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


# Scene generation lives in its own module; re-exported here because it is
# part of this module's public surface.
from .synth import synth_scene  # noqa: E402

__all__ = [
    "CLASSES",
    "PALETTE",
    "UNLABELED",
    "UNLABELED_COLOR",
    "FORMATS",
    "ClassSet",
    "CloudFormatError",
    "Point",
    "PointCloud",
    "read_cloud",
    "synth_scene",
    "write_cloud",
]
