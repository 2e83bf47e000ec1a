"""Feature matrices: named float32 columns plus a binary on-disk format.

Feature sets are unions of three building blocks, written as "+"-joined
tokens:

    g        135 multi-scale geometric columns (15 features x 9 levels)
    cp       3 point-color columns (h, s, v)
    cn:R     3 neighborhood-color columns at ball radius R (e.g. cn:0.6)
    all      shorthand for g+cp plus cn at every configured radius;
             must stand alone

Canonical column order is geometric block (level-major), then point color,
then cn blocks by ascending radius — regardless of token order.

On-disk layout (little-endian):

    magic  b"TCFM"
    u32    format version (1)
    u32    number of columns
    per column: u16 name byte length, then UTF-8 name
    u16    feature-set string length, then UTF-8 string
    u64    number of rows
    rows * cols float32, row-major

Readers reject bad magic, unknown versions, truncated payloads, and
trailing bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .colorfeat import HSV_NAMES, _check_radii, color_feature_names
from .geomfeat import multiscale_feature_names

MAGIC = b"TCFM"
FORMAT_VERSION = 1


class FeatureFormatError(ValueError):
    """A feature-matrix file does not conform to the binary layout."""


@dataclass(frozen=True)
class FeatureSetSpec:
    """Which feature blocks a matrix carries (see module docstring)."""

    geom: bool
    point_color: bool
    cn_radii: tuple[float, ...]  # strictly increasing; empty for none

    def __post_init__(self):
        if not (self.geom or self.point_color or self.cn_radii):
            raise ValueError("feature set must include at least one block")
        if self.cn_radii:
            object.__setattr__(self, "cn_radii", _check_radii(self.cn_radii))

    @classmethod
    def parse(cls, text: str, radii=(0.4, 0.6, 0.9)) -> "FeatureSetSpec":
        """Parse "+"-joined tokens; 'all' expands to g+cp+cn at ``radii``."""
        tokens = [t.strip() for t in str(text).split("+")]
        if any(not t for t in tokens):
            raise ValueError(f"empty token in feature set {text!r}")
        if "all" in tokens:
            if len(tokens) > 1:
                raise ValueError("'all' cannot be combined with other feature tokens")
            return cls(True, True, _check_radii(radii))
        geom = False
        point_color = False
        cn: set[float] = set()
        for tok in tokens:
            if tok == "g":
                geom = True
            elif tok == "cp":
                point_color = True
            elif tok.startswith("cn:"):
                try:
                    r = float(tok[3:])
                except ValueError:
                    raise ValueError(f"bad radius in feature token {tok!r}") from None
                if not np.isfinite(r) or r <= 0:
                    raise ValueError(f"radius must be positive in feature token {tok!r}")
                cn.add(r)
            else:
                raise ValueError(
                    f"unknown feature token {tok!r} (expected g, cp, cn:R, or all)"
                )
        return cls(geom, point_color, tuple(sorted(cn)))

    def canonical(self) -> str:
        """Deterministic token string: g, cp, then cn:R ascending."""
        tokens = []
        if self.geom:
            tokens.append("g")
        if self.point_color:
            tokens.append("cp")
        tokens.extend(f"cn:{r:g}" for r in self.cn_radii)
        return "+".join(tokens)

    def column_names(self, n_levels: int = 9) -> list[str]:
        names: list[str] = []
        if self.geom:
            names.extend(multiscale_feature_names(n_levels))
        if self.point_color:
            names.extend(HSV_NAMES)
        for r in self.cn_radii:
            names.extend(f"{c}@r{r:g}" for c in HSV_NAMES)
        return names

    @property
    def needs_color(self) -> bool:
        return self.point_color or bool(self.cn_radii)


def full_column_names(n_levels: int = 9, radii=(0.4, 0.6, 0.9)) -> list[str]:
    """Columns of the 'all' set: geometric block then the full color block."""
    return multiscale_feature_names(n_levels) + color_feature_names(radii)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of named float32 features for one batch of points."""

    data: np.ndarray            # (n, d) float32, C-contiguous
    columns: tuple[str, ...]    # length d, unique names
    feature_set: str            # the set string the columns realize

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {data.shape}")
        columns = tuple(str(c) for c in self.columns)
        if len(columns) != data.shape[1]:
            raise ValueError(
                f"{len(columns)} column names for {data.shape[1]} data columns"
            )
        if len(set(columns)) != len(columns):
            raise ValueError("column names must be unique")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data must be finite (no NaN/Inf)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "feature_set", str(self.feature_set))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None
        return self.data[:, j]

    def select(self, columns, feature_set: str | None = None) -> "FeatureMatrix":
        """Subset/reorder by column names (e.g. carve g+cn:0.6 out of all)."""
        columns = tuple(str(c) for c in columns)
        pos = {c: j for j, c in enumerate(self.columns)}
        missing = [c for c in columns if c not in pos]
        if missing:
            raise ValueError(f"columns not in matrix: {missing}")
        idx = np.array([pos[c] for c in columns], dtype=np.intp)
        return FeatureMatrix(
            np.ascontiguousarray(self.data[:, idx]),
            columns,
            self.feature_set if feature_set is None else feature_set,
        )


def write_features(matrix: FeatureMatrix, path) -> None:
    """Write a feature matrix in the TCFM binary layout."""
    path = Path(path)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, matrix.d)]
    for name in matrix.columns:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"column name too long: {name[:32]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    fs = matrix.feature_set.encode("utf-8")
    parts.append(struct.pack("<H", len(fs)))
    parts.append(fs)
    parts.append(struct.pack("<Q", matrix.n))
    parts.append(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))


def read_features(path) -> FeatureMatrix:
    """Read a TCFM feature matrix; strict about truncation and trailing bytes."""
    path = Path(path)
    blob = path.read_bytes()
    off = 0

    def need(n: int, what: str) -> int:
        nonlocal off
        if off + n > len(blob):
            raise FeatureFormatError(f"{path}: truncated while reading {what}")
        off += n
        return off - n

    at = need(4, "magic")
    if blob[at:at + 4] != MAGIC:
        raise FeatureFormatError(f"{path}: not a feature-matrix file (bad magic)")
    at = need(8, "header")
    version, d = struct.unpack_from("<II", blob, at)
    if version != FORMAT_VERSION:
        raise FeatureFormatError(
            f"{path}: unsupported feature-matrix version {version} (expected {FORMAT_VERSION})"
        )
    columns = []
    for j in range(d):
        at = need(2, f"column {j} name length")
        (ln,) = struct.unpack_from("<H", blob, at)
        at = need(ln, f"column {j} name")
        columns.append(blob[at:at + ln].decode("utf-8"))
    at = need(2, "feature-set length")
    (ln,) = struct.unpack_from("<H", blob, at)
    at = need(ln, "feature-set string")
    feature_set = blob[at:at + ln].decode("utf-8")
    at = need(8, "row count")
    (n,) = struct.unpack_from("<Q", blob, at)
    payload = n * d * 4
    at = need(payload, f"{n}x{d} float32 payload")
    if off != len(blob):
        raise FeatureFormatError(f"{path}: {len(blob) - off} trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f4", count=n * d, offset=at).reshape(n, d)
    try:
        return FeatureMatrix(data.copy(), tuple(columns), feature_set)
    except ValueError as e:
        raise FeatureFormatError(f"{path}: {e}") from None
