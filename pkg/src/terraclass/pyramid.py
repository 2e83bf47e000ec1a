"""Multi-scale pyramid: successive voxel-grid downsampling with per-level indexes.

Level i holds a copy of the input downsampled at voxel size s0 * factor^i,
each level downsampled from the ORIGINAL cloud (never from the previous
level) so the surviving points keep their measured positions, colors and
labels exactly.

Voxel convention: cells are an axis-aligned world lattice, cell(p) =
floor(p / voxel) per axis.  Anchoring the lattice at the world origin
(rather than at each input's min corner) is what makes downsampling
idempotent at a fixed voxel size — every survivor remains the sole occupant
of its cell on a second pass.  The representative of an occupied cell is
the member point nearest to the centroid of the cell's members, ties broken
by the smaller point id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloudio import PointCloud
from .spatial import SpatialIndex, build_index


def base_scale(gsd: float) -> float:
    """Finest pyramid voxel size from the ground sampling distance: 4 * gsd."""
    if not gsd > 0:
        raise ValueError(f"gsd must be > 0, got {gsd}")
    return 4.0 * gsd


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """At most one point per occupied voxel; selection, never averaging.

    Output points are exact members of the input carrying their original
    color and label; output order is lexicographic by cell index.
    """
    if not voxel > 0:
        raise ValueError(f"voxel size must be > 0, got {voxel}")
    cells = np.floor(cloud.xyz / voxel).astype(np.int64)
    order = np.lexsort((np.arange(cloud.n), cells[:, 2], cells[:, 1], cells[:, 0]))
    sc = cells[order]
    starts = np.flatnonzero(np.r_[True, np.any(sc[1:] != sc[:-1], axis=1)])
    gid = np.cumsum(np.r_[True, np.any(sc[1:] != sc[:-1], axis=1)]) - 1

    sxyz = cloud.xyz[order]
    counts = np.diff(np.r_[starts, cloud.n])
    centroids = np.add.reduceat(sxyz, starts, axis=0) / counts[:, None]
    d2 = np.sum((sxyz - centroids[gid]) ** 2, axis=1)
    # winner per group: minimal (d2, original id)
    pick = np.lexsort((order, d2, gid))
    winners = order[pick[starts]]
    return cloud.select(winners)


@dataclass(frozen=True)
class PyramidLevel:
    voxel_size: float
    cloud: PointCloud
    index: SpatialIndex


@dataclass(frozen=True)
class ScalePyramid:
    """Ordered levels, finest first; level i has voxel size s0 * factor^i."""

    levels: tuple[PyramidLevel, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> PyramidLevel:
        return self.levels[i]


def build_pyramid(cloud: PointCloud, s0: float, n_levels: int = 9, factor: float = 2.0) -> ScalePyramid:
    """Downsample the cloud at s0 * factor^i for i in 0..n_levels-1 and index
    each level."""
    if not s0 > 0:
        raise ValueError(f"s0 must be > 0, got {s0}")
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    if not factor > 0:
        raise ValueError(f"factor must be > 0, got {factor}")
    levels = []
    for i in range(n_levels):
        voxel = s0 * factor**i
        level_cloud = voxel_downsample(cloud, voxel)
        levels.append(PyramidLevel(voxel, level_cloud, build_index(level_cloud)))
    return ScalePyramid(tuple(levels))
