"""Evaluation tools: spatial train/test splits, balanced sampling, confusion
matrices, and feature-set ablation runs.

The split-plane search scans a grid of vertical planes (normal in the xy
plane): angles theta = k*pi/n_angles for k in 0..n_angles-1, and for each
angle n_offsets evenly spaced cuts between the extreme projections.  A
labeled point is on the positive side iff x*cos(theta) + y*sin(theta) >=
offset.  The objective of a plane is the worst per-class deviation from a
50/50 split, max_c |frac_c(positive) - 1/2|, minimized over the grid; ties
prefer the smaller angle, then the smaller offset.  A plane of mirror
symmetry of every class scores exactly 0.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .cloudio import CLASSES, UNLABELED, PointCloud
from .ensemble import TrainConfig, predict, train_gbt, train_rf
from .featmat import FeatureMatrix, FeatureSetSpec

ABLATION_FORMAT = "terraclass-ablation v1"


# ---------------------------------------------------------------------------
# Spatial split plane
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlane:
    """A vertical plane x*cos(theta) + y*sin(theta) = offset."""

    theta: float      # normal angle in [0, pi)
    offset: float     # signed distance of the plane from the origin
    objective: float  # max per-class |positive fraction - 1/2| at this plane

    def side(self, xyz) -> np.ndarray:
        """True for points on the positive side (>= offset)."""
        xyz = np.asarray(xyz, dtype=np.float64)
        proj = xyz[:, 0] * np.cos(self.theta) + xyz[:, 1] * np.sin(self.theta)
        return proj >= self.offset


def find_split_plane(cloud: PointCloud, n_angles: int = 36, n_offsets: int = 64) -> SplitPlane:
    """Grid-search the vertical plane that best halves every class at once."""
    if n_angles < 1:
        raise ValueError("n_angles must be >= 1")
    if n_offsets < 2:
        raise ValueError("n_offsets must be >= 2")
    if not cloud.has_labels:
        raise ValueError("split-plane search needs a labeled cloud")
    mask = cloud.labels != UNLABELED
    if not mask.any():
        raise ValueError("split-plane search needs at least one labeled point")
    xy = cloud.xyz[mask, :2]
    lab = cloud.labels[mask]
    present = np.unique(lab)

    best_theta = 0.0
    best_offset = 0.0
    best_obj = np.inf
    for k in range(n_angles):
        theta = k * np.pi / n_angles
        proj = xy[:, 0] * np.cos(theta) + xy[:, 1] * np.sin(theta)
        offsets = np.linspace(proj.min(), proj.max(), n_offsets)
        devmax = np.zeros(n_offsets)
        for c in present:
            a = np.sort(proj[lab == c])
            n_ge = a.size - np.searchsorted(a, offsets, side="left")
            np.maximum(devmax, np.abs(n_ge / a.size - 0.5), out=devmax)
        j = int(np.argmin(devmax))  # first minimum -> smallest offset
        if devmax[j] < best_obj:
            best_obj = float(devmax[j])
            best_theta = float(theta)
            best_offset = float(offsets[j])
    return SplitPlane(best_theta, best_offset, best_obj)


# ---------------------------------------------------------------------------
# Balanced sampling
# ---------------------------------------------------------------------------


def balanced_sample(cloud: PointCloud, per_class: int, seed: int = 0) -> np.ndarray:
    """Row ids with up to per_class points of every present class.

    Classes are visited in ascending id order with one seeded generator, so
    the draw is reproducible; each class block is sorted ascending.  A class
    with fewer points than requested contributes everything it has and emits
    a warning; absent classes are skipped silently.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if not cloud.has_labels:
        raise ValueError("balanced sampling needs a labeled cloud")
    labels = cloud.labels
    rng = np.random.default_rng([seed])
    blocks = []
    for c, name in enumerate(CLASSES.names):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            continue
        take = min(per_class, rows.size)
        if rows.size < per_class:
            warnings.warn(
                f"class {name}: only {rows.size} of {per_class} requested points available",
                stacklevel=2,
            )
        sel = rng.choice(rows.size, size=take, replace=False)
        blocks.append(rows[np.sort(sel)])
    if not blocks:
        raise ValueError("cloud has no labeled points to sample")
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Confusion matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts[true, pred] over a labeled test set."""

    counts: np.ndarray  # (nc, nc) int64

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int = len(CLASSES.names)) -> "ConfusionMatrix":
        y_true = np.asarray(y_true).reshape(-1).astype(np.int64)
        y_pred = np.asarray(y_pred).reshape(-1).astype(np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("y_true and y_pred must have the same length")
        if y_true.size == 0:
            raise ValueError("cannot build a confusion matrix from zero points")
        for name, y in (("y_true", y_true), ("y_pred", y_pred)):
            if y.min() < 0 or y.max() >= n_classes:
                raise ValueError(f"{name} has labels outside 0..{n_classes - 1}")
        flat = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
        return cls(flat.reshape(n_classes, n_classes))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def fractions(self) -> np.ndarray:
        """Counts as fractions of ALL test points (sums to 1)."""
        return self.counts / self.total

    @property
    def overall_error(self) -> float:
        return 1.0 - int(np.trace(self.counts)) / self.total

    def class_errors(self) -> np.ndarray:
        """Per-class error 1 - counts[c,c]/row_sum(c); 0.0 for absent classes."""
        row = self.counts.sum(axis=1)
        out = np.zeros(self.n_classes)
        nz = row > 0
        out[nz] = 1.0 - np.diag(self.counts)[nz] / row[nz]
        return out


def evaluate(model, features, labels, n_classes: int | None = None) -> ConfusionMatrix:
    """Predict and compare against reference labels (unlabeled rows skipped)."""
    labels = np.asarray(labels).reshape(-1)
    pred = predict(model, features)
    if labels.shape != pred.shape:
        raise ValueError(f"{pred.shape[0]} predictions but {labels.shape[0]} labels")
    mask = labels != UNLABELED
    if not mask.any():
        raise ValueError("no labeled points to evaluate against")
    nc = n_classes if n_classes is not None else max(len(CLASSES.names), model.n_classes)
    return ConfusionMatrix.from_labels(labels[mask], pred[mask], nc)


def format_confusion(cm: ConfusionMatrix, class_names=CLASSES.names) -> str:
    """Human-readable counts table with per-class and overall error."""
    names = list(class_names)[: cm.n_classes]
    while len(names) < cm.n_classes:
        names.append(f"class_{len(names)}")
    width = max(len(n) for n in names) + 2
    cw = max(8, len(str(int(cm.counts.max()))) + 2)
    lines = ["confusion matrix (rows: reference, columns: predicted)"]
    lines.append(" " * width + "".join(n[:cw - 1].rjust(cw) for n in names) + "   error".rjust(9))
    errs = cm.class_errors()
    for i, n in enumerate(names):
        row = "".join(str(int(v)).rjust(cw) for v in cm.counts[i])
        lines.append(n.ljust(width) + row + f"{errs[i]:9.4f}")
    lines.append(f"points: {cm.total}   overall error: {cm.overall_error:.6f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Ablation runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    feature_set: str
    classifier: str
    overall_error: float
    wall_time_s: float
    class_errors: tuple[float, ...]


@dataclass(frozen=True)
class AblationReport:
    train_names: tuple[str, ...]
    test_name: str
    rows: tuple[AblationRow, ...]


def ablation_run(train_clouds, test_cloud, feature_sets, classifiers,
                 config=None, train_names=None, test_name: str = "test") -> AblationReport:
    """Train/evaluate every (feature set, classifier) pair on a fixed split.

    Features are extracted once per cloud for the union of all requested
    blocks and sliced per feature set, so rows differ only in the columns
    and classifier; wall_time_s covers training + prediction for that row.
    """
    from .pipeline import PipelineConfig, extract_features

    config = config if config is not None else PipelineConfig()
    classifiers = list(classifiers)
    for clf in classifiers:
        if clf not in ("rf", "gbt"):
            raise ValueError(f"unknown classifier {clf!r} (expected rf or gbt)")
    specs = [FeatureSetSpec.parse(fs, config.radii) for fs in feature_sets]
    if not specs:
        raise ValueError("need at least one feature set")

    union_radii = sorted({r for s in specs for r in s.cn_radii})
    superset = FeatureSetSpec(
        geom=any(s.geom for s in specs),
        point_color=any(s.point_color or s.cn_radii for s in specs),
        cn_radii=tuple(union_radii),
    )
    # point_color is forced on whenever any color block is present so the
    # superset stays a valid spec; unused columns are simply never selected
    sup_config = config.with_feature_set(superset.canonical())

    train_clouds = list(train_clouds)
    if train_names is None:
        train_names = tuple(f"train{i}" for i in range(len(train_clouds)))
    else:
        train_names = tuple(str(n) for n in train_names)

    rows_per_cloud = [balanced_sample(c, config.per_class, config.seed + i)
                      for i, c in enumerate(train_clouds)]
    train_mats = [extract_features(c, sup_config, rows=r)
                  for c, r in zip(train_clouds, rows_per_cloud)]
    train_labels = np.concatenate([c.labels[r] for c, r in zip(train_clouds, rows_per_cloud)])
    if not test_cloud.has_labels:
        raise ValueError("ablation needs a labeled test cloud")
    test_mask = np.flatnonzero(test_cloud.labels != UNLABELED)
    test_mat = extract_features(test_cloud, sup_config, rows=test_mask)
    test_labels = test_cloud.labels[test_mask]

    out_rows = []
    nc = len(CLASSES.names)
    for spec in specs:
        cols = spec.column_names(config.n_levels)
        fs_name = spec.canonical()
        sub_train = FeatureMatrix(
            np.vstack([m.select(cols).data for m in train_mats]), tuple(cols), fs_name
        )
        sub_test = test_mat.select(cols, fs_name)
        for clf in classifiers:
            t0 = time.perf_counter()
            train_fn = train_rf if clf == "rf" else train_gbt
            model = train_fn(sub_train, train_labels, config.train,
                             n_classes=nc, threads=config.threads)
            cm = evaluate(model, sub_test, test_labels, n_classes=nc)
            wall = time.perf_counter() - t0
            out_rows.append(AblationRow(
                feature_set=fs_name, classifier=clf,
                overall_error=cm.overall_error, wall_time_s=wall,
                class_errors=tuple(float(e) for e in cm.class_errors()),
            ))
    return AblationReport(train_names, str(test_name), tuple(out_rows))


def format_ablation_report(report: AblationReport) -> str:
    """Text form; parse_ablation_report inverts it exactly."""
    lines = [ABLATION_FORMAT]
    lines.append("train: " + " ".join(report.train_names))
    lines.append("test: " + report.test_name)
    lines.append("classes: " + " ".join(CLASSES.names))
    lines.append(
        "columns: feature_set classifier overall_error wall_time_s "
        + " ".join(f"e_{n}" for n in CLASSES.names)
    )
    for row in report.rows:
        if len(row.class_errors) != len(CLASSES.names):
            raise ValueError(f"row has {len(row.class_errors)} class errors, expected {len(CLASSES.names)}")
        vals = " ".join(repr(float(v)) for v in row.class_errors)
        lines.append(
            f"row {row.feature_set} {row.classifier} {repr(float(row.overall_error))} "
            f"{repr(float(row.wall_time_s))} {vals}"
        )
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_ablation_report(text: str) -> AblationReport:
    """Parse the text form back; raises ValueError on any deviation."""
    lines = text.splitlines()

    def need(i: int, what: str) -> str:
        if i >= len(lines):
            raise ValueError(f"ablation report truncated: expected {what} at line {i + 1}")
        return lines[i]

    if need(0, "format line") != ABLATION_FORMAT:
        raise ValueError(f"not an ablation report (line 1 = {lines[0][:40]!r})")

    def kv(i: int, key: str) -> str:
        line = need(i, f"'{key}:'")
        if not line.startswith(key + ":"):
            raise ValueError(f"line {i + 1}: expected '{key}: ...', got {line[:60]!r}")
        return line[len(key) + 1:].strip()

    train_names = tuple(kv(1, "train").split())
    test_name = kv(2, "test")
    class_names = kv(3, "classes").split()
    if tuple(class_names) != CLASSES.names:
        raise ValueError(f"unexpected class list {class_names}")
    expected_cols = ("feature_set classifier overall_error wall_time_s "
                     + " ".join(f"e_{n}" for n in CLASSES.names))
    if kv(4, "columns") != expected_cols:
        raise ValueError("unexpected ablation column layout")
    rows = []
    i = 5
    nc = len(CLASSES.names)
    while True:
        line = need(i, "'row' or 'end'")
        if line == "end":
            break
        if not line.startswith("row "):
            raise ValueError(f"line {i + 1}: expected 'row ...' or 'end', got {line[:60]!r}")
        toks = line.split()
        if len(toks) != 5 + nc:
            raise ValueError(f"line {i + 1}: expected {5 + nc} tokens, got {len(toks)}")
        rows.append(AblationRow(
            feature_set=toks[1], classifier=toks[2],
            overall_error=float(toks[3]), wall_time_s=float(toks[4]),
            class_errors=tuple(float(v) for v in toks[5:]),
        ))
        i += 1
    return AblationReport(train_names, test_name, tuple(rows))
