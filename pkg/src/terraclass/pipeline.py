"""End-to-end orchestration: feature extraction, training, and streaming
prediction over whole clouds.

A pipeline run is specified by one PipelineConfig.  Feature extraction
builds the scale pyramid (geometric block) and the full-resolution index +
HSV table (color blocks) once per cloud, then fills feature rows in batches
of ``batch_size`` points. Training balance-samples each input cloud
(per_class points per present class, seed offset by cloud position), pools
the rows, and fits the configured classifier; the trained model carries the
feature parameters (gsd, k, n_levels, radii, feature_set) so prediction is
self-contained and rejects mismatched manifests.

Results are deterministic for fixed (clouds, config, seed) regardless of
thread count.  ``threads`` is resolved as: explicit value, else the
TERRACLASS_THREADS environment variable, else all cores — and is capped by
the numba thread pool size fixed at import time (NUMBA_NUM_THREADS).
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

import numba

from .cloudio import CLASSES, PointCloud
from .colorfeat import color_features_batch, rgb_to_hsv_batch
from .ensemble import Ensemble, TrainConfig, predict, train_gbt, train_rf
from .evaluate import balanced_sample
from .featmat import FeatureMatrix, FeatureSetSpec
from .geomfeat import geom_features_batch
from .pyramid import base_scale, build_pyramid
from .spatial import build_index

log = logging.getLogger("terraclass")

THREADS_ENV = "TERRACLASS_THREADS"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a full classification run depends on."""

    gsd: float = 0.051                       # ground sampling distance (m)
    k: int = 10                              # neighbors per pyramid level
    n_levels: int = 9                        # pyramid levels (voxel doubles per level)
    radii: tuple[float, ...] = (0.4, 0.6, 0.9)  # neighborhood color radii (m)
    feature_set: str = "all"
    classifier: str = "gbt"
    train: TrainConfig = field(default_factory=TrainConfig)
    per_class: int = 10000                   # balanced-sample size per class per cloud
    threads: int | None = None               # None: TERRACLASS_THREADS or all cores
    seed: int = 0                            # overrides train.seed; offsets sampling
    batch_size: int = 65536                  # points per feature batch

    def __post_init__(self):
        if not (self.gsd > 0):
            raise ValueError("gsd must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if self.classifier not in ("rf", "gbt"):
            raise ValueError(f"classifier must be rf or gbt, got {self.classifier!r}")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.spec()  # validates feature_set and radii together

    def spec(self) -> FeatureSetSpec:
        return FeatureSetSpec.parse(self.feature_set, self.radii)

    def with_feature_set(self, feature_set: str) -> "PipelineConfig":
        return replace(self, feature_set=feature_set)

    def describe(self) -> str:
        """One-line k=v summary of every effective setting."""
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "radii":
                v = ",".join(f"{r:g}" for r in v)
            elif f.name == "train":
                v = "[" + " ".join(
                    f"{tf.name}={getattr(v, tf.name)}" for tf in fields(TrainConfig)
                ) + "]"
            parts.append(f"{f.name}={v}")
        return " ".join(parts)


@dataclass(frozen=True)
class TimingReport:
    """Wall-clock seconds per pipeline stage."""

    features_s: float
    train_s: float
    predict_s: float
    n_points: int   # points in the processed cloud(s)
    n_rows: int     # feature rows actually computed
    threads: int    # effective thread count

    @property
    def total_s(self) -> float:
        return self.features_s + self.train_s + self.predict_s


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else TERRACLASS_THREADS, else all cores."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _apply_threads(threads: int) -> int:
    """Set the numba pool size, capped by the pool fixed at import time."""
    cap = numba.config.NUMBA_NUM_THREADS
    eff = min(threads, cap)
    if eff < threads:
        log.info("threads: requested %d, running %d (numba thread cap)", threads, eff)
    numba.set_num_threads(eff)
    return eff


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------


class _FeatureExtractor:
    """Per-cloud state shared across batches: pyramid, index, HSV table."""

    def __init__(self, cloud: PointCloud, config: PipelineConfig):
        spec = config.spec()
        if spec.needs_color and not cloud.has_color:
            raise ValueError(
                f"feature set {config.feature_set!r} needs point colors "
                "but the cloud has none"
            )
        self.cloud = cloud
        self.config = config
        self.spec = spec
        self.columns = tuple(spec.column_names(config.n_levels))
        self.pyramid = (
            build_pyramid(cloud, base_scale(config.gsd), config.n_levels)
            if spec.geom else None
        )
        self.index = build_index(cloud) if spec.cn_radii else None
        self.hsv = rgb_to_hsv_batch(cloud.rgb) if spec.needs_color else None

    def rows(self, row_ids: np.ndarray) -> np.ndarray:
        """(B, d) float32 feature rows for the given cloud row ids."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        qxyz = self.cloud.xyz[row_ids]
        out = np.empty((row_ids.shape[0], len(self.columns)), dtype=np.float32)
        col = 0
        if self.spec.geom:
            for level in self.pyramid.levels:
                out[:, col:col + 15] = geom_features_batch(qxyz, level, self.config.k)
                col += 15
        if self.spec.cn_radii:
            block = color_features_batch(
                self.index, self.hsv, qxyz, self.hsv[row_ids], self.spec.cn_radii
            )
            if self.spec.point_color:
                out[:, col:col + block.shape[1]] = block
                col += block.shape[1]
            else:
                out[:, col:col + block.shape[1] - 3] = block[:, 3:]
                col += block.shape[1] - 3
        elif self.spec.point_color:
            out[:, col:col + 3] = self.hsv[row_ids]
            col += 3
        assert col == len(self.columns)
        return out


def extract_features(cloud: PointCloud, config: PipelineConfig | None = None,
                     rows=None) -> FeatureMatrix:
    """Feature matrix for the given rows (default: every point, cloud order)."""
    config = config if config is not None else PipelineConfig()
    ex = _FeatureExtractor(cloud, config)
    if rows is None:
        rows = np.arange(cloud.n, dtype=np.int64)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim != 1:
            raise ValueError("rows must be a 1-D id array")
        if rows.size and (rows.min() < 0 or rows.max() >= cloud.n):
            raise ValueError(f"row ids outside 0..{cloud.n - 1}")
    blocks = [
        ex.rows(rows[i:i + config.batch_size])
        for i in range(0, rows.shape[0], config.batch_size)
    ]
    data = np.vstack(blocks) if blocks else np.empty((0, len(ex.columns)), dtype=np.float32)
    return FeatureMatrix(data, ex.columns, config.feature_set)


# ---------------------------------------------------------------------------
# Training and prediction
# ---------------------------------------------------------------------------


def _pipeline_meta(config: PipelineConfig) -> dict:
    return {
        "gsd": repr(float(config.gsd)),
        "k": str(config.k),
        "n_levels": str(config.n_levels),
        "radii": ",".join(repr(float(r)) for r in config.radii),
        "feature_set": config.feature_set,
    }


def config_from_model(model: Ensemble, base: PipelineConfig | None = None) -> PipelineConfig:
    """Rebuild the feature parameters a model was trained with."""
    base = base if base is not None else PipelineConfig()
    meta = model.meta
    required = ("gsd", "k", "n_levels", "radii", "feature_set")
    missing = [k for k in required if k not in meta]
    if missing:
        raise ValueError(f"model lacks pipeline metadata: missing {missing}")
    return replace(
        base,
        gsd=float(meta["gsd"]),
        k=int(meta["k"]),
        n_levels=int(meta["n_levels"]),
        radii=tuple(float(r) for r in meta["radii"].split(",")),
        feature_set=meta["feature_set"],
        classifier=model.kind,
        train=model.config,
    )


def run_train(train_clouds, config: PipelineConfig | None = None):
    """Balanced-sample, extract, and train; returns (model, TimingReport)."""
    config = config if config is not None else PipelineConfig()
    if isinstance(train_clouds, PointCloud):
        train_clouds = [train_clouds]
    train_clouds = list(train_clouds)
    if not train_clouds:
        raise ValueError("need at least one training cloud")
    threads = _apply_threads(resolve_threads(config.threads))

    t0 = time.perf_counter()
    mats = []
    labels = []
    n_points = 0
    for i, cloud in enumerate(train_clouds):
        rows = balanced_sample(cloud, config.per_class, config.seed + i)
        mats.append(extract_features(cloud, config, rows=rows))
        labels.append(cloud.labels[rows])
        n_points += cloud.n
        log.info("cloud %d: %d points, %d training rows", i, cloud.n, rows.shape[0])
    columns = mats[0].columns
    X = FeatureMatrix(
        np.vstack([m.data for m in mats]), columns, config.feature_set
    )
    y = np.concatenate(labels)
    t_feat = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_cfg = replace(config.train, seed=config.seed)
    train_fn = train_rf if config.classifier == "rf" else train_gbt
    model = train_fn(
        X, y, train_cfg, n_classes=len(CLASSES.names), threads=threads,
        meta=_pipeline_meta(config),
    )
    t_train = time.perf_counter() - t0
    timing = TimingReport(t_feat, t_train, 0.0, n_points, X.n, threads)
    log.info(
        "trained %s: %d rows, %d columns; features %.2fs, training %.2fs",
        config.classifier, X.n, X.d, t_feat, t_train,
    )
    return model, timing


def run_predict(cloud: PointCloud, model: Ensemble, config: PipelineConfig | None = None):
    """Label every point of a cloud; returns (labels, TimingReport).

    Feature parameters come from the model's metadata; ``config`` only
    supplies run-time knobs (threads, batch_size).  The extracted column
    layout must match the model manifest exactly.
    """
    base = config if config is not None else PipelineConfig()
    cfg = config_from_model(model, base)
    threads = _apply_threads(resolve_threads(cfg.threads))
    ex = _FeatureExtractor(cloud, cfg)
    if ex.columns != tuple(model.columns):
        raise ValueError(
            f"feature layout mismatch: extraction yields {len(ex.columns)} columns "
            f"but the model was trained on {len(model.columns)}"
        )

    labels = np.empty(cloud.n, dtype=np.uint8)
    t_feat = 0.0
    t_pred = 0.0
    for start in range(0, cloud.n, cfg.batch_size):
        rows = np.arange(start, min(start + cfg.batch_size, cloud.n), dtype=np.int64)
        t0 = time.perf_counter()
        X = ex.rows(rows)
        t_feat += time.perf_counter() - t0
        t0 = time.perf_counter()
        labels[rows] = predict(model, X)
        t_pred += time.perf_counter() - t0
    timing = TimingReport(t_feat, 0.0, t_pred, cloud.n, cloud.n, threads)
    log.info(
        "labeled %d points: features %.2fs, prediction %.2fs (%d threads)",
        cloud.n, t_feat, t_pred, threads,
    )
    return labels, timing
