"""Random-forest and gradient-boosted-tree classifiers over feature matrices.

Both ensembles are built from the exact-split tree kernels in ``_trees``:

* the random forest grows ``n_trees`` depth-capped classification trees on
  bootstrap samples, each split drawing ceil(d * fraction) candidate
  features; prediction averages leaf class frequencies over trees and an
  out-of-bag error is computed from the rows each tree never drew;
* the boosted ensemble fits one leaf-wise regression tree per class and
  iteration to the softmax gradients (g = p - y, h = p(1-p)), with Newton
  leaf values -G/(H + 1e-3), a shared per-iteration row bag, and shrinkage
  ``gbt_learning_rate``; prediction is the softmax of the accumulated
  scores and a training log-loss history is recorded (n_trees + 1 entries,
  the first being the uniform-prediction loss).

Training and prediction are deterministic for a fixed (data, config, seed)
regardless of thread count: every tree seeds its own splitmix64 stream and
no result depends on scheduling order.

Models serialize to a human-diffable text format (version line
"terraclass-model v1") with repr() floats, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ._trees import (
    TAG_GBT_BAG,
    TAG_GBT_SPLIT,
    TAG_RF_BOOTSTRAP,
    TAG_RF_SPLIT,
    _bootstrap_rows,
    _draw_k_of_n,
    _gbt_build,
    _gbt_predict_proba,
    _rf_build,
    _rf_predict_proba,
    _stream_state,
    _tree_apply,
)
from .cloudio import UNLABELED
from .featmat import FeatureMatrix

MODEL_FORMAT = "terraclass-model v1"
_GBT_LAMBDA = 1e-3


def _stream(seed: int, tag: int, unit: int) -> np.uint64:
    """Stream state as a uint64 scalar (kernels reject bare big Python ints)."""
    return np.uint64(_stream_state(seed, tag, unit))


class ModelFormatError(ValueError):
    """A model file does not conform to the text layout."""


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters for both ensemble kinds."""

    n_trees: int = 100                 # forest trees / boosting iterations
    rf_max_depth: int = 30             # root is depth 0; nodes at max depth become leaves
    rf_feature_fraction: float = 0.5   # candidate features per split: ceil(d * fraction)
    rf_bootstrap: bool = True          # n draws with replacement per tree
    gbt_max_leaves: int = 16           # leaf-wise growth stops at this many leaves
    gbt_learning_rate: float = 0.2
    gbt_bagging_fraction: float = 0.5  # rows per iteration, without replacement
    gbt_feature_fraction: float = 0.5  # candidate features per split: ceil(d * fraction)
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.rf_max_depth < 1:
            raise ValueError("rf_max_depth must be >= 1")
        if self.gbt_max_leaves < 2:
            raise ValueError("gbt_max_leaves must be >= 2")
        for name in ("rf_feature_fraction", "gbt_bagging_fraction", "gbt_feature_fraction"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if not (self.gbt_learning_rate > 0.0):
            raise ValueError("gbt_learning_rate must be > 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(eq=False)
class Ensemble:
    """A trained ensemble as flat node arrays (child ids are global)."""

    kind: str                      # "rf" | "gbt"
    n_classes: int
    columns: tuple[str, ...]       # training-time feature manifest
    feat: np.ndarray               # int32 (N,); -1 marks a leaf
    thr: np.ndarray                # float64 (N,); route left iff feature < thr
    left: np.ndarray               # int32 (N,)
    right: np.ndarray              # int32 (N,)
    value: np.ndarray              # rf: (N, n_classes) leaf frequencies; gbt: (N,) leaf values
    roots: np.ndarray              # int64, one entry per flat tree
    tree_class: np.ndarray | None  # gbt: int32 class per flat tree; rf: None
    learning_rate: float           # gbt shrinkage; 0.0 for rf
    oob_error: float | None        # rf with bootstrap; None otherwise
    loss_history: np.ndarray | None  # gbt: float64 (n_trees + 1,); None for rf
    config: TrainConfig
    meta: dict                     # pipeline provenance (string -> string)

    @property
    def n_trees(self) -> int:
        if self.kind == "gbt":
            return len(self.roots) // self.n_classes if self.n_classes else 0
        return len(self.roots)

    @property
    def d(self) -> int:
        return len(self.columns)


# ---------------------------------------------------------------------------
# Input handling
# ---------------------------------------------------------------------------


def _as_xy(features, labels):
    if isinstance(features, FeatureMatrix):
        X = features.data
        columns = features.columns
    else:
        X = np.ascontiguousarray(features, dtype=np.float32)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        columns = tuple(f"x{j}" for j in range(X.shape[1]))
    y = np.asarray(labels)
    if y.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    y = y.reshape(-1).astype(np.int64)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if y.shape[0] == 0:
        raise ValueError("cannot train on an empty feature matrix")
    if np.any(y == UNLABELED):
        raise ValueError(f"unlabeled rows (label {UNLABELED}) must be removed before training")
    if y.min() < 0:
        raise ValueError("labels must be >= 0")
    if np.unique(y).size < 2:
        raise ValueError("training needs at least two distinct classes")
    return X, y, columns


def _resolve_classes(y, n_classes):
    observed = int(y.max()) + 1
    if n_classes is None:
        return observed
    if n_classes < observed:
        raise ValueError(f"labels reach class {observed - 1} but n_classes={n_classes}")
    return int(n_classes)


def _resolve_threads(threads) -> int:
    if threads is None:
        return min(32, os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _flatten(tree_list, vdim):
    """Concatenate per-tree arrays; child ids become global via offsets."""
    roots = np.zeros(len(tree_list), dtype=np.int64)
    off = 0
    for t, tr in enumerate(tree_list):
        roots[t] = off
        off += tr[0].shape[0]
    total = off
    feat = np.empty(total, dtype=np.int32)
    thr = np.empty(total, dtype=np.float64)
    left = np.empty(total, dtype=np.int32)
    right = np.empty(total, dtype=np.int32)
    value = np.empty((total, vdim) if vdim else total, dtype=np.float64)
    for t, (tf, tt, tl, tright, tv) in enumerate(tree_list):
        a = roots[t]
        b = a + tf.shape[0]
        feat[a:b] = tf
        thr[a:b] = tt
        left[a:b] = tl + a
        right[a:b] = tright + a
        value[a:b] = tv
    return feat, thr, left, right, value, roots


def _logloss(P, y) -> float:
    p = np.maximum(P[np.arange(y.shape[0]), y], 1e-300)
    return float(-np.mean(np.log(p)))


def _softmax(F) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


def train_rf(features, labels, config: TrainConfig = TrainConfig(),
             n_classes: int | None = None, threads: int | None = None,
             meta: dict | None = None) -> Ensemble:
    """Train a random forest; see the module docstring for the algorithm."""
    X, y, columns = _as_xy(features, labels)
    if config.n_trees < 1:
        raise ValueError("a random forest needs n_trees >= 1")
    nc = _resolve_classes(y, n_classes)
    n, d = X.shape
    mtry = math.ceil(d * config.rf_feature_fraction)
    max_nodes = 2 * n + 1
    stack_cap = 2 * config.rf_max_depth + 8
    seed = config.seed

    def _one_tree(t: int):
        rows = np.empty(n, dtype=np.int64)
        if config.rf_bootstrap:
            _bootstrap_rows(_stream(seed, TAG_RF_BOOTSTRAP, t), n, rows)
        else:
            rows[:] = np.arange(n)
        feat = np.full(max_nodes, -1, dtype=np.int32)
        thr = np.zeros(max_nodes, dtype=np.float64)
        left = np.zeros(max_nodes, dtype=np.int32)
        right = np.zeros(max_nodes, dtype=np.int32)
        value = np.zeros((max_nodes, nc), dtype=np.float64)
        nn = _rf_build(
            X, y, rows, nc, mtry, config.rf_max_depth, config.min_samples_leaf,
            _stream(seed, TAG_RF_SPLIT, t),
            feat, thr, left, right, value,
            np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64),
            np.empty(d, dtype=np.int64), np.empty(mtry, dtype=np.int64),
            np.empty(n, dtype=np.float64), np.empty(n, dtype=np.int64),
            np.empty(stack_cap, dtype=np.int64), np.empty(stack_cap, dtype=np.int64),
            np.empty(stack_cap, dtype=np.int64), np.empty(stack_cap, dtype=np.int64),
        )
        return (feat[:nn].copy(), thr[:nn].copy(), left[:nn].copy(),
                right[:nn].copy(), value[:nn].copy())

    with ThreadPoolExecutor(max_workers=_resolve_threads(threads)) as pool:
        trees = list(pool.map(_one_tree, range(config.n_trees)))

    oob_error = None
    if config.rf_bootstrap:
        votes = np.zeros((n, nc))
        covered = np.zeros(n, dtype=bool)
        rows = np.empty(n, dtype=np.int64)
        root0 = np.zeros(1, dtype=np.int64)
        for t, (tf, tt, tl, tr_, tv) in enumerate(trees):
            _bootstrap_rows(_stream(seed, TAG_RF_BOOTSTRAP, t), n, rows)
            inbag = np.zeros(n, dtype=bool)
            inbag[rows] = True
            oob = np.flatnonzero(~inbag)
            if oob.size == 0:
                continue
            proba = np.empty((oob.size, nc))
            _rf_predict_proba(np.ascontiguousarray(X[oob]), tf, tt, tl, tr_, tv, root0, proba)
            votes[oob] += proba
            covered[oob] = True
        if covered.any():
            pred = np.argmax(votes[covered], axis=1)
            oob_error = float(np.mean(pred != y[covered]))

    feat, thr, left, right, value, roots = _flatten(trees, nc)
    return Ensemble(
        kind="rf", n_classes=nc, columns=columns,
        feat=feat, thr=thr, left=left, right=right, value=value, roots=roots,
        tree_class=None, learning_rate=0.0, oob_error=oob_error,
        loss_history=None, config=config, meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# Gradient-boosted trees
# ---------------------------------------------------------------------------


def train_gbt(features, labels, config: TrainConfig = TrainConfig(),
              n_classes: int | None = None, threads: int | None = None,
              meta: dict | None = None) -> Ensemble:
    """Train a boosted ensemble; see the module docstring for the algorithm."""
    X, y, columns = _as_xy(features, labels)
    nc = _resolve_classes(y, n_classes)
    n, d = X.shape
    fsub = math.ceil(d * config.gbt_feature_fraction)
    m_bag = max(1, int(config.gbt_bagging_fraction * n))
    max_nodes = 2 * config.gbt_max_leaves - 1
    seed = config.seed
    lr = config.gbt_learning_rate

    F = np.zeros((n, nc))
    losses = [_logloss(_softmax(F), y)]
    onehot = np.zeros((n, nc))
    onehot[np.arange(n), y] = 1.0

    trees: list[tuple] = []
    perm_n = np.empty(n, dtype=np.int64)

    def _one_tree(args):
        it, c, g, h, rows = args
        feat = np.full(max_nodes, -1, dtype=np.int32)
        thr = np.zeros(max_nodes, dtype=np.float64)
        left = np.zeros(max_nodes, dtype=np.int32)
        right = np.zeros(max_nodes, dtype=np.int32)
        value = np.zeros(max_nodes, dtype=np.float64)
        m = rows.shape[0]
        nn = _gbt_build(
            X, g, h, rows, fsub, config.gbt_max_leaves, config.min_samples_leaf,
            _GBT_LAMBDA, _stream(seed, TAG_GBT_SPLIT, it * nc + c),
            feat, thr, left, right, value,
            np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64),
            np.empty(d, dtype=np.int64), np.empty(fsub, dtype=np.int64),
            np.empty(m, dtype=np.float64), np.empty(m, dtype=np.float64),
            np.empty(m, dtype=np.float64),
        )
        return (feat[:nn].copy(), thr[:nn].copy(), left[:nn].copy(),
                right[:nn].copy(), value[:nn].copy())

    with ThreadPoolExecutor(max_workers=_resolve_threads(threads)) as pool:
        leaf_vals = np.empty(n, dtype=np.float64)
        for it in range(config.n_trees):
            P = _softmax(F)
            rows = np.empty(m_bag, dtype=np.int64)
            _draw_k_of_n(_stream(seed, TAG_GBT_BAG, it), n, m_bag, perm_n, rows)
            rows.sort()
            jobs = []
            for c in range(nc):
                g = P[:, c] - onehot[:, c]
                h = P[:, c] * (1.0 - P[:, c])
                jobs.append((it, c, g, h, rows))
            iter_trees = list(pool.map(_one_tree, jobs))
            # sequential score update, ascending class, over all rows
            for c, (tf, tt, tl, tr_, tv) in enumerate(iter_trees):
                _tree_apply(X, tf, tt, tl, tr_, tv, 0, leaf_vals)
                F[:, c] += lr * leaf_vals
            trees.extend(iter_trees)
            losses.append(_logloss(_softmax(F), y))

    feat, thr, left, right, value, roots = _flatten(trees, 0)
    tree_class = np.array([t % nc for t in range(len(trees))], dtype=np.int32)
    return Ensemble(
        kind="gbt", n_classes=nc, columns=columns,
        feat=feat, thr=thr, left=left, right=right, value=value, roots=roots,
        tree_class=tree_class, learning_rate=lr, oob_error=None,
        loss_history=np.array(losses), config=config, meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _aligned_data(model: Ensemble, features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        if features.columns == model.columns:
            return features.data
        if set(features.columns) == set(model.columns):
            return features.select(model.columns).data
        missing = [c for c in model.columns if c not in set(features.columns)]
        extra = [c for c in features.columns if c not in set(model.columns)]
        raise ValueError(
            "feature columns do not match the model manifest: "
            f"missing {missing[:8]}, unexpected {extra[:8]}"
        )
    X = np.ascontiguousarray(features, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"expected (n, {model.d}) features, got {X.shape}")
    return X


def predict_proba(model: Ensemble, features) -> np.ndarray:
    """(n, n_classes) float64 class probabilities."""
    X = _aligned_data(model, features)
    out = np.empty((X.shape[0], model.n_classes))
    if model.kind == "rf":
        _rf_predict_proba(X, model.feat, model.thr, model.left, model.right,
                          model.value, model.roots, out)
    else:
        _gbt_predict_proba(X, model.feat, model.thr, model.left, model.right,
                           model.value, model.roots, model.tree_class,
                           model.learning_rate, out)
    return out


def predict(model: Ensemble, features) -> np.ndarray:
    """(n,) uint8 labels: argmax probability, first class on exact ties."""
    return np.argmax(predict_proba(model, features), axis=1).astype(np.uint8)


# ---------------------------------------------------------------------------
# Serialization (text, version 1)
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def save_model(model: Ensemble, path) -> None:
    """Write the versioned text form; save -> load -> save is byte-identical."""
    lines = [MODEL_FORMAT]
    lines.append(f"kind: {model.kind}")
    lines.append(f"classes: {model.n_classes}")
    lines.append(f"learning_rate: {_fmt(model.learning_rate)}")
    lines.append("oob_error: none" if model.oob_error is None else f"oob_error: {_fmt(model.oob_error)}")
    if model.loss_history is None:
        lines.append("loss_history: none")
    else:
        lines.append("loss_history: " + " ".join(_fmt(v) for v in model.loss_history))
    cfg = model.config
    cfg_parts = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _fmt(v)
        cfg_parts.append(f"{f.name}={v}")
    lines.append("config: " + " ".join(cfg_parts))
    for key, val in model.meta.items():
        if " " in str(key) or " " in str(val):
            raise ValueError(f"meta entries cannot contain spaces: {key!r}={val!r}")
    lines.append("pipeline: " + " ".join(f"{k}={v}" for k, v in model.meta.items()))
    lines.append(f"columns: {model.d}")
    lines.extend(f"col {name}" for name in model.columns)
    lines.append(f"trees: {len(model.roots)}")
    total = model.feat.shape[0]
    for t in range(len(model.roots)):
        a = int(model.roots[t])
        b = int(model.roots[t + 1]) if t + 1 < len(model.roots) else total
        cls = int(model.tree_class[t]) if model.tree_class is not None else -1
        lines.append(f"tree {t} class {cls} nodes {b - a}")
        for j in range(a, b):
            if model.feat[j] >= 0:
                lines.append(
                    f"node {j - a} split f={int(model.feat[j])} thr={_fmt(model.thr[j])} "
                    f"left={int(model.left[j]) - a} right={int(model.right[j]) - a}"
                )
            elif model.kind == "rf":
                probs = " ".join(_fmt(v) for v in model.value[j])
                lines.append(f"node {j - a} leaf {probs}")
            else:
                lines.append(f"node {j - a} leaf {_fmt(model.value[j])}")
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _LineReader:
    def __init__(self, path: Path):
        self.path = path
        self.lines = path.read_text(encoding="utf-8").splitlines()
        self.i = 0

    def next(self, what: str) -> str:
        if self.i >= len(self.lines):
            raise ModelFormatError(f"{self.path}: truncated — expected {what} at line {self.i + 1}")
        line = self.lines[self.i]
        self.i += 1
        return line

    def expect_kv(self, key: str) -> str:
        line = self.next(f"'{key}:' line")
        prefix = key + ":"
        if not line.startswith(prefix):
            raise ModelFormatError(
                f"{self.path}:{self.i}: expected '{key}: ...', got {line[:60]!r}"
            )
        return line[len(prefix):].strip()

    def fail(self, msg: str):
        raise ModelFormatError(f"{self.path}:{self.i}: {msg}")


def _parse_config(text: str, reader: _LineReader) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for part in text.split():
        if "=" not in part:
            reader.fail(f"bad config entry {part!r}")
        k, v = part.split("=", 1)
        if k not in types:
            reader.fail(f"unknown config field {k!r}")
        t = types[k]
        if t == "bool":
            if v not in ("true", "false"):
                reader.fail(f"bad boolean {v!r} for config field {k}")
            kwargs[k] = v == "true"
        elif t == "int":
            kwargs[k] = int(v)
        else:
            kwargs[k] = float(v)
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        reader.fail(f"invalid config: {exc}")


def load_model(path) -> Ensemble:
    """Read a model written by save_model, validating the structure."""
    path = Path(path)
    r = _LineReader(path)
    try:
        return _load_model_lines(r, path)
    except ModelFormatError:
        raise
    except (ValueError, KeyError) as exc:
        # stray conversion failure: attribute it to the line being parsed
        raise ModelFormatError(f"{path}:{r.i}: bad value: {exc}") from None


def _load_model_lines(r: _LineReader, path: Path) -> Ensemble:
    head = r.next("format line")
    if head != MODEL_FORMAT:
        raise ModelFormatError(
            f"{path}:1: unsupported model format {head[:40]!r} (expected {MODEL_FORMAT!r})"
        )
    kind = r.expect_kv("kind")
    if kind not in ("rf", "gbt"):
        r.fail(f"unknown ensemble kind {kind!r}")
    nc = int(r.expect_kv("classes"))
    if nc < 2:
        r.fail(f"classes must be >= 2, got {nc}")
    learning_rate = float(r.expect_kv("learning_rate"))
    oob_text = r.expect_kv("oob_error")
    oob_error = None if oob_text == "none" else float(oob_text)
    loss_text = r.expect_kv("loss_history")
    loss_history = None if loss_text == "none" else np.array([float(v) for v in loss_text.split()])
    config = _parse_config(r.expect_kv("config"), r)
    meta_text = r.expect_kv("pipeline")
    meta = {}
    for part in meta_text.split():
        if "=" not in part:
            r.fail(f"bad pipeline entry {part!r}")
        k, v = part.split("=", 1)
        meta[k] = v
    d = int(r.expect_kv("columns"))
    columns = []
    for j in range(d):
        line = r.next(f"column {j}")
        if not line.startswith("col "):
            r.fail(f"expected 'col <name>', got {line[:60]!r}")
        columns.append(line[4:])
    n_trees = int(r.expect_kv("trees"))

    tree_list = []
    tree_class = np.empty(n_trees, dtype=np.int32)
    for t in range(n_trees):
        header = r.next(f"tree {t} header").split()
        if len(header) != 6 or header[0] != "tree" or header[2] != "class" or header[4] != "nodes":
            r.fail(f"bad tree header for tree {t}")
        if int(header[1]) != t:
            r.fail(f"tree header out of order: expected tree {t}, got {header[1]}")
        cls = int(header[3])
        nn = int(header[5])
        if nn < 1:
            r.fail(f"tree {t} has no nodes")
        if kind == "gbt":
            if not (0 <= cls < nc):
                r.fail(f"tree {t} class {cls} outside 0..{nc - 1}")
        elif cls != -1:
            r.fail(f"forest tree {t} must have class -1, got {cls}")
        tree_class[t] = cls
        feat = np.empty(nn, dtype=np.int32)
        thr = np.zeros(nn, dtype=np.float64)
        left = np.zeros(nn, dtype=np.int32)
        right = np.zeros(nn, dtype=np.int32)
        value = np.zeros((nn, nc) if kind == "rf" else nn, dtype=np.float64)
        for j in range(nn):
            toks = r.next(f"tree {t} node {j}").split()
            if len(toks) < 3 or toks[0] != "node" or int(toks[1]) != j:
                r.fail(f"expected 'node {j} ...' in tree {t}")
            if toks[2] == "split":
                if len(toks) != 7:
                    r.fail(f"bad split line in tree {t} node {j}")
                kv = dict(p.split("=", 1) for p in toks[3:])
                f = int(kv["f"])
                li = int(kv["left"])
                ri = int(kv["right"])
                if not (0 <= f < d):
                    r.fail(f"split feature {f} outside 0..{d - 1}")
                if not (0 < li < nn and 0 < ri < nn):
                    r.fail(f"child ids ({li}, {ri}) outside 1..{nn - 1}")
                feat[j] = f
                thr[j] = float(kv["thr"])
                left[j] = li
                right[j] = ri
            elif toks[2] == "leaf":
                feat[j] = -1
                vals = [float(v) for v in toks[3:]]
                if kind == "rf":
                    if len(vals) != nc:
                        r.fail(f"leaf in tree {t} node {j} has {len(vals)} values, expected {nc}")
                    value[j] = vals
                else:
                    if len(vals) != 1:
                        r.fail(f"leaf in tree {t} node {j} must have one value")
                    value[j] = vals[0]
            else:
                r.fail(f"unknown node type {toks[2]!r}")
        tree_list.append((feat, thr, left, right, value))
    tail = r.next("'end' sentinel")
    if tail != "end":
        raise ModelFormatError(f"{path}:{r.i}: expected 'end', got {tail[:40]!r}")

    feat, thr, left, right, value, roots = _flatten(tree_list, nc if kind == "rf" else 0)
    return Ensemble(
        kind=kind, n_classes=nc, columns=tuple(columns),
        feat=feat, thr=thr, left=left, right=right, value=value, roots=roots,
        tree_class=tree_class if kind == "gbt" else None,
        learning_rate=learning_rate, oob_error=oob_error,
        loss_history=loss_history, config=config, meta=meta,
    )
