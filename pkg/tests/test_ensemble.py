"""In-repo random forest and gradient-boosted trees."""

import numpy as np
import pytest

import terraclass as tc
from terraclass.ensemble import MODEL_FORMAT, ModelFormatError


# ---------------------------------------------------------------------------
# Exhaustive single-tree oracle (pure Python, independent of the kernels)
# ---------------------------------------------------------------------------


class OracleTree:
    """Depth-first exact-split classification tree.

    Split quality is the integer-count purity score sum_c(n_c^2)/n of the
    two children; a node splits only when the best candidate strictly beats
    its own purity, ties resolved by (smaller feature id, smaller threshold).
    """

    def __init__(self, X, y, n_classes, max_depth, min_leaf=1):
        self.X = np.asarray(X, dtype=np.float32)
        self.y = np.asarray(y)
        self.nc = n_classes
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.nodes = []
        self._grow(np.arange(len(y)), 0)

    def _leaf(self, rows):
        counts = np.bincount(self.y[rows], minlength=self.nc)
        self.nodes.append(("leaf", counts / rows.size))
        return len(self.nodes) - 1

    def _grow(self, rows, depth):
        counts = np.bincount(self.y[rows], minlength=self.nc).astype(np.int64)
        n = rows.size
        parent = int((counts * counts).sum()) / n
        if (counts == n).any() or depth >= self.max_depth or n < 2 * self.min_leaf:
            return self._leaf(rows)

        best = (-np.inf, -1, 0.0)
        for f in range(self.X.shape[1]):
            vals = self.X[rows, f].astype(np.float64)
            order = np.argsort(vals, kind="stable")
            sv, sy = vals[order], self.y[rows[order]]
            lcounts = np.zeros(self.nc, dtype=np.int64)
            for i in range(n - 1):
                lcounts[sy[i]] += 1
                if sv[i + 1] > sv[i]:
                    nl, nr = i + 1, n - i - 1
                    if nl < self.min_leaf or nr < self.min_leaf:
                        continue
                    rcounts = counts - lcounts
                    score = int((lcounts**2).sum()) / nl + int((rcounts**2).sum()) / nr
                    thr = (sv[i] + sv[i + 1]) / 2.0
                    s0, f0, t0 = best
                    if score > s0 or (score == s0 and (f < f0 or (f == f0 and thr < t0))):
                        best = (score, f, thr)

        score, f, thr = best
        if f < 0 or not score > parent:
            return self._leaf(rows)
        go_left = self.X[rows, f].astype(np.float64) < thr
        lrows, rrows = rows[go_left], rows[~go_left]
        if lrows.size == 0 or rrows.size == 0:
            return self._leaf(rows)
        me = len(self.nodes)
        self.nodes.append(None)
        lid = self._grow(lrows, depth + 1)
        rid = self._grow(rrows, depth + 1)
        self.nodes[me] = ("split", f, thr, lid, rid)
        return me

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float32)
        out = np.empty((len(X), self.nc))
        for i, x in enumerate(X):
            node = self.nodes[0] if self.nodes[0] is not None else None
            j = 0
            while self.nodes[j][0] == "split":
                _, f, thr, lid, rid = self.nodes[j]
                j = lid if float(x[f]) < thr else rid
            out[i] = self.nodes[j][1]
        return out


def single_tree_config(**kw):
    base = dict(n_trees=1, rf_bootstrap=False, rf_feature_fraction=1.0, seed=0)
    base.update(kw)
    return tc.TrainConfig(**base)


class TestRfOracle:
    @pytest.mark.parametrize("seed,n,d,nc", [
        (0, 40, 3, 2), (1, 100, 5, 3), (2, 60, 2, 4), (3, 25, 8, 3),
    ])
    def test_single_tree_equals_exhaustive_search(self, seed, n, d, nc):
        rng = np.random.default_rng(seed)
        X = rng.normal(0.0, 1.0, (n, d)).astype(np.float32)
        # labels loosely tied to the features so trees have real structure
        y = ((X[:, 0] * 2 + X[:, 1] + rng.normal(0, 0.5, n)) // 1.0).astype(int)
        y = np.clip(y % nc, 0, nc - 1).astype(np.uint8)
        if np.unique(y).size < 2:
            pytest.skip("degenerate labels")
        model = tc.train_rf(X, y, single_tree_config(rf_max_depth=6), n_classes=nc)
        oracle = OracleTree(X, y, nc, max_depth=6)
        probes = rng.normal(0.0, 1.2, (300, d)).astype(np.float32)
        for Q in (X, probes):
            assert np.array_equal(tc.predict_proba(model, Q), oracle.predict_proba(Q))

    def test_duplicate_feature_values(self):
        # quantized features force midpoint collisions and the unsplittable
        # guard; oracle and kernel must still agree
        rng = np.random.default_rng(4)
        X = (rng.integers(0, 4, (80, 3))).astype(np.float32)
        y = ((X[:, 0] + X[:, 1]) % 3).astype(np.uint8)
        model = tc.train_rf(X, y, single_tree_config(rf_max_depth=8), n_classes=3)
        oracle = OracleTree(X, y, 3, max_depth=8)
        assert np.array_equal(tc.predict_proba(model, X), oracle.predict_proba(X))

    def test_min_samples_leaf(self):
        rng = np.random.default_rng(5)
        X = rng.normal(0.0, 1.0, (50, 4)).astype(np.float32)
        y = (X[:, 0] > 0).astype(np.uint8)
        cfg = single_tree_config(rf_max_depth=10, min_samples_leaf=5)
        model = tc.train_rf(X, y, cfg)
        oracle = OracleTree(X, y, 2, max_depth=10, min_leaf=5)
        assert np.array_equal(tc.predict_proba(model, X), oracle.predict_proba(X))


class TestRandomForest:
    def test_blob_accuracy(self, blobs):
        Xtr, ytr, Xte, yte = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=30, seed=0))
        acc = float(np.mean(tc.predict(model, Xte) == yte))
        assert acc >= 0.98

    def test_oob_error_present_and_sane(self, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=20, seed=1))
        assert model.oob_error is not None
        assert 0.0 <= model.oob_error <= 0.1

    def test_no_bootstrap_means_no_oob(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=3, rf_bootstrap=False, seed=0)
        model = tc.train_rf(Xtr, ytr, cfg)
        assert model.oob_error is None

    def test_deterministic_same_seed(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=8, seed=3)
        a = tc.train_rf(Xtr, ytr, cfg)
        b = tc.train_rf(Xtr, ytr, cfg)
        for field in ("feat", "thr", "left", "right", "value", "roots"):
            assert np.array_equal(getattr(a, field), getattr(b, field)), field

    def test_seed_changes_forest(self, blobs):
        Xtr, ytr, _, _ = blobs
        a = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=4, seed=0))
        b = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=4, seed=1))
        assert a.thr.shape != b.thr.shape or not np.array_equal(a.thr, b.thr)

    def test_thread_count_invariant(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=6, seed=2)
        a = tc.train_rf(Xtr, ytr, cfg, threads=1)
        b = tc.train_rf(Xtr, ytr, cfg, threads=4)
        assert np.array_equal(a.thr, b.thr)
        assert a.oob_error == b.oob_error

    def test_proba_rows_sum_to_one(self, blobs):
        Xtr, ytr, Xte, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=5, seed=0))
        P = tc.predict_proba(model, Xte)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert (P >= 0).all()

    def test_predict_is_argmax(self, blobs):
        Xtr, ytr, Xte, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=5, seed=0))
        P = tc.predict_proba(model, Xte)
        assert np.array_equal(tc.predict(model, Xte), P.argmax(axis=1).astype(np.uint8))


class TestGbt:
    def test_blob_accuracy(self, blobs):
        Xtr, ytr, Xte, yte = blobs
        model = tc.train_gbt(Xtr, ytr, tc.TrainConfig(n_trees=30, seed=0))
        acc = float(np.mean(tc.predict(model, Xte) == yte))
        assert acc >= 0.98

    def test_loss_monotone_with_full_bagging(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=40, gbt_bagging_fraction=1.0, seed=0)
        model = tc.train_gbt(Xtr, ytr, cfg)
        assert model.loss_history.shape == (41,)
        assert model.loss_history[0] == pytest.approx(np.log(3.0), abs=1e-9)
        assert (np.diff(model.loss_history) <= 1e-12).all()

    def test_zero_iterations_predicts_uniform(self, blobs):
        Xtr, ytr, Xte, _ = blobs
        model = tc.train_gbt(Xtr, ytr, tc.TrainConfig(n_trees=0, seed=0))
        P = tc.predict_proba(model, Xte)
        assert np.allclose(P, 1.0 / 3.0)
        assert model.loss_history.shape == (1,)

    def test_deterministic_and_thread_invariant(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=10, seed=4)
        a = tc.train_gbt(Xtr, ytr, cfg, threads=1)
        b = tc.train_gbt(Xtr, ytr, cfg, threads=4)
        for field in ("feat", "thr", "left", "right", "value", "roots", "tree_class"):
            assert np.array_equal(getattr(a, field), getattr(b, field)), field
        assert np.array_equal(a.loss_history, b.loss_history)

    def test_leaf_cap_respected(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=5, gbt_max_leaves=4, seed=0)
        model = tc.train_gbt(Xtr, ytr, cfg)
        for t in range(model.n_trees):
            a = model.roots[t]
            b = model.roots[t + 1] if t + 1 < len(model.roots) else model.feat.size
            leaves = int((model.feat[a:b] == -1).sum())
            assert leaves <= 4

    def test_learning_rate_recorded(self, blobs):
        Xtr, ytr, _, _ = blobs
        cfg = tc.TrainConfig(n_trees=2, gbt_learning_rate=0.35, seed=0)
        model = tc.train_gbt(Xtr, ytr, cfg)
        assert model.learning_rate == 0.35


class TestValidation:
    def test_config_rejects_bad_values(self):
        for kw in (dict(n_trees=-1), dict(rf_max_depth=0),
                   dict(rf_feature_fraction=0.0), dict(rf_feature_fraction=1.5),
                   dict(gbt_max_leaves=1), dict(gbt_learning_rate=0.0),
                   dict(gbt_bagging_fraction=0.0), dict(min_samples_leaf=0)):
            with pytest.raises(ValueError):
                tc.TrainConfig(**kw)

    def test_rejects_unlabeled_rows(self):
        X = np.zeros((4, 2), dtype=np.float32)
        y = np.array([0, 1, 0, 255], dtype=np.uint8)
        with pytest.raises(ValueError, match="255"):
            tc.train_rf(X, y, tc.TrainConfig(n_trees=1))

    def test_rejects_single_class(self):
        X = np.zeros((4, 2), dtype=np.float32)
        y = np.zeros(4, dtype=np.uint8)
        with pytest.raises(ValueError, match="two distinct"):
            tc.train_gbt(X, y)

    def test_rejects_length_mismatch(self):
        X = np.zeros((4, 2), dtype=np.float32)
        with pytest.raises(ValueError):
            tc.train_rf(X, np.zeros(3, dtype=np.uint8))

    def test_rejects_float_labels(self):
        X = np.zeros((4, 2), dtype=np.float32)
        with pytest.raises(ValueError, match="integer"):
            tc.train_rf(X, np.zeros(4, dtype=np.float64))

    def test_predict_rejects_wrong_width(self, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=2, seed=0))
        with pytest.raises(ValueError):
            tc.predict(model, np.zeros((5, 7), dtype=np.float32))


@pytest.fixture(scope="module")
def named_model(blobs):
    Xtr, ytr, _, _ = blobs
    fm = tc.FeatureMatrix(Xtr, ("fx", "fy", "fz"), "g")
    return tc.train_rf(fm, ytr, tc.TrainConfig(n_trees=4, seed=0))


class TestColumnAlignment:
    def test_permuted_columns_realign(self, named_model, blobs):
        _, _, Xte, _ = blobs
        direct = tc.predict(named_model, tc.FeatureMatrix(Xte, ("fx", "fy", "fz"), "g"))
        permuted = tc.FeatureMatrix(
            np.ascontiguousarray(Xte[:, [2, 0, 1]]), ("fz", "fx", "fy"), "g")
        assert np.array_equal(tc.predict(named_model, permuted), direct)

    def test_missing_column_is_named(self, named_model, blobs):
        _, _, Xte, _ = blobs
        bad = tc.FeatureMatrix(Xte[:, :2].copy(), ("fx", "qq"), "g")
        with pytest.raises(ValueError, match="fy|fz"):
            tc.predict(named_model, bad)


class TestModelFile:
    def test_save_load_save_is_byte_identical(self, tmp_path, blobs):
        Xtr, ytr, _, _ = blobs
        for kind, train in (("rf", tc.train_rf), ("gbt", tc.train_gbt)):
            model = train(Xtr, ytr, tc.TrainConfig(n_trees=4, seed=0),
                          meta={"gsd": "0.051", "k": "10"})
            a = tmp_path / f"{kind}_a.txt"
            b = tmp_path / f"{kind}_b.txt"
            tc.save_model(model, a)
            loaded = tc.load_model(a)
            tc.save_model(loaded, b)
            assert a.read_bytes() == b.read_bytes()
            assert loaded.kind == kind
            assert loaded.meta == model.meta
            assert loaded.config == model.config
            assert np.array_equal(tc.predict(loaded, Xtr), tc.predict(model, Xtr))

    def test_header_line_checked(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("some-other-format v9\n")
        with pytest.raises(ModelFormatError, match=MODEL_FORMAT.split()[0]):
            tc.load_model(path)

    def test_corruptions_rejected_with_line_numbers(self, tmp_path, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=2, seed=0))
        path = tmp_path / "m.txt"
        tc.save_model(model, path)
        lines = path.read_text().splitlines()

        def corrupt(mutate):
            bad = list(lines)
            mutate(bad)
            (tmp_path / "bad.txt").write_text("\n".join(bad) + "\n")
            with pytest.raises(ModelFormatError):
                tc.load_model(tmp_path / "bad.txt")

        corrupt(lambda ls: ls.__setitem__(1, "kind: svm"))
        corrupt(lambda ls: ls.pop())                      # lost 'end'
        corrupt(lambda ls: ls.__setitem__(2, "classes: 1"))
        corrupt(lambda ls: ls.__delitem__(9))             # lost a column line
        # out-of-range child pointer on the first split node
        def bad_child(ls):
            for i, line in enumerate(ls):
                if " split " in line:
                    ls[i] = line.replace("left=1", "left=99999")
                    return
        corrupt(bad_child)

    def test_truncated_file(self, tmp_path, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_gbt(Xtr, ytr, tc.TrainConfig(n_trees=2, seed=0))
        path = tmp_path / "m.txt"
        tc.save_model(model, path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelFormatError):
            tc.load_model(path)

    def test_error_names_offending_line(self, tmp_path, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=1, seed=0))
        path = tmp_path / "m.txt"
        tc.save_model(model, path)
        lines = path.read_text().splitlines()
        lines[3] = "learning_rate: fast"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ModelFormatError, match=r":4: "):
            tc.load_model(path)
