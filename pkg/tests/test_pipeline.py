"""End-to-end plumbing: config, extraction batching, train/predict runs."""

import dataclasses

import numpy as np
import pytest

import terraclass as tc
from terraclass.pipeline import resolve_threads


def quick_config(**kw):
    """Small but real pipeline settings for 1.3k-point test clouds."""
    base = dict(
        per_class=60,
        train=tc.TrainConfig(n_trees=6, seed=0),
        threads=1,
        seed=0,
    )
    base.update(kw)
    return tc.PipelineConfig(**base)


class TestPipelineConfig:
    @pytest.mark.parametrize("feature_set,width", [
        ("g", 135),
        ("all", 147),
        ("g+cn:0.6", 138),
        ("cp", 3),
    ])
    def test_column_widths(self, feature_set, width):
        cfg = tc.PipelineConfig(feature_set=feature_set)
        assert len(cfg.spec().column_names(cfg.n_levels)) == width

    @pytest.mark.parametrize("kw", [
        dict(gsd=0.0),
        dict(gsd=-1.0),
        dict(k=0),
        dict(n_levels=0),
        dict(classifier="svm"),
        dict(feature_set="bogus"),
        dict(feature_set="g+cn:0"),     # nonpositive radius
        dict(per_class=0),
        dict(threads=0),
        dict(seed=-1),
        dict(batch_size=0),
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            tc.PipelineConfig(**kw)

    def test_describe_lists_every_field(self):
        cfg = tc.PipelineConfig()
        text = cfg.describe()
        for f in dataclasses.fields(tc.PipelineConfig):
            assert f"{f.name}=" in text

    def test_with_feature_set(self):
        cfg = tc.PipelineConfig().with_feature_set("g")
        assert cfg.feature_set == "g"
        assert cfg.gsd == tc.PipelineConfig().gsd


class TestResolveThreads:
    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv("TERRACLASS_THREADS", "2")
        assert resolve_threads(3) == 3

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("TERRACLASS_THREADS", "2")
        assert resolve_threads(None) == 2

    def test_default_is_cpu_count(self, monkeypatch):
        monkeypatch.delenv("TERRACLASS_THREADS", raising=False)
        import os
        assert resolve_threads(None) == (os.cpu_count() or 1)

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("TERRACLASS_THREADS", "many")
        with pytest.raises(ValueError):
            resolve_threads(None)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            resolve_threads(0)


class TestExtractFeatures:
    def test_full_extraction_shape(self, small_cloud):
        cfg = quick_config(feature_set="all")
        fm = tc.extract_features(small_cloud, cfg)
        assert fm.data.shape == (small_cloud.n, 147)
        assert fm.data.dtype == np.float32
        assert np.isfinite(fm.data).all()
        assert fm.columns == tuple(cfg.spec().column_names(cfg.n_levels))

    def test_row_subset_matches_full(self, small_cloud):
        cfg = quick_config(feature_set="all")
        full = tc.extract_features(small_cloud, cfg)
        rows = np.array([0, 7, 500, 1299, 3], dtype=np.int64)
        sub = tc.extract_features(small_cloud, cfg, rows=rows)
        assert np.array_equal(sub.data, full.data[rows])
        assert sub.columns == full.columns

    def test_batch_size_does_not_change_values(self, small_cloud):
        a = tc.extract_features(small_cloud, quick_config(batch_size=37))
        b = tc.extract_features(small_cloud, quick_config(batch_size=10**6))
        assert np.array_equal(a.data, b.data)

    def test_geometry_only_set_works_without_color(self, small_cloud):
        bare = tc.PointCloud(small_cloud.xyz)
        fm = tc.extract_features(bare, quick_config(feature_set="g"))
        assert fm.data.shape == (bare.n, 135)

    def test_color_set_requires_color(self, small_cloud):
        bare = tc.PointCloud(small_cloud.xyz)
        for fs in ("all", "cp", "g+cn:0.6"):
            with pytest.raises(ValueError, match="color"):
                tc.extract_features(bare, quick_config(feature_set=fs))

    def test_rejects_bad_rows(self, small_cloud):
        cfg = quick_config(feature_set="cp")
        with pytest.raises(ValueError):
            tc.extract_features(small_cloud, cfg, rows=np.array([[0, 1]]))
        with pytest.raises(ValueError):
            tc.extract_features(small_cloud, cfg, rows=np.array([small_cloud.n]))


class TestRunTrain:
    def test_returns_model_and_timing(self, small_cloud):
        model, timing = tc.run_train(small_cloud, quick_config(feature_set="g+cn:0.6"))
        assert model.kind == "gbt"
        assert model.d == 138
        assert timing.n_points == small_cloud.n
        assert timing.n_rows == model_rows_expected(small_cloud, 60)
        assert timing.total_s == timing.features_s + timing.train_s
        assert timing.threads == 1

    def test_deterministic_model_files(self, small_cloud, tmp_path):
        cfg = quick_config(feature_set="g+cn:0.6", classifier="rf")
        m1, _ = tc.run_train(small_cloud, cfg)
        m2, _ = tc.run_train([small_cloud], cfg)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        tc.save_model(m1, p1)
        tc.save_model(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_config_seed_overrides_train_seed(self, small_cloud):
        cfg = quick_config(seed=7, train=tc.TrainConfig(n_trees=4, seed=999))
        model, _ = tc.run_train(small_cloud, cfg)
        assert model.config.seed == 7

    def test_seed_changes_model(self, small_cloud, tmp_path):
        m1, _ = tc.run_train(small_cloud, quick_config(seed=0))
        m2, _ = tc.run_train(small_cloud, quick_config(seed=1))
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        tc.save_model(m1, p1)
        tc.save_model(m2, p2)
        assert p1.read_bytes() != p2.read_bytes()

    def test_rejects_empty_cloud_list(self):
        with pytest.raises(ValueError):
            tc.run_train([], quick_config())

    def test_rf_classifier_selected(self, small_cloud):
        model, _ = tc.run_train(small_cloud, quick_config(classifier="rf"))
        assert model.kind == "rf"
        assert model.oob_error is not None


class TestConfigFromModel:
    def test_round_trip(self, small_cloud):
        cfg = quick_config(
            gsd=0.06, k=8, n_levels=5, radii=(0.4, 0.9),
            feature_set="g+cn:0.9", classifier="rf",
        )
        model, _ = tc.run_train(small_cloud, cfg)
        back = tc.config_from_model(model)
        assert back.gsd == 0.06
        assert back.k == 8
        assert back.n_levels == 5
        assert back.radii == (0.4, 0.9)
        assert back.feature_set == "g+cn:0.9"
        assert back.classifier == "rf"
        assert back.train == model.config

    def test_missing_metadata_rejected(self, blobs):
        Xtr, ytr, _, _ = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=2, seed=0))
        with pytest.raises(ValueError, match="metadata"):
            tc.config_from_model(model)


class TestRunPredict:
    def test_labels_whole_cloud(self, small_cloud):
        model, _ = tc.run_train(small_cloud, quick_config())
        labels, timing = tc.run_predict(small_cloud, model, quick_config())
        assert labels.shape == (small_cloud.n,)
        assert labels.dtype == np.uint8
        assert set(np.unique(labels)) <= set(range(6))
        assert timing.n_points == small_cloud.n
        # training scene itself: the model should beat guessing by a wide margin
        err = float(np.mean(labels != small_cloud.labels))
        assert err < 0.5

    def test_batch_size_invariant(self, small_cloud):
        model, _ = tc.run_train(small_cloud, quick_config())
        a, _ = tc.run_predict(small_cloud, model, quick_config(batch_size=101))
        b, _ = tc.run_predict(small_cloud, model, quick_config(batch_size=10**6))
        assert np.array_equal(a, b)

    def test_feature_layout_mismatch_rejected(self, small_cloud):
        model, _ = tc.run_train(small_cloud, quick_config(feature_set="g"))
        clipped = dataclasses.replace(
            model, meta=dict(model.meta, n_levels="5"))
        with pytest.raises(ValueError, match="columns"):
            tc.run_predict(small_cloud, clipped, quick_config())


def model_rows_expected(cloud, per_class):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return tc.balanced_sample(cloud, per_class, seed=0).size
