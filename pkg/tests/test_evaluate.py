"""Split-plane search, balanced sampling, confusion matrices, ablation I/O."""

import warnings

import numpy as np
import pytest

import terraclass as tc
from terraclass.evaluate import (
    AblationReport,
    AblationRow,
    format_ablation_report,
    format_confusion,
    parse_ablation_report,
)


def brute_split_plane(cloud, n_angles, n_offsets):
    """Re-evaluate every candidate plane; same tie rule, independent loops."""
    mask = cloud.labels != tc.UNLABELED
    xyz = cloud.xyz[mask]
    labels = cloud.labels[mask]
    classes = np.unique(labels)
    best = None
    for k in range(n_angles):
        theta = k * np.pi / n_angles
        d = np.cos(theta) * xyz[:, 0] + np.sin(theta) * xyz[:, 1]
        offsets = np.linspace(d.min(), d.max(), n_offsets)
        for off in offsets:
            worst = 0.0
            for c in classes:
                frac = float(np.mean(d[labels == c] >= off))
                worst = max(worst, abs(frac - 0.5))
            if best is None or worst < best[0]:
                best = (worst, theta, off)
    return best


class TestFindSplitPlane:
    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(0)
        xyz = rng.uniform(-4, 4, (400, 3))
        labels = (xyz[:, 0] + xyz[:, 1] + rng.normal(0, 1, 400) > 0).astype(np.uint8)
        cloud = tc.PointCloud(xyz, labels=labels)
        plane = tc.find_split_plane(cloud, n_angles=8, n_offsets=50)
        obj, theta, off = brute_split_plane(cloud, 8, 50)
        assert plane.objective == obj
        assert plane.theta == theta
        assert plane.offset == off

    def test_mirror_symmetric_scene(self):
        # two classes mirror-symmetric about x=5: a perfect split exists
        rng = np.random.default_rng(1)
        half = rng.uniform(0, 1, (300, 3)) * [4.0, 8.0, 1.0]
        mirrored = half * [-1.0, 1.0, 1.0] + [10.0, 0.0, 0.0]
        xyz = np.vstack([half, mirrored])
        labels = np.tile(rng.integers(0, 2, 300).astype(np.uint8), 2)
        cloud = tc.PointCloud(xyz, labels=labels)
        plane = tc.find_split_plane(cloud, n_angles=36, n_offsets=101)
        assert plane.objective == 0.0
        assert plane.theta == 0.0
        assert 4.0 < plane.offset < 6.0

    def test_single_class_splits_at_median(self):
        # 100 collinear points, integer offsets: a perfect half split exists
        xyz = np.zeros((100, 3))
        xyz[:, 0] = np.arange(100.0)
        cloud = tc.PointCloud(xyz, labels=np.zeros(100, dtype=np.uint8))
        plane = tc.find_split_plane(cloud, n_angles=4, n_offsets=100)
        assert plane.objective == 0.0
        assert plane.side(xyz).sum() == 50

    def test_side_uses_half_open_rule(self):
        xyz = np.zeros((3, 3))
        xyz[:, 0] = [0.0, 1.0, 2.0]
        plane = tc.SplitPlane(theta=0.0, offset=1.0, objective=0.0)
        assert list(plane.side(xyz)) == [False, True, True]

    def test_unlabeled_points_are_ignored(self):
        rng = np.random.default_rng(2)
        xyz = rng.uniform(0, 10, (200, 3))
        labels = (xyz[:, 0] > 5).astype(np.uint8)
        cloud_a = tc.PointCloud(xyz, labels=labels)
        # add unlabeled garbage far away; the plane must not move
        extra = np.vstack([xyz, rng.uniform(50, 60, (50, 3))])
        lab_b = np.concatenate([labels, np.full(50, tc.UNLABELED, np.uint8)])
        cloud_b = tc.PointCloud(extra, labels=lab_b)
        pa = tc.find_split_plane(cloud_a, 8, 32)
        pb = tc.find_split_plane(cloud_b, 8, 32)
        assert pa.objective == pb.objective

    def test_translation_leaves_objective_unchanged(self):
        rng = np.random.default_rng(3)
        xyz = rng.uniform(-3, 3, (150, 3))
        labels = rng.integers(0, 3, 150).astype(np.uint8)
        a = tc.find_split_plane(tc.PointCloud(xyz, labels=labels), 12, 40)
        moved = tc.PointCloud(xyz + np.array([100.0, -40.0, 7.0]), labels=labels)
        b = tc.find_split_plane(moved, 12, 40)
        assert a.objective == b.objective
        assert a.theta == b.theta

    def test_rejects_unlabeled_cloud(self):
        cloud = tc.PointCloud(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            tc.find_split_plane(cloud)
        all_unlabeled = tc.PointCloud(
            np.zeros((5, 3)), labels=np.full(5, tc.UNLABELED, np.uint8))
        with pytest.raises(ValueError):
            tc.find_split_plane(all_unlabeled)


class TestBalancedSample:
    def test_caps_each_class(self, demo_cloud):
        rows = tc.balanced_sample(demo_cloud, per_class=100, seed=0)
        labels = demo_cloud.labels[rows]
        counts = np.bincount(labels, minlength=6)
        assert (counts == 100).all()

    def test_takes_everything_when_scarce(self, demo_cloud):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows = tc.balanced_sample(demo_cloud, per_class=10**6, seed=0)
        labels = demo_cloud.labels[rows]
        mask = demo_cloud.labels != tc.UNLABELED
        assert rows.size == int(mask.sum())
        assert np.array_equal(np.bincount(labels, minlength=6),
                              np.bincount(demo_cloud.labels[mask], minlength=6))

    def test_warns_on_partial_classes(self, demo_cloud):
        with pytest.warns(UserWarning):
            tc.balanced_sample(demo_cloud, per_class=10**6, seed=0)

    def test_deterministic_and_sorted(self, demo_cloud):
        a = tc.balanced_sample(demo_cloud, per_class=50, seed=3)
        b = tc.balanced_sample(demo_cloud, per_class=50, seed=3)
        c = tc.balanced_sample(demo_cloud, per_class=50, seed=4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        # per-class blocks in ascending class order, each sorted
        labels = demo_cloud.labels[a]
        assert (np.diff(labels) >= 0).all()
        for cls in range(6):
            block = a[labels == cls]
            assert (np.diff(block) > 0).all()

    def test_excludes_unlabeled(self):
        xyz = np.zeros((6, 3))
        lab = np.array([0, 0, 1, 1, 255, 255], dtype=np.uint8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # both classes saturate
            rows = tc.balanced_sample(
                tc.PointCloud(xyz, labels=lab), per_class=10, seed=0)
        assert set(rows) == {0, 1, 2, 3}

    def test_rejects_bad_per_class(self, demo_cloud):
        with pytest.raises(ValueError):
            tc.balanced_sample(demo_cloud, per_class=0)


class TestConfusionMatrix:
    def test_counts_match_double_loop(self):
        rng = np.random.default_rng(4)
        true = rng.integers(0, 4, 500).astype(np.uint8)
        pred = rng.integers(0, 4, 500).astype(np.uint8)
        cm = tc.ConfusionMatrix.from_labels(true, pred, 4)
        want = np.zeros((4, 4), dtype=np.int64)
        for t, p in zip(true, pred):
            want[t, p] += 1
        assert np.array_equal(cm.counts, want)

    def test_error_metrics(self):
        true = np.array([0, 0, 1, 1, 2], dtype=np.uint8)
        pred = np.array([0, 1, 1, 1, 0], dtype=np.uint8)
        cm = tc.ConfusionMatrix.from_labels(true, pred, 3)
        assert cm.overall_error == pytest.approx(2 / 5)
        assert cm.class_errors()[0] == pytest.approx(1 / 2)
        assert cm.class_errors()[1] == pytest.approx(0.0)
        assert cm.class_errors()[2] == pytest.approx(1.0)

    def test_absent_class_reports_zero_error(self):
        true = np.zeros(4, dtype=np.uint8)
        pred = np.zeros(4, dtype=np.uint8)
        cm = tc.ConfusionMatrix.from_labels(true, pred, 3)
        assert cm.class_errors()[1] == 0.0
        assert cm.overall_error == 0.0

    def test_fractions_sum_to_one(self):
        rng = np.random.default_rng(5)
        true = rng.integers(0, 6, 300).astype(np.uint8)
        pred = rng.integers(0, 6, 300).astype(np.uint8)
        cm = tc.ConfusionMatrix.from_labels(true, pred, 6)
        assert cm.fractions.sum() == pytest.approx(1.0)

    def test_format_is_readable(self):
        true = np.array([0, 1, 2], dtype=np.uint8)
        cm = tc.ConfusionMatrix.from_labels(true, true, 6)
        text = format_confusion(cm)
        assert "ground" in text and "overall error" in text


class TestEvaluate:
    def test_masks_unlabeled(self, blobs):
        Xtr, ytr, Xte, yte = blobs
        model = tc.train_rf(Xtr, ytr, tc.TrainConfig(n_trees=5, seed=0))
        y_mixed = yte.copy()
        y_mixed[::3] = tc.UNLABELED
        cm_masked = tc.evaluate(model, Xte, y_mixed, n_classes=3)
        keep = y_mixed != tc.UNLABELED
        cm_direct = tc.evaluate(model, Xte[keep], yte[keep], n_classes=3)
        assert np.array_equal(cm_masked.counts, cm_direct.counts)


class TestAblationReport:
    def test_round_trip(self):
        rows = [
            AblationRow("g", "rf", 0.21, 1.5, (0.1, 0.2, 0.3, 0.0, 1.0, 0.05)),
            AblationRow("g+cn:0.6", "gbt", 0.07321, 2.25, (0.0,) * 6),
        ]
        report = AblationReport(("alpha", "beta"), "gamma", tuple(rows))
        text = format_ablation_report(report)
        back = parse_ablation_report(text)
        assert back == report

    def test_float_values_survive_exactly(self):
        row = AblationRow("all", "gbt", 1 / 3, 0.1 + 0.2, tuple(
            v / 7 for v in range(6)))
        report = AblationReport(("a",), "b", (row,))
        back = parse_ablation_report(format_ablation_report(report))
        assert back.rows[0].overall_error == row.overall_error
        assert back.rows[0].wall_time_s == row.wall_time_s
        assert back.rows[0].class_errors == row.class_errors

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_ablation_report("not a report\n")
