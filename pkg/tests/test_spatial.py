"""kd-tree exactness against brute force, including tie order."""

import numpy as np
import pytest

import terraclass as tc


def brute_knn(xyz, q, k):
    """(id, distance) pairs sorted by (squared distance, id)."""
    d2 = ((xyz - q) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(xyz)), d2))[:k]
    return [(int(i), float(np.sqrt(d2[i]))) for i in order]


def brute_radius(xyz, q, r):
    d2 = ((xyz - q) ** 2).sum(axis=1)
    return np.flatnonzero(d2 <= r * r)


@pytest.fixture(scope="module")
def random_cloud():
    rng = np.random.default_rng(4)
    return tc.PointCloud(rng.uniform(-5, 5, (1000, 3)))


@pytest.fixture(scope="module")
def random_index(random_cloud):
    return tc.build_index(random_cloud)


class TestKnn:
    def test_matches_brute_force_exactly(self, random_cloud, random_index):
        rng = np.random.default_rng(5)
        queries = rng.uniform(-6, 6, (100, 3))
        for q in queries:
            got = tc.knn(random_index, q, 10)
            want = brute_knn(random_cloud.xyz, q, 10)
            assert [i for i, _ in got] == [i for i, _ in want]
            assert [d for _, d in got] == [d for _, d in want]

    def test_lattice_tie_order(self):
        # Integer lattice on the x axis: from x=0, the 3 nearest are 0,1,2
        # and equidistant candidates resolve by smaller id.
        xyz = np.zeros((10, 3))
        xyz[:, 0] = np.arange(10)
        index = tc.build_index(tc.PointCloud(xyz))
        ids = [i for i, _ in tc.knn(index, np.array([0.0, 0.0, 0.0]), 3)]
        assert ids == [0, 1, 2]
        # query centered between ids 4 and 5: tie broken by id
        ids = [i for i, _ in tc.knn(index, np.array([4.5, 0.0, 0.0]), 2)]
        assert ids == [4, 5]

    def test_duplicate_points_tie_by_id(self):
        xyz = np.zeros((6, 3))
        xyz[3:] = 1.0
        index = tc.build_index(tc.PointCloud(xyz))
        ids = [i for i, _ in tc.knn(index, np.array([0.0, 0.0, 0.0]), 5)]
        assert ids == [0, 1, 2, 3, 4]

    def test_query_point_is_its_own_neighbor(self, random_cloud, random_index):
        got = tc.knn(random_index, random_cloud.xyz[17], 1)
        assert got[0][0] == 17 and got[0][1] == 0.0

    def test_k_larger_than_cloud(self):
        xyz = np.arange(9, dtype=np.float64).reshape(3, 3)
        index = tc.build_index(tc.PointCloud(xyz))
        got = tc.knn(index, np.zeros(3), 10)
        assert len(got) == 3

    def test_point_object_as_query(self, random_cloud, random_index):
        p = random_cloud.point(3)
        got = tc.knn(random_index, p, 4)
        want = brute_knn(random_cloud.xyz, random_cloud.xyz[3], 4)
        assert [i for i, _ in got] == [i for i, _ in want]

    def test_invalid_k(self, random_index):
        with pytest.raises(ValueError):
            tc.knn(random_index, np.zeros(3), 0)


class TestKnnBatch:
    def test_matches_single_queries(self, random_cloud, random_index):
        rng = np.random.default_rng(6)
        queries = rng.uniform(-6, 6, (50, 3))
        ids, dists = tc.knn_batch(random_index, queries, 7)
        assert ids.shape == dists.shape == (50, 7)
        for j, q in enumerate(queries):
            want = brute_knn(random_cloud.xyz, q, 7)
            assert list(ids[j]) == [i for i, _ in want]
            assert list(dists[j]) == [d for _, d in want]

    def test_padding_when_k_exceeds_n(self):
        xyz = np.arange(9, dtype=np.float64).reshape(3, 3)
        index = tc.build_index(tc.PointCloud(xyz))
        ids, dists = tc.knn_batch(index, np.zeros((2, 3)), 5)
        assert (ids[:, 3:] == -1).all()
        assert np.isinf(dists[:, 3:]).all()
        assert (ids[:, :3] >= 0).all()


class TestRadius:
    def test_matches_brute_force_exactly(self, random_cloud, random_index):
        rng = np.random.default_rng(7)
        queries = rng.uniform(-6, 6, (100, 3))
        for q in queries:
            for r in (0.3, 0.9, 2.0):
                got = tc.radius_search(random_index, q, r)
                want = brute_radius(random_cloud.xyz, q, r)
                assert np.array_equal(got, want)

    def test_closed_ball_includes_boundary(self):
        xyz = np.zeros((3, 3))
        xyz[1, 0] = 1.0
        xyz[2, 0] = 1.0 + 1e-9
        index = tc.build_index(tc.PointCloud(xyz))
        got = tc.radius_search(index, np.zeros(3), 1.0)
        assert list(got) == [0, 1]

    def test_ids_ascending(self, random_cloud, random_index):
        got = tc.radius_search(random_index, random_cloud.xyz[0], 3.0)
        assert (np.diff(got) > 0).all()

    def test_empty_result(self, random_index):
        got = tc.radius_search(random_index, np.array([50.0, 50.0, 50.0]), 0.5)
        assert got.size == 0

    def test_invalid_radius(self, random_index):
        with pytest.raises(ValueError):
            tc.radius_search(random_index, np.zeros(3), -1.0)


class TestStructure:
    def test_every_point_in_exactly_one_leaf(self, random_cloud):
        index = tc.build_index(random_cloud)
        n = len(random_cloud)
        seen = np.zeros(n, dtype=int)
        # leaves are nodes with naxis == -1; their [nleft, nright) spans
        # index ids exactly once.
        for node in range(len(index.naxis)):
            if index.naxis[node] == -1:
                lo, hi = index.nleft[node], index.nright[node]
                assert 0 < hi - lo <= 16
                seen[index.ids[lo:hi]] += 1
        assert (seen == 1).all()

    def test_leaf_order_matches_point_copy(self, random_cloud):
        index = tc.build_index(random_cloud)
        assert np.array_equal(index.pts, random_cloud.xyz[index.ids])

    def test_split_planes_partition(self, random_cloud):
        index = tc.build_index(random_cloud)
        # Walk the tree: all points in a left subtree must lie <= split
        # (right >= split) on the split axis.
        def collect(node):
            if index.naxis[node] == -1:
                return index.pts[index.nleft[node]:index.nright[node]]
            left = collect(index.nleft[node])
            right = collect(index.nright[node])
            ax, val = index.naxis[node], index.nsplit[node]
            assert left[:, ax].max() <= val + 1e-12
            assert right[:, ax].min() >= val - 1e-12
            return np.vstack([left, right])

        collect(0)

    def test_tiny_clouds(self):
        for n in (1, 2, 16, 17):
            xyz = np.arange(3 * n, dtype=np.float64).reshape(n, 3)
            index = tc.build_index(tc.PointCloud(xyz))
            got = tc.knn(index, np.zeros(3), min(n, 3))
            assert [i for i, _ in got] == list(range(min(n, 3)))
