import numpy as np
import pytest
from hypothesis import given, strategies as st

from braggtomo.metrics import EdgeMap, edge_map, f1_score, relative_ls_error


class TestEdgeMap:
    def test_constant_image_empty(self):
        assert edge_map(np.full((8, 8), 3.0)).mask.sum() == 0

    def test_vertical_step(self):
        img = np.zeros((10, 10))
        img[:, 5:] = 1.0
        mask = edge_map(img, 0.2).mask
        # all marked pixels hug the step between columns 4 and 5
        cols = np.nonzero(mask.any(axis=0))[0]
        assert set(cols) == {4, 5}
        assert mask[:, 4].all() and mask[:, 5].all()

    def test_two_band_enumeration(self):
        # 10x10 with two one-column bands; boundary pixels carry the only gradient
        img = np.zeros((10, 10))
        img[:, 2] = 1.0
        img[:, 7] = 1.0
        mask = edge_map(img, 0.2).mask
        expected_cols = {1, 3, 6, 8}  # spike columns themselves have symmetric (zero) gradient
        assert set(np.nonzero(mask.any(axis=0))[0]) == expected_cols

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        img = rng.random((12, 14))
        m1 = edge_map(img, 0.3).mask
        m2 = edge_map(37.5 * img, 0.3).mask
        np.testing.assert_array_equal(m1, m2)

    def test_tau_validation(self):
        with pytest.raises(ValueError):
            edge_map(np.ones((4, 4)), 0.0)
        with pytest.raises(ValueError):
            edge_map(np.ones((4, 4)), 1.0)


class TestF1:
    def test_identical(self):
        m = EdgeMap(np.eye(5, dtype=np.uint8), 0.2)
        assert f1_score(m, m) == 1.0

    def test_disjoint(self):
        a = EdgeMap(np.eye(5, dtype=np.uint8), 0.2)
        b = EdgeMap(np.eye(5, k=1, dtype=np.uint8), 0.2)
        assert f1_score(a, b) == 0.0

    def test_balanced_half(self):
        # TP = FP = FN = 2 -> 0.5
        gt = np.zeros((2, 4), dtype=np.uint8)
        rc = np.zeros((2, 4), dtype=np.uint8)
        gt[0, :2] = 1
        gt[1, :2] = 1
        rc[0, 1:3] = 1
        rc[1, 1:3] = 1
        assert f1_score(EdgeMap(gt, 0.2), EdgeMap(rc, 0.2)) == pytest.approx(0.5)

    def test_both_empty(self):
        z = EdgeMap(np.zeros((3, 3), dtype=np.uint8), 0.2)
        assert f1_score(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            f1_score(EdgeMap(np.zeros((2, 2), dtype=np.uint8), 0.2), EdgeMap(np.zeros((3, 3), dtype=np.uint8), 0.2))

    @given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
    def test_symmetry(self, da, db):
        a = np.array([(da >> i) & 1 for i in range(16)], dtype=np.uint8).reshape(4, 4)
        b = np.array([(db >> i) & 1 for i in range(16)], dtype=np.uint8).reshape(4, 4)
        ea, eb = EdgeMap(a, 0.2), EdgeMap(b, 0.2)
        assert f1_score(ea, eb) == f1_score(eb, ea)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        a = (rng.random((4, 4)) > 0.5).astype(np.uint8)
        b = (rng.random((4, 4)) > 0.5).astype(np.uint8)
        perm = rng.permutation(16)
        ap = a.ravel()[perm].reshape(4, 4)
        bp = b.ravel()[perm].reshape(4, 4)
        assert f1_score(EdgeMap(a, 0.2), EdgeMap(b, 0.2)) == pytest.approx(
            f1_score(EdgeMap(ap, 0.2), EdgeMap(bp, 0.2))
        )


class TestRelativeLsError:
    def test_identical(self):
        assert relative_ls_error([3.0, 4.0], [3.0, 4.0]) == 0.0

    def test_double(self):
        assert relative_ls_error([3.0, 4.0], [6.0, 8.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert relative_ls_error([3.0, 4.0], [3.0, 0.0]) == pytest.approx(0.8)

    def test_zero_norm(self):
        with pytest.raises(ValueError):
            relative_ls_error([0.0, 0.0], [1.0, 0.0])
