"""The numba and numpy kernel paths must agree bit for bit."""

import numpy as np
import pytest

from attnmil import kernels
from attnmil.linalg import make_rng


def paths(nb_fn, np_fn):
    if kernels.HAVE_NUMBA:
        return [np_fn, nb_fn]
    return [np_fn]


class TestAccumulate:
    def make_inputs(self, seed=0, n=40, size=120):
        rng = make_rng(seed)
        xs = rng.integers(-10, size, n)
        ys = rng.integers(-10, size, n)
        scores = rng.random(n)
        return xs.astype(np.int64), ys.astype(np.int64), scores

    @pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")
    def test_paths_identical(self):
        xs, ys, scores = self.make_inputs()
        outputs = []
        for impl in (kernels._accumulate_np, kernels._accumulate_nb):
            ssum = np.zeros((120, 120))
            hits = np.zeros((120, 120), dtype=np.int64)
            impl(ssum, hits, xs, ys, 16, 16, scores)
            outputs.append((ssum, hits))
        np.testing.assert_array_equal(outputs[0][0], outputs[1][0])
        np.testing.assert_array_equal(outputs[0][1], outputs[1][1])

    def test_clipping_at_borders(self):
        ssum = np.zeros((10, 10))
        hits = np.zeros((10, 10), dtype=np.int64)
        kernels.accumulate_footprints(
            ssum, hits, np.array([-2]), np.array([-2]), 4, 4, np.array([1.0])
        )
        assert hits.sum() == 4  # only the 2x2 in-bounds corner


class TestSmoothHinge:
    @pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")
    def test_paths_identical(self):
        rng = make_rng(1)
        logits = rng.normal(scale=5, size=(200, 2))
        labels = rng.integers(0, 2, 200)
        a = kernels._smooth_hinge_np(logits, labels, 1.0, 1.0)
        b = kernels._smooth_hinge_nb(logits, labels.astype(np.int64), 1.0, 1.0)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_matches_scalar_loss(self):
        from attnmil.losses import smooth_svm_loss

        rng = make_rng(2)
        logits = rng.normal(size=(50, 2))
        labels = rng.integers(0, 2, 50)
        losses, grads = kernels.batch_smooth_hinge(logits, labels, 1.0, 1.0)
        for i in range(50):
            loss, grad = smooth_svm_loss(logits[i], int(labels[i]), 1.0, 1.0)
            assert losses[i] == pytest.approx(loss, abs=1e-12)
            np.testing.assert_allclose(grads[i], grad, atol=1e-12)


class TestAdamUpdate:
    @pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")
    def test_paths_identical(self):
        results = []
        for impl in (kernels._adam_np, kernels._adam_nb):
            theta_c = make_rng(3).normal(size=64)
            grad = make_rng(4).normal(size=64)
            m = np.zeros(64)
            v = np.zeros(64)
            for t in range(1, 4):
                impl(theta_c, grad, m, v, t, 1e-3, 0.9, 0.999, 1e-8, 1e-5)
            results.append(theta_c)
        np.testing.assert_array_equal(results[0], results[1])
