"""Trainer-level invariants: determinism, WCSS monotonicity, reseeding."""

import numpy as np
import pytest

from pqshard.errors import TrainingError
from pqshard.kmeans import lloyd


def test_single_cluster_is_the_mean():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 6))
    centroids, _ = lloyd(x, 1, iters=3, seed=0)
    np.testing.assert_allclose(centroids[0], x.mean(axis=0), rtol=1e-12)


def test_k_equals_n_zero_error():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((12, 4))
    centroids, history = lloyd(x, 12, iters=5, seed=0)
    assert history[-1] == pytest.approx(0.0, abs=1e-18)
    got = sorted(map(tuple, np.round(centroids, 9).tolist()))
    want = sorted(map(tuple, np.round(x, 9).tolist()))
    assert got == want


def test_wcss_non_increasing():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((600, 8))
    _, history = lloyd(x, 10, iters=15, seed=3)
    for prev, cur in zip(history, history[1:]):
        assert cur <= prev * (1 + 1e-9) + 1e-12


def test_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((200, 5))
    a, _ = lloyd(x, 7, iters=8, seed=11)
    b, _ = lloyd(x, 7, iters=8, seed=11)
    np.testing.assert_array_equal(a, b)


def test_too_few_points():
    with pytest.raises(TrainingError):
        lloyd(np.zeros((3, 2)), 5)


def test_reseeding_fills_every_cluster():
    # A pathological set: huge duplicate mass plus a few outliers tends to
    # starve clusters without the reseed-from-farthest rule.
    rng = np.random.default_rng(4)
    x = np.concatenate([np.zeros((50, 3)), rng.standard_normal((14, 3))])
    centroids, _ = lloyd(x, 8, iters=6, seed=5)
    d2 = ((x[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    assert set(labels.tolist()) == set(range(8))
