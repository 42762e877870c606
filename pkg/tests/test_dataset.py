"""Synthetic data generation and vector-file format tests."""

import numpy as np
import pytest

from pqshard.dataset import generate_vectors, read_vectors, write_vectors
from pqshard.errors import ConfigurationError, FileFormatError


def test_deterministic_bytes(tmp_path):
    a, b, c = tmp_path / "a.cvec", tmp_path / "b.cvec", tmp_path / "c.cvec"
    write_vectors(a, generate_vectors(500, 24, "clustered", seed=7))
    write_vectors(b, generate_vectors(500, 24, "clustered", seed=7))
    write_vectors(c, generate_vectors(500, 24, "clustered", seed=8))
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_empty_file_is_valid(tmp_path):
    path = tmp_path / "empty.cvec"
    write_vectors(path, generate_vectors(0, 8, "uniform", seed=0))
    loaded = read_vectors(path)
    assert loaded.shape == (0, 8)


def test_gaussian_moments_within_three_sigma():
    n, d = 20000, 16
    x = generate_vectors(n, d, "gaussian", seed=1).astype(np.float64)
    # mean estimator sd = 1/sqrt(n*d); variance estimator sd ~ sqrt(2/(n*d))
    assert abs(x.mean()) <= 3.0 / np.sqrt(n * d)
    assert abs(x.var() - 1.0) <= 3.0 * np.sqrt(2.0 / (n * d))


def test_uniform_range():
    x = generate_vectors(1000, 4, "uniform", seed=2)
    assert x.min() >= 0.0 and x.max() < 1.0


def test_clustered_is_actually_clumped():
    x = generate_vectors(400, 8, "clustered", seed=3, clusters=4).astype(np.float64)
    g = generate_vectors(400, 8, "gaussian", seed=3).astype(np.float64)

    def mean_nn_dist(data):
        d2 = ((data[:, None, :] - data[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min(axis=1)).mean())

    # 0.1-sigma noise around four centers: neighbors sit an order of
    # magnitude closer than in an unclustered gaussian cloud
    assert mean_nn_dist(x) < 0.5 * mean_nn_dist(g)


def test_roundtrip(tmp_path):
    path = tmp_path / "v.cvec"
    x = generate_vectors(77, 5, "gaussian", seed=4)
    write_vectors(path, x)
    np.testing.assert_array_equal(read_vectors(path), x)
    raw = path.read_bytes()
    assert raw[:4] == b"CVEC"
    assert int.from_bytes(raw[4:8], "little") == 5


def test_reject_garbage(tmp_path):
    path = tmp_path / "bad.cvec"
    path.write_bytes(b"ABCD" + b"\x00" * 16)
    with pytest.raises(FileFormatError):
        read_vectors(path)
    trunc = tmp_path / "trunc.cvec"
    trunc.write_bytes(b"CVEC" + (3).to_bytes(4, "little") + b"\x00" * 10)
    with pytest.raises(FileFormatError):
        read_vectors(trunc)


def test_unknown_distribution():
    with pytest.raises(ConfigurationError):
        generate_vectors(10, 4, "zipf", seed=0)
