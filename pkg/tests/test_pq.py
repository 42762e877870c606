"""Product-quantizer codec tests: frozen hand-derived cases, brute-force
oracles, and round-trip invariants."""

import numpy as np
import pytest

from pqshard import pq
from pqshard.errors import ConfigurationError, CorruptionError, TrainingError

# Four points whose subspace halves form two clean 2-means clusters; the
# optimal centroids per subspace are {(0,0), (1,1)} (verified below by
# exhaustive enumeration of all assignments).
TINY_VECTORS = np.array(
    [[0, 0, 0, 0], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 1, 1]], dtype=np.float32
)


def tiny_codebook() -> pq.PQCodebook:
    """D=4, m=2, M=2 codebook with centroid 0=(0,0), 1=(1,1) per subspace."""
    return pq.PQCodebook(
        np.array([[[0, 0], [1, 1]], [[0, 0], [1, 1]]], dtype=np.float32)
    )


def brute_force_two_means(points: np.ndarray) -> float:
    """Best within-cluster sum of squares over all 2-partitions."""
    n = len(points)
    best = np.inf
    for mask in range(1, 2**n - 1):
        sel = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        cost = 0.0
        for side in (points[sel], points[~sel]):
            cost += ((side - side.mean(axis=0)) ** 2).sum()
        best = min(best, cost)
    return best


class TestTrainPQ:
    def test_shapes_d128_m16(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((300, 128)).astype(np.float32)
        cb = pq.train_pq(x, num_subspaces=16, num_centroids=256, kmeans_iters=2, seed=1)
        assert cb.centroids.shape == (16, 256, 8)
        assert cb.subdim == 8
        assert cb.dim == 128

    def test_exact_fixed_point_when_training_set_is_the_centroids(self):
        # M distinct points per subspace: k-means must land exactly on them.
        rng = np.random.default_rng(3)
        base = rng.standard_normal((4, 6)).astype(np.float32)
        cb = pq.train_pq(base, num_subspaces=2, num_centroids=4, kmeans_iters=10, seed=0)
        for i in range(2):
            got = sorted(map(tuple, cb.centroids[i].tolist()))
            want = sorted(map(tuple, base[:, i * 3 : (i + 1) * 3].tolist()))
            assert got == pytest.approx(want)

    def test_tiny_two_means_solution(self):
        cb = pq.train_pq(TINY_VECTORS, num_subspaces=2, num_centroids=2, kmeans_iters=10, seed=7)
        for i in range(2):
            got = sorted(map(tuple, cb.centroids[i].tolist()))
            assert got == [(0.0, 0.0), (1.0, 1.0)]
            # and that solution is the brute-force optimum (cost 0)
            sub = TINY_VECTORS[:, 2 * i : 2 * i + 2]
            assert brute_force_two_means(sub) == pytest.approx(0.0)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((500, 8)).astype(np.float32)
        a = pq.train_pq(x, 2, 16, kmeans_iters=5, seed=42)
        b = pq.train_pq(x, 2, 16, kmeans_iters=5, seed=42)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_errors(self):
        x = np.zeros((3, 4), dtype=np.float32)
        with pytest.raises(TrainingError):
            pq.train_pq(x, num_subspaces=2, num_centroids=8)
        with pytest.raises(ConfigurationError):
            pq.train_pq(np.zeros((10, 5), dtype=np.float32), num_subspaces=2, num_centroids=4)


class TestEncode:
    def test_exact_centroid_hit(self):
        rng = np.random.default_rng(11)
        cb = pq.PQCodebook(rng.standard_normal((3, 5, 4)).astype(np.float32))
        for j in range(5):
            vec = cb.centroids[:, j, :].reshape(-1)
            np.testing.assert_array_equal(pq.encode(cb, vec), [j, j, j])

    def test_single_centroid_always_zero(self):
        rng = np.random.default_rng(12)
        cb = pq.PQCodebook(rng.standard_normal((4, 1, 2)).astype(np.float32))
        np.testing.assert_array_equal(pq.encode(cb, rng.standard_normal(8)), [0, 0, 0, 0])

    def test_tiny_case(self):
        code = pq.encode(tiny_codebook(), np.array([0, 0, 1, 1], dtype=np.float32))
        np.testing.assert_array_equal(code, [0, 1])

    def test_matches_brute_force_per_subspace(self):
        rng = np.random.default_rng(13)
        cb = pq.PQCodebook(rng.standard_normal((4, 9, 3)).astype(np.float32))
        vectors = rng.standard_normal((50, 12)).astype(np.float32)
        codes = pq.encode_batch(cb, vectors)
        for v, code in zip(vectors, codes):
            for i in range(4):
                sub = v[3 * i : 3 * i + 3].astype(np.float64)
                dists = [((sub - c) ** 2).sum() for c in cb.centroids[i].astype(np.float64)]
                assert code[i] == int(np.argmin(dists))

    def test_optimality_no_strictly_better_centroid(self):
        rng = np.random.default_rng(14)
        cb = pq.PQCodebook(rng.standard_normal((2, 7, 2)).astype(np.float32))
        vectors = rng.standard_normal((40, 4)).astype(np.float32)
        codes = pq.encode_batch(cb, vectors)
        for v, code in zip(vectors, codes):
            for i in range(2):
                sub = v[2 * i : 2 * i + 2].astype(np.float64)
                chosen = ((sub - cb.centroids[i, code[i]].astype(np.float64)) ** 2).sum()
                for j in range(7):
                    other = ((sub - cb.centroids[i, j].astype(np.float64)) ** 2).sum()
                    assert other >= chosen

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            pq.encode(tiny_codebook(), np.zeros(5, dtype=np.float32))


class TestLUTAndADC:
    def test_all_zeros(self):
        cb = pq.PQCodebook(np.zeros((2, 3, 2), dtype=np.float32))
        lut = pq.build_lut(cb, np.zeros(4, dtype=np.float32))
        np.testing.assert_array_equal(lut.table, np.zeros((2, 3), dtype=np.float32))

    def test_tiny_table_values(self):
        lut = pq.build_lut(tiny_codebook(), np.array([0, 0, 1, 1], dtype=np.float32))
        np.testing.assert_array_equal(lut.table, [[0.0, 2.0], [2.0, 0.0]])

    def test_bitwise_matches_direct_loop(self):
        rng = np.random.default_rng(21)
        cb = pq.PQCodebook(rng.standard_normal((5, 11, 7)).astype(np.float32))
        residual = rng.standard_normal(35).astype(np.float32)
        lut = pq.build_lut(cb, residual)
        for i in range(5):
            sub = residual[7 * i : 7 * i + 7]
            for j in range(11):
                diff = cb.centroids[i, j] - sub
                expected = (diff * diff).sum()  # same f32 reduction order
                assert lut.table[i, j] == expected

    def test_adc_tiny_values(self):
        lut = pq.build_lut(tiny_codebook(), np.array([0, 0, 1, 1], dtype=np.float32))
        assert pq.adc_distance(lut, np.array([0, 1], dtype=np.uint8)) == 0.0
        assert pq.adc_distance(lut, np.array([1, 0], dtype=np.uint8)) == 4.0

    def test_adc_zero_for_exact_reconstruction(self):
        cb = tiny_codebook()
        code = np.array([1, 0], dtype=np.uint8)
        residual = pq.reconstruct(cb, code)
        lut = pq.build_lut(cb, residual)
        assert pq.adc_distance(lut, code) == 0.0

    def test_adc_matches_reconstruction_oracle(self):
        rng = np.random.default_rng(22)
        cb = pq.PQCodebook(rng.standard_normal((8, 16, 4)).astype(np.float32))
        for _ in range(200):
            residual = rng.standard_normal(32).astype(np.float32)
            code = rng.integers(16, size=8).astype(np.uint8)
            got = pq.adc_distance(pq.build_lut(cb, residual), code)
            recon = pq.reconstruct(cb, code).astype(np.float64)
            want = ((residual.astype(np.float64) - recon) ** 2).sum()
            assert got == pytest.approx(want, rel=1e-5)

    def test_adc_batch_slicing_invariance(self):
        # The serving path relies on per-code distances being independent of
        # how the batch is chunked across channels and nodes.
        rng = np.random.default_rng(23)
        cb = pq.PQCodebook(rng.standard_normal((16, 32, 8)).astype(np.float32))
        lut = pq.build_lut(cb, rng.standard_normal(128).astype(np.float32))
        codes = rng.integers(32, size=(500, 16)).astype(np.uint8)
        full = pq.adc_batch(lut, codes)
        pieces = np.concatenate(
            [pq.adc_batch(lut, codes[s]) for s in (slice(0, 1), slice(1, 17), slice(17, 500))]
        )
        np.testing.assert_array_equal(full, pieces)
        for row in (0, 13, 499):
            assert pq.adc_distance(lut, codes[row]) == full[row]

    def test_corrupt_code_rejected(self):
        lut = pq.build_lut(tiny_codebook(), np.zeros(4, dtype=np.float32))
        with pytest.raises(CorruptionError):
            pq.adc_distance(lut, np.array([0, 2], dtype=np.uint8))


class TestReconstruct:
    def test_constant_code(self):
        rng = np.random.default_rng(31)
        cb = pq.PQCodebook(rng.standard_normal((3, 4, 2)).astype(np.float32))
        got = pq.reconstruct(cb, np.array([2, 2, 2], dtype=np.uint8))
        np.testing.assert_array_equal(got, cb.centroids[:, 2, :].reshape(-1))

    def test_tiny_case(self):
        got = pq.reconstruct(tiny_codebook(), np.array([0, 1], dtype=np.uint8))
        np.testing.assert_array_equal(got, [0, 0, 1, 1])

    def test_encode_reconstruct_roundtrip(self):
        rng = np.random.default_rng(32)
        cb = pq.PQCodebook(rng.standard_normal((4, 8, 3)).astype(np.float32))
        for _ in range(100):
            code = rng.integers(8, size=4).astype(np.uint8)
            np.testing.assert_array_equal(pq.encode(cb, pq.reconstruct(cb, code)), code)

    def test_corrupt_code_rejected(self):
        with pytest.raises(CorruptionError):
            pq.reconstruct(tiny_codebook(), np.array([0, 5], dtype=np.uint8))


class TestCodebookFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(41)
        cb = pq.PQCodebook(rng.standard_normal((6, 32, 5)).astype(np.float32))
        path = tmp_path / "cb.cpq"
        pq.save_codebook(cb, path)
        loaded = pq.load_codebook(path)
        np.testing.assert_array_equal(loaded.centroids, cb.centroids)

    def test_header_layout(self, tmp_path):
        cb = tiny_codebook()
        path = tmp_path / "cb.cpq"
        pq.save_codebook(cb, path)
        raw = path.read_bytes()
        assert raw[:4] == b"CPQ1"
        assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [4, 2, 2]
        assert len(raw) == 16 + 4 * 2 * 2 * 2

    def test_reject_garbage(self, tmp_path):
        path = tmp_path / "bad.cpq"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(pq.FileFormatError):
            pq.load_codebook(path)
