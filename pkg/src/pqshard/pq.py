"""Product-quantization codec: training, encoding, lookup tables, ADC.

Database vectors are stored as one byte per subspace (centroid index), and
query-time scoring sums per-subspace partial distances out of an m x M
lookup table. Distances are squared L2 throughout; tables and accumulation
are float32, matching the rest of the scan pipeline, while the brute-force
oracles cross-check in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, CorruptionError, FileFormatError, TrainingError
from .kmeans import DEFAULT_ITERS, lloyd

CODEBOOK_MAGIC = b"CPQ1"

# An encoded vector is a (m,) uint8 array; one centroid index per subspace.
PQCode = np.ndarray


@dataclass(frozen=True)
class PQCodebook:
    """Per-subspace centroid tables defining the product quantizer.

    centroids has shape (num_subspaces, num_centroids, subdim), float32.
    """

    centroids: np.ndarray

    def __post_init__(self):
        c = self.centroids
        if c.ndim != 3:
            raise ConfigurationError("codebook centroids must be 3-dimensional")
        if c.shape[1] > 256:
            raise ConfigurationError("more than 256 centroids per subspace cannot fit in one byte")
        if not np.isfinite(c).all():
            raise CorruptionError("codebook contains non-finite centroids")

    @property
    def num_subspaces(self) -> int:
        return self.centroids.shape[0]

    @property
    def num_centroids(self) -> int:
        return self.centroids.shape[1]

    @property
    def subdim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.num_subspaces * self.subdim


@dataclass(frozen=True)
class DistanceLUT:
    """Per-query partial-distance table for one probed IVF list."""

    table: np.ndarray  # (num_subspaces, num_centroids) float32
    query_id: int = 0
    list_id: int = 0

    def __post_init__(self):
        if self.table.ndim != 2:
            raise ConfigurationError("distance table must be 2-dimensional")
        if not np.isfinite(self.table).all() or (self.table < 0).any():
            raise CorruptionError("distance table entries must be finite and >= 0")


def _split_subvectors(codebook: PQCodebook, vectors: np.ndarray) -> np.ndarray:
    vectors = np.atleast_2d(np.asarray(vectors))
    if vectors.shape[1] != codebook.dim:
        raise ConfigurationError(
            f"vector dimensionality {vectors.shape[1]} does not match codebook dim {codebook.dim}"
        )
    n = vectors.shape[0]
    return vectors.reshape(n, codebook.num_subspaces, codebook.subdim)


def train_pq(
    vectors: np.ndarray,
    num_subspaces: int,
    num_centroids: int = 256,
    kmeans_iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> PQCodebook:
    """Train one k-means codebook per subspace on the given vectors.

    Deterministic for a fixed seed; each subspace trains from an independent
    child seed so subspaces could also be trained concurrently.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    n, dim = vectors.shape
    if num_subspaces < 1 or dim % num_subspaces != 0:
        raise ConfigurationError(
            f"dimensionality {dim} is not divisible by {num_subspaces} subspaces"
        )
    if not 1 <= num_centroids <= 256:
        raise ConfigurationError("centroids per subspace must be in [1, 256]")
    if n < num_centroids:
        raise TrainingError(f"need at least {num_centroids} training vectors, got {n}")
    subdim = dim // num_subspaces
    seeds = np.random.SeedSequence(seed).generate_state(num_subspaces)
    centroids = np.empty((num_subspaces, num_centroids, subdim), dtype=np.float32)
    for i in range(num_subspaces):
        sub = vectors[:, i * subdim : (i + 1) * subdim]
        c, _ = lloyd(sub, num_centroids, iters=kmeans_iters, seed=int(seeds[i]))
        centroids[i] = c.astype(np.float32)
    return PQCodebook(centroids)


def encode_batch(codebook: PQCodebook, vectors: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Encode rows of `vectors` to (n, m) uint8 codes.

    Each byte is the argmin centroid of its subspace under squared L2,
    computed directly in float64; ties break toward the lowest index.
    """
    subs = _split_subvectors(codebook, vectors).astype(np.float64)
    n = subs.shape[0]
    codes = np.empty((n, codebook.num_subspaces), dtype=np.uint8)
    cents = codebook.centroids.astype(np.float64)
    for i in range(codebook.num_subspaces):
        for start in range(0, n, chunk):
            block = subs[start : start + chunk, i]  # (b, subdim)
            d2 = ((block[:, None, :] - cents[i][None, :, :]) ** 2).sum(axis=2)
            codes[start : start + chunk, i] = np.argmin(d2, axis=1)
    return codes


def encode(codebook: PQCodebook, vector: np.ndarray) -> PQCode:
    """Encode a single vector to its m-byte code."""
    return encode_batch(codebook, np.asarray(vector)[None, :])[0]


def build_lut(codebook: PQCodebook, residual_query: np.ndarray, query_id: int = 0, list_id: int = 0) -> DistanceLUT:
    """Build the per-list partial-distance table for a residual query.

    table[i][j] = squared L2 distance between subvector i of the residual
    and centroid j of subspace i, as float32.
    """
    subs = _split_subvectors(codebook, np.asarray(residual_query, dtype=np.float32))[0]
    diff = codebook.centroids - subs[:, None, :]
    table = (diff * diff).sum(axis=2)
    return DistanceLUT(table=np.ascontiguousarray(table), query_id=query_id, list_id=list_id)


def _check_codes(width: int, codes: np.ndarray, m_expected: int) -> np.ndarray:
    codes = np.atleast_2d(np.asarray(codes))
    if codes.shape[1] != m_expected:
        raise ConfigurationError(
            f"code length {codes.shape[1]} does not match {m_expected} subspaces"
        )
    if codes.size and int(codes.max()) >= width:
        raise CorruptionError("code byte exceeds the number of centroids")
    return codes


def adc_batch(lut: DistanceLUT, codes: np.ndarray) -> np.ndarray:
    """Sum partial distances for each code row; float32 accumulation.

    Accumulates subspace by subspace so the result for a given code never
    depends on how the batch is sliced (required for shard-merge equality).
    """
    m, width = lut.table.shape
    codes = _check_codes(width, codes, m)
    acc = lut.table[0, codes[:, 0]].copy()
    for i in range(1, m):
        acc += lut.table[i, codes[:, i]]
    return acc


def adc_distance(lut: DistanceLUT, code: PQCode) -> float:
    """Asymmetric distance between the table's query and one coded vector."""
    return float(adc_batch(lut, np.asarray(code)[None, :])[0])


def reconstruct(codebook: PQCodebook, code: PQCode) -> np.ndarray:
    """Concatenate the selected centroid of each subspace."""
    code = _check_codes(codebook.num_centroids, code, codebook.num_subspaces)[0]
    return codebook.centroids[np.arange(codebook.num_subspaces), code].reshape(-1).copy()


def reconstruct_batch(codebook: PQCodebook, codes: np.ndarray) -> np.ndarray:
    codes = _check_codes(codebook.num_centroids, codes, codebook.num_subspaces)
    picked = codebook.centroids[np.arange(codebook.num_subspaces)[None, :], codes]
    return picked.reshape(codes.shape[0], codebook.dim)


def save_codebook(codebook: PQCodebook, path) -> None:
    """Write the codebook: magic, u32 D/m/M, then f32 centroids subspace-major."""
    header = struct.pack(
        "<4sIII",
        CODEBOOK_MAGIC,
        codebook.dim,
        codebook.num_subspaces,
        codebook.num_centroids,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())


def load_codebook(path) -> PQCodebook:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != CODEBOOK_MAGIC:
            raise FileFormatError(f"{path}: not a codebook file")
        _, dim, m, num_centroids = struct.unpack("<4sIII", header)
        if m == 0 or dim % m != 0:
            raise FileFormatError(f"{path}: inconsistent codebook header")
        subdim = dim // m
        raw = f.read(4 * m * num_centroids * subdim)
    if len(raw) != 4 * m * num_centroids * subdim:
        raise FileFormatError(f"{path}: truncated codebook")
    centroids = np.frombuffer(raw, dtype="<f4").reshape(m, num_centroids, subdim)
    return PQCodebook(centroids.astype(np.float32))
