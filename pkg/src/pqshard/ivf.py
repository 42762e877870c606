"""Inverted-file index: coarse quantizer training, list assignment, probing.

Database vectors are partitioned into nlist disjoint lists by a k-means
coarse quantizer; each entry stores (vector_id, PQ code) where the code
quantizes the residual against the list centroid. Query time picks the
nprobe closest lists, so only a small slice of the database is scanned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FileFormatError, IngestionError, TrainingError
from .kmeans import DEFAULT_ITERS, lloyd
from .pq import PQCodebook, encode_batch

INDEX_MAGIC = b"CIVF"

# Ordered array of list ids to scan, nearest centroid first.
ProbeSet = np.ndarray


@dataclass(frozen=True)
class CoarseQuantizer:
    centroids: np.ndarray  # (nlist, dim) float32

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ConfigurationError("quantizer needs at least one centroid")
        if not np.isfinite(self.centroids).all():
            raise ConfigurationError("quantizer centroids must be finite")

    @property
    def nlist(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class IVFIndex:
    quantizer: CoarseQuantizer
    codebook: PQCodebook
    list_ids: list[np.ndarray]  # per list: (n_i,) uint64, ascending
    list_codes: list[np.ndarray]  # per list: (n_i, m) uint8

    @property
    def nlist(self) -> int:
        return self.quantizer.nlist

    @property
    def size(self) -> int:
        return sum(len(ids) for ids in self.list_ids)


def train_ivf(
    vectors: np.ndarray,
    nlist: int,
    kmeans_iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> CoarseQuantizer:
    """K-means the training vectors into nlist coarse centroids."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    if nlist < 1:
        raise ConfigurationError("nlist must be >= 1")
    if vectors.shape[0] < nlist:
        raise TrainingError(f"need at least {nlist} training vectors, got {vectors.shape[0]}")
    centroids, _ = lloyd(vectors, nlist, iters=kmeans_iters, seed=seed)
    return CoarseQuantizer(centroids.astype(np.float32))


def _centroid_dists(quantizer: CoarseQuantizer, vectors: np.ndarray) -> np.ndarray:
    vectors = np.atleast_2d(np.asarray(vectors))
    if vectors.shape[1] != quantizer.dim:
        raise ConfigurationError(
            f"vector dimensionality {vectors.shape[1]} does not match quantizer dim {quantizer.dim}"
        )
    x = vectors.astype(np.float64)
    c = quantizer.centroids.astype(np.float64)
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        + np.einsum("ij,ij->i", c, c)[None, :]
        - 2.0 * (x @ c.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def assign_batch(quantizer: CoarseQuantizer, vectors: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Nearest-centroid list id per row; ties break to the lowest index."""
    vectors = np.atleast_2d(np.asarray(vectors))
    out = np.empty(vectors.shape[0], dtype=np.int64)
    for start in range(0, vectors.shape[0], chunk):
        d2 = _centroid_dists(quantizer, vectors[start : start + chunk])
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def assign(quantizer: CoarseQuantizer, vector: np.ndarray) -> int:
    return int(assign_batch(quantizer, np.asarray(vector)[None, :])[0])


def build_index(
    ids: np.ndarray,
    vectors: np.ndarray,
    quantizer: CoarseQuantizer,
    codebook: PQCodebook,
) -> IVFIndex:
    """Assign every vector to its list and store residual PQ codes.

    Lists are kept in ascending vector_id order, which makes iteration (and
    therefore sharding) deterministic.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    if ids.shape[0] != vectors.shape[0]:
        raise IngestionError("ids and vectors must have the same length")
    if len(np.unique(ids)) != len(ids):
        raise IngestionError("duplicate vector ids in input")
    labels = assign_batch(quantizer, vectors) if len(ids) else np.zeros(0, dtype=np.int64)
    residuals = vectors - quantizer.centroids[labels] if len(ids) else vectors
    codes = (
        encode_batch(codebook, residuals)
        if len(ids)
        else np.zeros((0, codebook.num_subspaces), dtype=np.uint8)
    )
    list_ids: list[np.ndarray] = []
    list_codes: list[np.ndarray] = []
    for l in range(quantizer.nlist):
        members = np.flatnonzero(labels == l)
        order = members[np.argsort(ids[members])]
        list_ids.append(ids[order].copy())
        list_codes.append(codes[order].copy())
    return IVFIndex(quantizer=quantizer, codebook=codebook, list_ids=list_ids, list_codes=list_codes)


def scan_index(quantizer: CoarseQuantizer, query: np.ndarray, nprobe: int) -> ProbeSet:
    """Return the min(nprobe, nlist) list ids closest to the query, ascending
    by centroid distance with lowest-index tie-break."""
    if nprobe < 1:
        raise ConfigurationError("nprobe must be >= 1")
    d2 = _centroid_dists(quantizer, np.asarray(query)[None, :])[0]
    order = np.argsort(d2, kind="stable")
    return order[: min(nprobe, quantizer.nlist)].astype(np.uint32)


def save_index(index: IVFIndex, path) -> None:
    """Write magic, u32 nlist, u32 D, f32 centroids, then per list a u64
    count followed by (u64 id, m-byte code) records."""
    m = index.codebook.num_subspaces
    rec = np.dtype([("id", "<u8"), ("code", "u1", (m,))])
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", INDEX_MAGIC, index.nlist, index.quantizer.dim))
        f.write(np.ascontiguousarray(index.quantizer.centroids, dtype="<f4").tobytes())
        for ids, codes in zip(index.list_ids, index.list_codes):
            f.write(struct.pack("<Q", len(ids)))
            block = np.empty(len(ids), dtype=rec)
            block["id"] = ids
            block["code"] = codes
            f.write(block.tobytes())


def _read_quantizer_header(f, path) -> CoarseQuantizer:
    header = f.read(12)
    if len(header) != 12 or header[:4] != INDEX_MAGIC:
        raise FileFormatError(f"{path}: not an index file")
    _, nlist, dim = struct.unpack("<4sII", header)
    raw = f.read(4 * nlist * dim)
    if len(raw) != 4 * nlist * dim:
        raise FileFormatError(f"{path}: truncated centroid block")
    centroids = np.frombuffer(raw, dtype="<f4").reshape(nlist, dim)
    return CoarseQuantizer(centroids.astype(np.float32))


def load_quantizer(path) -> CoarseQuantizer:
    """Read only the coarse centroids; clients probing the index need no lists."""
    with open(path, "rb") as f:
        return _read_quantizer_header(f, path)


def load_index(path, codebook: PQCodebook) -> IVFIndex:
    m = codebook.num_subspaces
    rec = np.dtype([("id", "<u8"), ("code", "u1", (m,))])
    with open(path, "rb") as f:
        quantizer = _read_quantizer_header(f, path)
        list_ids: list[np.ndarray] = []
        list_codes: list[np.ndarray] = []
        for _ in range(quantizer.nlist):
            count_raw = f.read(8)
            if len(count_raw) != 8:
                raise FileFormatError(f"{path}: truncated list header")
            (count,) = struct.unpack("<Q", count_raw)
            raw = f.read(count * rec.itemsize)
            if len(raw) != count * rec.itemsize:
                raise FileFormatError(f"{path}: truncated list body")
            block = np.frombuffer(raw, dtype=rec)
            list_ids.append(block["id"].astype(np.uint64))
            list_codes.append(np.ascontiguousarray(block["code"]))
    return IVFIndex(quantizer=quantizer, codebook=codebook, list_ids=list_ids, list_codes=list_codes)
