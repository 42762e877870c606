"""Brute-force references: exact float KNN, exact (untruncated) PQ search,
and the R@K / R1@K recall metrics.

exact_knn accumulates in float64 so it never argues with the engine over
float noise; exact_pq_search deliberately reuses the engine's float32
LUT/ADC primitives so that "exact selection" differs from the serving path
only in skipping queue truncation, making bit-for-bit equality checks
well-defined.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FileFormatError
from .ivf import IVFIndex, scan_index
from .kselect import _smallest
from .pq import build_lut, adc_batch

GROUND_TRUTH_MAGIC = b"CGT1"


@dataclass(frozen=True)
class GroundTruth:
    """Per query: the exact k nearest ids (ascending distance, id ties by id)."""

    ids: np.ndarray  # (num_queries, k) uint64
    distances: np.ndarray | None = None  # (num_queries, k) float64, not persisted

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def exact_knn(database: np.ndarray, queries: np.ndarray, k: int, chunk: int = 256) -> GroundTruth:
    """Exact squared-L2 top-k per query via full linear scan (float64)."""
    database = np.atleast_2d(np.asarray(database, dtype=np.float64))
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if database.shape[1] != queries.shape[1]:
        raise ConfigurationError("database and query dimensionality differ")
    n = database.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k must be in [1, {n}]")
    db2 = np.einsum("ij,ij->i", database, database)
    all_ids = np.arange(n, dtype=np.uint64)
    out_ids = np.empty((queries.shape[0], k), dtype=np.uint64)
    out_d = np.empty((queries.shape[0], k), dtype=np.float64)
    slack = min(n, k + 64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] + db2[None, :] - 2.0 * (q @ database.T)
        np.maximum(d2, 0.0, out=d2)
        for r in range(d2.shape[0]):
            row = d2[r]
            if slack < n:
                cand = np.argpartition(row, slack - 1)[:slack]
                # Partitioning ignores id tie-breaks; if ties at the window
                # boundary were split, fall back to considering every entry.
                if np.count_nonzero(row <= row[cand].max()) > slack:
                    cand = np.arange(n)
            else:
                cand = np.arange(n)
            order = np.lexsort((all_ids[cand], row[cand]))[:k]
            out_ids[start + r] = all_ids[cand][order]
            out_d[start + r] = row[cand][order]
    return GroundTruth(ids=out_ids, distances=out_d)


def recall_at_k(results: list[np.ndarray], truth: GroundTruth, k: int) -> float:
    """Mean over queries of |results ∩ true top-k| / k."""
    if len(results) != truth.ids.shape[0]:
        raise ConfigurationError("result count does not match ground truth")
    total = 0.0
    for res, true_ids in zip(results, truth.ids):
        res = np.asarray(res, dtype=np.uint64)
        if res.shape[0] > k:
            raise ConfigurationError(f"result list longer than k={k}")
        total += len(set(res.tolist()) & set(true_ids[:k].tolist())) / k
    return total / len(results)


def recall1_at_k(results: list[np.ndarray], truth: GroundTruth) -> float:
    """Fraction of queries whose single true nearest neighbor was returned."""
    if len(results) != truth.ids.shape[0]:
        raise ConfigurationError("result count does not match ground truth")
    hits = 0
    for res, true_ids in zip(results, truth.ids):
        hits += int(true_ids[0]) in set(np.asarray(res, dtype=np.uint64).tolist())
    return hits / len(results)


def exact_pq_search(
    index: IVFIndex, query: np.ndarray, nprobe: int, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """ADC-score every code in the probed lists and sort-and-truncate.

    This is the truncation-free reference the approximate selector is
    measured against; distances are the same float32 values the serving
    path produces.
    """
    query = np.asarray(query, dtype=np.float32)
    probe = scan_index(index.quantizer, query, nprobe)
    chunks_d = []
    chunks_i = []
    for list_id in probe:
        ids = index.list_ids[list_id]
        if len(ids) == 0:
            continue
        lut = build_lut(index.codebook, query - index.quantizer.centroids[list_id], list_id=int(list_id))
        chunks_d.append(adc_batch(lut, index.list_codes[list_id]))
        chunks_i.append(ids)
    if not chunks_d:
        return np.zeros(0, dtype=np.float32), np.zeros(0, dtype=np.uint64)
    return _smallest(np.concatenate(chunks_d), np.concatenate(chunks_i), k)


def save_ground_truth(truth: GroundTruth, path) -> None:
    """Write magic, u32 k, then each query's k u64 ids."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", GROUND_TRUTH_MAGIC, truth.k))
        f.write(np.ascontiguousarray(truth.ids, dtype="<u8").tobytes())


def load_ground_truth(path) -> GroundTruth:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8 or header[:4] != GROUND_TRUTH_MAGIC:
            raise FileFormatError(f"{path}: not a ground-truth file")
        (k,) = struct.unpack("<I", header[4:])
        raw = f.read()
    if k < 1 or len(raw) % (8 * k) != 0:
        raise FileFormatError(f"{path}: truncated ground-truth body")
    ids = np.frombuffer(raw, dtype="<u8").reshape(-1, k)
    return GroundTruth(ids=ids.astype(np.uint64))
