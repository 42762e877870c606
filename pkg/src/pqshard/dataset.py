"""Synthetic vector datasets and the raw float32 vector file format.

Vector files ("CVEC") carry a 4-byte magic, a u32 dimensionality, and a
flat little-endian float32 stream; the vector count is implied by the file
size. Vector ids are the row positions at build time.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigurationError, FileFormatError

VECTOR_MAGIC = b"CVEC"

DISTRIBUTIONS = ("uniform", "gaussian", "clustered")


def generate_vectors(
    count: int,
    dim: int,
    distribution: str = "gaussian",
    seed: int = 0,
    clusters: int = 64,
) -> np.ndarray:
    """Seeded synthetic vectors: uniform [0,1), unit gaussian, or gaussian
    cluster centers with 0.1-sigma noise."""
    if count < 0 or dim < 1:
        raise ConfigurationError("count must be >= 0 and dim >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if distribution == "uniform":
        data = rng.random((count, dim), dtype=np.float32)
    elif distribution == "gaussian":
        data = rng.standard_normal((count, dim), dtype=np.float32)
    elif distribution == "clustered":
        if clusters < 1:
            raise ConfigurationError("clusters must be >= 1")
        centers = rng.standard_normal((clusters, dim)).astype(np.float32)
        labels = rng.integers(clusters, size=count)
        noise = rng.standard_normal((count, dim), dtype=np.float32)
        data = centers[labels] + 0.1 * noise
    else:
        raise ConfigurationError(f"unknown distribution {distribution!r}")
    return np.ascontiguousarray(data, dtype=np.float32)


def write_vectors(path, vectors: np.ndarray) -> None:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", VECTOR_MAGIC, vectors.shape[1]))
        f.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())


def read_vectors(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8 or header[:4] != VECTOR_MAGIC:
            raise FileFormatError(f"{path}: not a vector file")
        (dim,) = struct.unpack("<I", header[4:])
        raw = f.read()
    if dim < 1 or len(raw) % (4 * dim) != 0:
        raise FileFormatError(f"{path}: truncated vector body")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, dim).astype(np.float32)
