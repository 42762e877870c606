"""Cluster coordination: broadcast queries to every memory node, merge the
per-node top-k answers into the global top-k, and map winning vector ids
to their stored token payloads.

Node failures are fail-stop: a query either gets answers from every node
or raises naming the nodes that did not answer. Returning partial results
would silently break the recall guarantees of sharded search.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .client import NodeClient
from .errors import ConfigurationError, CorruptionError, FileFormatError, NodeUnavailableError
from .kselect import _smallest
from .memnode import NodeResult

PAYLOAD_MAGIC = b"CPAY"


@dataclass(frozen=True)
class ClusterConfig:
    nodes: tuple[str, ...]
    k: int = 100
    nprobe: int = 32
    timeout_ms: float = 5000.0
    payload_store: str | None = None
    listen: str = "127.0.0.1:0"

    def __post_init__(self):
        if not self.nodes:
            raise ConfigurationError("cluster needs at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigurationError("node addresses must be unique")


def load_cluster_config(path) -> ClusterConfig:
    with open(path) as f:
        raw = json.load(f)
    try:
        return ClusterConfig(
            nodes=tuple(raw["nodes"]),
            k=int(raw.get("k", 100)),
            nprobe=int(raw.get("nprobe", 32)),
            timeout_ms=float(raw.get("timeout_ms", 5000.0)),
            payload_store=raw.get("payload_store"),
            listen=raw.get("listen", "127.0.0.1:0"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: invalid cluster config: {exc}") from exc


def merge_results(node_results: list[NodeResult], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Global top-k across per-node answers as (distances, ids), ordered by
    (distance, id).

    Each input must already be ascending. A vector id appearing in two
    different nodes' answers means the shard partition is broken.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    ids = [np.asarray(r.ids, dtype=np.uint64) for r in node_results]
    dists = [np.asarray(r.distances, dtype=np.float32) for r in node_results]
    if sum(a.size for a in ids) == 0:
        return np.zeros(0, dtype=np.float32), np.zeros(0, dtype=np.uint64)
    all_ids = np.concatenate(ids)
    if np.unique(all_ids).size != all_ids.size:
        raise CorruptionError("duplicate vector id across node results")
    return _smallest(np.concatenate(dists), all_ids, k)


class PayloadStore:
    """Append-only id -> payload log with an in-memory offset map."""

    def __init__(self, path, create: bool = False):
        self.path = path
        self._lock = threading.Lock()
        self._offsets: dict[int, tuple[int, int]] = {}
        mode = "w+b" if create else "r+b"
        self._file = open(path, mode)
        if create:
            self._file.write(PAYLOAD_MAGIC)
            self._file.flush()
        else:
            self._scan()

    def _scan(self) -> None:
        f = self._file
        size = os.fstat(f.fileno()).st_size
        f.seek(0)
        if f.read(4) != PAYLOAD_MAGIC:
            raise FileFormatError(f"{self.path}: not a payload store")
        pos = 4
        while pos < size:
            if pos + 12 > size:
                raise FileFormatError(f"{self.path}: truncated payload record")
            f.seek(pos)
            vector_id, length = struct.unpack("<QI", f.read(12))
            if pos + 12 + length > size:
                raise FileFormatError(f"{self.path}: truncated payload bytes")
            self._offsets[vector_id] = (pos + 12, length)
            pos += 12 + length

    def append(self, vector_id: int, payload: bytes) -> None:
        with self._lock:
            self._file.seek(0, 2)
            self._file.write(struct.pack("<QI", vector_id, len(payload)))
            offset = self._file.tell()
            self._file.write(payload)
            self._file.flush()
            self._offsets[int(vector_id)] = (offset, len(payload))

    def append_many(self, pairs) -> None:
        for vector_id, payload in pairs:
            self.append(vector_id, payload)

    def get(self, vector_id: int) -> bytes:
        with self._lock:
            entry = self._offsets.get(int(vector_id))
            if entry is None:
                raise CorruptionError(f"no payload stored for vector id {vector_id}")
            offset, length = entry
            self._file.seek(offset)
            return self._file.read(length)

    def lookup(self, vector_ids) -> list[bytes]:
        """Payloads in the same order as the requested ids."""
        return [self.get(v) for v in np.asarray(vector_ids, dtype=np.uint64)]

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, vector_id: int) -> bool:
        return int(vector_id) in self._offsets

    def close(self) -> None:
        self._file.close()


def lookup_payloads(store: PayloadStore, vector_ids) -> list[bytes]:
    return store.lookup(vector_ids)


class Cluster:
    """Connection fan-out to all memory nodes of a cluster."""

    def __init__(self, config: ClusterConfig):
        self.config = config
        self._clients = [NodeClient(addr, timeout_ms=config.timeout_ms) for addr in config.nodes]
        self._pool = ThreadPoolExecutor(max_workers=max(4, 4 * len(config.nodes)))

    def broadcast_query(
        self, query_id: int, query: np.ndarray, list_ids: np.ndarray, k: int
    ) -> list[NodeResult]:
        """Send the identical query frame to every node; all must answer."""
        futures = [
            self._pool.submit(client.query, query_id, query, list_ids, k)
            for client in self._clients
        ]
        results: list[NodeResult] = []
        failed: list[str] = []
        first_error: Exception | None = None
        for client, fut in zip(self._clients, futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001 - aggregated below
                failed.append(client.address)
                first_error = first_error or exc
        if failed:
            raise NodeUnavailableError(
                f"query {query_id} failed; unavailable nodes: {', '.join(failed)} ({first_error})",
                nodes=tuple(failed),
            )
        return results

    def search(
        self, query_id: int, query: np.ndarray, list_ids: np.ndarray, k: int
    ) -> tuple[np.ndarray, np.ndarray]:
        return merge_results(self.broadcast_query(query_id, query, list_ids, k), k)

    def close(self) -> None:
        self._pool.shutdown(wait=False)
        for client in self._clients:
            client.close()
