"""Disaggregated memory node: holds one shard of every IVF list split
across simulated memory channels, and answers queries by building
per-list LUTs, streaming ADC distances, and selecting a node-local top-k.

Within each list, entry j goes to node (j + offset) mod num_nodes and then
round-robins across that node's channels, so slices stay balanced to within
one entry. Each channel feeds an alternating pair of truncated level-1
queues (the stand-in decoder emits one distance per cycle while a queue
ingests one every two), giving num_queue = 2 * num_channels per node.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FileFormatError, ProtocolError
from .ivf import CoarseQuantizer, IVFIndex
from .kselect import _smallest, truncated_queue_length
from .pq import PQCodebook, adc_batch, build_lut
from .wire import ERR_DIM_MISMATCH, ERR_UNKNOWN_LIST

SHARD_MAGIC = b"CSHD"


@dataclass
class NodeResult:
    """One node's answer: up to k (id, distance) pairs ascending."""

    ids: np.ndarray  # (n,) uint64
    distances: np.ndarray  # (n,) float32
    query_id: int = 0


@dataclass
class Shard:
    node_id: int
    num_nodes: int
    num_channels: int
    # channel_ids[list_id][channel] -> uint64 ids, channel_codes likewise.
    channel_ids: list[list[np.ndarray]]
    channel_codes: list[list[np.ndarray]]
    codebook: PQCodebook
    centroids: np.ndarray  # coarse centroids, (nlist, dim) float32

    @property
    def nlist(self) -> int:
        return len(self.channel_ids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def size(self) -> int:
        return sum(len(ids) for per_list in self.channel_ids for ids in per_list)


def placement_offsets(
    list_sizes: np.ndarray, frequencies: np.ndarray, num_nodes: int
) -> np.ndarray:
    """Greedy rotation offsets that spread hot, hard-to-split lists.

    Round-robin placement always sends entry 0 of every list to node 0, so
    short hot lists pile up there. Processing lists by descending
    frequency x occupancy and starting each at the currently least-loaded
    node evens out the expected per-node work.
    """
    list_sizes = np.asarray(list_sizes, dtype=np.int64)
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if frequencies.shape != list_sizes.shape:
        raise ConfigurationError("need one access frequency per IVF list")
    offsets = np.zeros(len(list_sizes), dtype=np.int64)
    load = np.zeros(num_nodes, dtype=np.float64)
    weight = frequencies * np.maximum(list_sizes, 1)
    for l in np.argsort(-weight, kind="stable"):
        start = int(np.argmin(load))
        offsets[l] = start
        # Entries land on consecutive nodes starting at `start`.
        per_node = np.full(num_nodes, list_sizes[l] // num_nodes, dtype=np.float64)
        per_node[: list_sizes[l] % num_nodes] += 1
        load += frequencies[l] * np.roll(per_node, start)
    return offsets


def shard_partition(
    index: IVFIndex,
    num_nodes: int,
    num_channels: int,
    frequencies: np.ndarray | None = None,
) -> list[Shard]:
    """Split every IVF list round-robin across nodes, then across channels.

    Deterministic: entry j of a list goes to node (j + offset) mod
    num_nodes and, within that node, to channel (position // num_nodes)
    mod num_channels. Offsets are zero unless an access-frequency
    histogram is supplied.
    """
    if num_nodes < 1 or num_channels < 1:
        raise ConfigurationError("num_nodes and num_channels must be >= 1")
    sizes = np.array([len(ids) for ids in index.list_ids], dtype=np.int64)
    if frequencies is not None:
        offsets = placement_offsets(sizes, frequencies, num_nodes)
    else:
        offsets = np.zeros(index.nlist, dtype=np.int64)
    shards = []
    for node in range(num_nodes):
        channel_ids: list[list[np.ndarray]] = []
        channel_codes: list[list[np.ndarray]] = []
        for l in range(index.nlist):
            ids = index.list_ids[l]
            codes = index.list_codes[l]
            j = np.arange(len(ids))
            mine = (j + offsets[l]) % num_nodes == node
            pos = (j[mine] + offsets[l]) // num_nodes
            chan = pos % num_channels
            channel_ids.append([ids[mine][chan == c] for c in range(num_channels)])
            channel_codes.append([codes[mine][chan == c] for c in range(num_channels)])
        shards.append(
            Shard(
                node_id=node,
                num_nodes=num_nodes,
                num_channels=num_channels,
                channel_ids=channel_ids,
                channel_codes=channel_codes,
                codebook=index.codebook,
                centroids=index.quantizer.centroids,
            )
        )
    return shards


def node_query(
    shard: Shard,
    query: np.ndarray,
    probe: np.ndarray,
    k: int,
    target_prob: float = 0.99,
    exact: bool = False,
) -> NodeResult:
    """Scan the probed lists on this shard and return the node-local top-k.

    Each probed list gets a fresh LUT built from the query's residual
    against that list's centroid. Every channel streams its slice into its
    two truncated level-1 queues (alternating elements), and the level-2
    fold selects the node's k best. `exact` forces full-length level-1
    queues, recovering untruncated selection.
    """
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (shard.dim,):
        raise ProtocolError(
            f"query dimensionality {query.shape} does not match shard dim {shard.dim}",
            code=ERR_DIM_MISMATCH,
        )
    if k < 1:
        raise ProtocolError("k must be >= 1", code=ERR_DIM_MISMATCH)
    probe = np.asarray(probe, dtype=np.int64)
    if probe.size and (probe.min() < 0 or probe.max() >= shard.nlist):
        raise ProtocolError(
            f"probed list id out of range [0, {shard.nlist})", code=ERR_UNKNOWN_LIST
        )
    num_queue = 2 * shard.num_channels
    level1_len = k if exact else max(1, truncated_queue_length(k, num_queue, target_prob))

    # Per-queue accumulation; queue 2c and 2c+1 take alternating elements of
    # channel c's stream, with parity carried across probed lists.
    qd: list[list[np.ndarray]] = [[] for _ in range(num_queue)]
    qi: list[list[np.ndarray]] = [[] for _ in range(num_queue)]
    parity = np.zeros(shard.num_channels, dtype=np.int64)
    for list_id in probe:
        ids_by_chan = shard.channel_ids[list_id]
        codes_by_chan = shard.channel_codes[list_id]
        lut = None
        for c in range(shard.num_channels):
            ids = ids_by_chan[c]
            if len(ids) == 0:
                continue
            if lut is None:
                lut = build_lut(shard.codebook, query - shard.centroids[list_id], list_id=int(list_id))
            d = adc_batch(lut, codes_by_chan[c])
            # Global stream position parity decides which queue of the pair
            # receives the first element of this slice.
            first = int(parity[c]) & 1
            qd[2 * c].append(d[first::2])
            qi[2 * c].append(ids[first::2])
            qd[2 * c + 1].append(d[1 - first :: 2])
            qi[2 * c + 1].append(ids[1 - first :: 2])
            parity[c] += len(ids)

    survivors_d = []
    survivors_i = []
    for c in range(num_queue):
        if not qd[c]:
            continue
        d, i = _smallest(np.concatenate(qd[c]), np.concatenate(qi[c]).astype(np.uint64), level1_len)
        survivors_d.append(d)
        survivors_i.append(i)
    if not survivors_d:
        return NodeResult(ids=np.zeros(0, dtype=np.uint64), distances=np.zeros(0, dtype=np.float32))
    d, i = _smallest(np.concatenate(survivors_d), np.concatenate(survivors_i), k)
    return NodeResult(ids=i, distances=d)


def save_shard(shard: Shard, path) -> None:
    """Write magic, u32 node_id/num_nodes/num_channels, then per (list,
    channel) a u64 count followed by (u64 id, m-byte code) records."""
    m = shard.codebook.num_subspaces
    rec = np.dtype([("id", "<u8"), ("code", "u1", (m,))])
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", SHARD_MAGIC, shard.node_id, shard.num_nodes, shard.num_channels))
        for l in range(shard.nlist):
            for c in range(shard.num_channels):
                ids = shard.channel_ids[l][c]
                f.write(struct.pack("<Q", len(ids)))
                block = np.empty(len(ids), dtype=rec)
                block["id"] = ids
                block["code"] = shard.channel_codes[l][c]
                f.write(block.tobytes())


def load_shard(path, codebook: PQCodebook, quantizer: CoarseQuantizer) -> Shard:
    """Read a shard file; the codebook and coarse quantizer travel in their
    own artifacts and are attached here."""
    m = codebook.num_subspaces
    rec = np.dtype([("id", "<u8"), ("code", "u1", (m,))])
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != SHARD_MAGIC:
            raise FileFormatError(f"{path}: not a shard file")
        _, node_id, num_nodes, num_channels = struct.unpack("<4sIII", header)
        if num_nodes < 1 or num_channels < 1:
            raise FileFormatError(f"{path}: inconsistent shard header")
        flat: list[tuple[np.ndarray, np.ndarray]] = []
        while True:
            count_raw = f.read(8)
            if not count_raw:
                break
            if len(count_raw) != 8:
                raise FileFormatError(f"{path}: truncated slice header")
            (count,) = struct.unpack("<Q", count_raw)
            raw = f.read(count * rec.itemsize)
            if len(raw) != count * rec.itemsize:
                raise FileFormatError(f"{path}: truncated slice body")
            block = np.frombuffer(raw, dtype=rec)
            flat.append((block["id"].astype(np.uint64), np.ascontiguousarray(block["code"])))
    if len(flat) % num_channels != 0 or len(flat) // num_channels != quantizer.nlist:
        raise FileFormatError(f"{path}: slice count does not match nlist x channels")
    channel_ids = [[flat[l * num_channels + c][0] for c in range(num_channels)] for l in range(quantizer.nlist)]
    channel_codes = [[flat[l * num_channels + c][1] for c in range(num_channels)] for l in range(quantizer.nlist)]
    return Shard(
        node_id=node_id,
        num_nodes=num_nodes,
        num_channels=num_channels,
        channel_ids=channel_ids,
        channel_codes=channel_codes,
        codebook=codebook,
        centroids=quantizer.centroids,
    )
