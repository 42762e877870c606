"""Socket-level integration: memory-node service, coordinator service,
end-to-end equivalence, concurrency, fault injection, and frame fuzzing."""

import socket
import struct
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pqshard import ivf, memnode, pq, wire
from pqshard.client import CoordinatorClient, NodeClient
from pqshard.coordinator import Cluster, ClusterConfig, PayloadStore, merge_results
from pqshard.errors import NodeUnavailableError, ProtocolError
from pqshard.service import CoordinatorServer, MemoryNodeServer


@pytest.fixture(scope="module")
def fixture():
    rng = np.random.default_rng(2024)
    vectors = rng.standard_normal((2000, 16)).astype(np.float32)
    quantizer = ivf.train_ivf(vectors[:1000], nlist=16, kmeans_iters=8, seed=0)
    labels = ivf.assign_batch(quantizer, vectors[:1000])
    codebook = pq.train_pq(
        vectors[:1000] - quantizer.centroids[labels], num_subspaces=4, num_centroids=32,
        kmeans_iters=8, seed=1,
    )
    index = ivf.build_index(np.arange(2000, dtype=np.uint64), vectors, quantizer, codebook)
    queries = rng.standard_normal((32, 16)).astype(np.float32)
    return vectors, quantizer, codebook, index, queries


@pytest.fixture()
def two_node_cluster(fixture):
    _, _, _, index, _ = fixture
    shards = memnode.shard_partition(index, 2, 2)
    servers = [MemoryNodeServer(s, exact=True) for s in shards]
    config = ClusterConfig(nodes=tuple(s.address for s in servers), timeout_ms=3000)
    coordinator = CoordinatorServer(config)
    yield servers, coordinator
    coordinator.close()
    for s in servers:
        s.close()


class TestMemoryNodeService:
    def test_well_formed_query(self, fixture):
        _, quantizer, _, index, queries = fixture
        (shard,) = memnode.shard_partition(index, 1, 1)
        with MemoryNodeServer(shard, exact=True) as server:
            client = NodeClient(server.address)
            try:
                probe = ivf.scan_index(quantizer, queries[0], 4)
                res = client.query(31337, queries[0], probe, 10)
                assert res.query_id == 31337
                want = memnode.node_query(shard, queries[0], probe, 10, exact=True)
                np.testing.assert_array_equal(res.ids, want.ids)
                np.testing.assert_array_equal(res.distances, want.distances)
            finally:
                client.close()

    def test_query_id_echoed_for_empty_results(self, fixture):
        _, quantizer, codebook, index, queries = fixture
        empty = ivf.IVFIndex(
            quantizer=index.quantizer,
            codebook=codebook,
            list_ids=[np.zeros(0, dtype=np.uint64) for _ in range(index.nlist)],
            list_codes=[np.zeros((0, 4), dtype=np.uint8) for _ in range(index.nlist)],
        )
        (shard,) = memnode.shard_partition(empty, 1, 1)
        with MemoryNodeServer(shard) as server:
            client = NodeClient(server.address)
            try:
                res = client.query(0xDEADBEEFCAFE, queries[0], np.array([0], dtype=np.uint32), 5)
                assert res.query_id == 0xDEADBEEFCAFE
                assert len(res.ids) == 0
            finally:
                client.close()

    def test_64_concurrent_in_flight(self, fixture):
        _, quantizer, _, index, queries = fixture
        (shard,) = memnode.shard_partition(index, 1, 2)
        with MemoryNodeServer(shard, exact=True, max_workers=8) as server:
            client = NodeClient(server.address, timeout_ms=10000)
            try:
                probes = [ivf.scan_index(quantizer, queries[i % len(queries)], 4) for i in range(64)]

                def run(i):
                    res = client.query(i, queries[i % len(queries)], probes[i], 5)
                    return i, res

                with ThreadPoolExecutor(max_workers=64) as pool:
                    results = list(pool.map(run, range(64)))
                assert len(results) == 64
                for i, res in results:
                    assert res.query_id == i
                    want = memnode.node_query(
                        shard, queries[i % len(queries)], probes[i], 5, exact=True
                    )
                    np.testing.assert_array_equal(res.ids, want.ids)
            finally:
                client.close()

    def test_unknown_list_error_keeps_connection(self, fixture):
        _, quantizer, _, index, queries = fixture
        (shard,) = memnode.shard_partition(index, 1, 1)
        with MemoryNodeServer(shard) as server:
            client = NodeClient(server.address)
            try:
                with pytest.raises(ProtocolError) as exc:
                    client.query(5, queries[0], np.array([4000], dtype=np.uint32), 5)
                assert exc.value.code == wire.ERR_UNKNOWN_LIST
                # connection still serves good queries
                probe = ivf.scan_index(quantizer, queries[0], 2)
                assert client.query(6, queries[0], probe, 3).query_id == 6
            finally:
                client.close()

    def test_bad_msg_type_gets_error_frame(self, fixture):
        _, _, _, index, _ = fixture
        (shard,) = memnode.shard_partition(index, 1, 1)
        with MemoryNodeServer(shard) as server:
            with socket.create_connection((server.host, server.port), timeout=5) as sock:
                body = struct.pack("<BQ", 77, 123)  # unsupported type 77
                sock.sendall(struct.pack("<I", len(body)) + body)
                msg_type, reply = wire.read_frame(sock)
                assert msg_type == wire.MSG_ERROR
                err = wire.parse_error(reply)
                assert err.code == wire.ERR_BAD_MSG_TYPE
                assert err.query_id == 123

    def test_truncated_and_oversized_frames(self, fixture):
        _, quantizer, _, index, queries = fixture
        (shard,) = memnode.shard_partition(index, 1, 1)
        with MemoryNodeServer(shard) as server:
            # oversized declaration: server closes the connection
            with socket.create_connection((server.host, server.port), timeout=5) as sock:
                sock.sendall(struct.pack("<I", wire.MAX_FRAME_BYTES + 1))
                assert sock.recv(1) == b""
            # truncated frame then disconnect: server survives
            with socket.create_connection((server.host, server.port), timeout=5) as sock:
                sock.sendall(struct.pack("<I", 100) + b"\x01" * 10)
            # inconsistent body: error frame, connection stays up
            with socket.create_connection((server.host, server.port), timeout=5) as sock:
                body = struct.pack("<BQIII", wire.MSG_QUERY, 9, 5, 3, 4)  # no vectors follow
                sock.sendall(struct.pack("<I", len(body)) + body)
                msg_type, reply = wire.read_frame(sock)
                assert wire.parse_error(reply).code == wire.ERR_MALFORMED
            # the service still answers real queries afterwards
            client = NodeClient(server.address)
            try:
                probe = ivf.scan_index(quantizer, queries[0], 2)
                assert client.query(1, queries[0], probe, 3).query_id == 1
            finally:
                client.close()

    def test_random_fuzz_never_kills_service(self, fixture):
        _, quantizer, _, index, queries = fixture
        (shard,) = memnode.shard_partition(index, 1, 1)
        rng = np.random.default_rng(99)
        with MemoryNodeServer(shard) as server:
            # well-framed garbage bodies: every one must earn an error frame
            for _ in range(40):
                blob = rng.bytes(int(rng.integers(0, 120)))
                with socket.create_connection((server.host, server.port), timeout=5) as sock:
                    sock.settimeout(2.0)
                    sock.sendall(struct.pack("<I", len(blob)) + blob)
                    msg_type, reply = wire.read_frame(sock)
                    assert msg_type == wire.MSG_ERROR
                    assert wire.parse_error(reply).code in (
                        wire.ERR_MALFORMED,
                        wire.ERR_BAD_MSG_TYPE,
                        wire.ERR_UNKNOWN_LIST,
                        wire.ERR_DIM_MISMATCH,
                    )
            # mismatched declarations: no reply is owed, service must survive
            for _ in range(10):
                blob = rng.bytes(int(rng.integers(0, 60)))
                declared = int(rng.integers(len(blob) + 1, len(blob) + 50))
                with socket.create_connection((server.host, server.port), timeout=5) as sock:
                    sock.sendall(struct.pack("<I", declared) + blob)
            client = NodeClient(server.address)
            try:
                probe = ivf.scan_index(quantizer, queries[0], 2)
                assert client.query(2, queries[0], probe, 3).query_id == 2
            finally:
                client.close()


class TestCoordinatorService:
    def test_end_to_end_equals_direct_merge(self, fixture, two_node_cluster):
        _, quantizer, _, index, queries = fixture
        servers, coordinator = two_node_cluster
        shards = [s.shard for s in servers]
        client = CoordinatorClient(coordinator.address)
        try:
            for qi, q in enumerate(queries[:10]):
                probe = ivf.scan_index(quantizer, q, 6)
                ids, dists, payloads = client.search(qi, q, probe, 10)
                assert payloads is None
                want_d, want_i = merge_results(
                    [memnode.node_query(s, q, probe, 10, exact=True) for s in shards], 10
                )
                np.testing.assert_array_equal(ids, want_i)
                np.testing.assert_array_equal(dists, want_d)
        finally:
            client.close()

    def test_concurrent_clients_get_their_own_answers(self, fixture, two_node_cluster):
        _, quantizer, _, index, queries = fixture
        _, coordinator = two_node_cluster

        def run_client(offset):
            client = CoordinatorClient(coordinator.address, timeout_ms=10000)
            try:
                out = []
                for j in range(8):
                    q = queries[(offset + j) % len(queries)]
                    probe = ivf.scan_index(quantizer, q, 4)
                    # same client-side qid on purpose: isolation must come
                    # from the connection, not the id
                    ids, _, _ = client.search(j, q, probe, 5)
                    out.append(ids.tolist())
                return out
            finally:
                client.close()

        with ThreadPoolExecutor(max_workers=4) as pool:
            answers = list(pool.map(run_client, range(4)))
        for offset, got in enumerate(answers):
            expected = run_client(offset)
            assert got == expected

    def test_payload_roundtrip(self, fixture, tmp_path):
        _, quantizer, _, index, queries = fixture
        store_path = tmp_path / "payloads.cpay"
        store = PayloadStore(store_path, create=True)
        for vid in range(2000):
            store.append(vid, f"tok-{vid}".encode())
        store.close()
        shards = memnode.shard_partition(index, 1, 1)
        with MemoryNodeServer(shards[0], exact=True) as node:
            config = ClusterConfig(nodes=(node.address,), payload_store=str(store_path))
            with CoordinatorServer(config) as coordinator:
                client = CoordinatorClient(coordinator.address)
                try:
                    q = queries[0]
                    probe = ivf.scan_index(quantizer, q, 4)
                    ids, _, payloads = client.search(1, q, probe, 5, payload_requested=True)
                    assert payloads == [f"tok-{int(v)}".encode() for v in ids]
                    ids2, _, none_payloads = client.search(2, q, probe, 5, payload_requested=False)
                    assert none_payloads is None
                    np.testing.assert_array_equal(ids, ids2)
                finally:
                    client.close()

    def test_node_timeout_names_the_node(self, fixture):
        _, quantizer, _, index, queries = fixture
        shards = memnode.shard_partition(index, 2, 1)
        live = MemoryNodeServer(shards[0], exact=True)
        # a listener that accepts but never answers: guaranteed timeout
        black_hole = socket.create_server(("127.0.0.1", 0))
        hole_addr = f"127.0.0.1:{black_hole.getsockname()[1]}"
        accepted = []
        threading.Thread(
            target=lambda: accepted.append(black_hole.accept()), daemon=True
        ).start()
        try:
            config = ClusterConfig(nodes=(live.address, hole_addr), timeout_ms=400)
            cluster = Cluster(config)
            probe = ivf.scan_index(quantizer, queries[0], 4)
            with pytest.raises(NodeUnavailableError) as exc:
                cluster.broadcast_query(1, queries[0], probe, 5)
            assert exc.value.nodes == (hole_addr,)
            assert hole_addr in str(exc.value)
            assert live.address not in exc.value.nodes
            cluster.close()
        finally:
            live.close()
            black_hole.close()

    def test_unreachable_node_fails_fast(self, fixture):
        _, quantizer, _, index, queries = fixture
        config = ClusterConfig(nodes=("127.0.0.1:1",), timeout_ms=300)
        cluster = Cluster(config)
        probe = np.array([0], dtype=np.uint32)
        with pytest.raises(NodeUnavailableError):
            cluster.broadcast_query(1, queries[0], probe, 5)
        cluster.close()

    def test_coordinator_rejects_node_frames(self, two_node_cluster):
        _, coordinator = two_node_cluster
        with socket.create_connection((coordinator.host, coordinator.port), timeout=5) as sock:
            frame = wire.encode_query(5, 3, np.zeros(16, dtype=np.float32), np.array([0], dtype=np.uint32))
            sock.sendall(frame)
            _, reply = wire.read_frame(sock)
            assert wire.parse_error(reply).code == wire.ERR_BAD_MSG_TYPE

    def test_coordinator_fuzz_survives(self, fixture, two_node_cluster):
        _, quantizer, _, index, queries = fixture
        _, coordinator = two_node_cluster
        rng = np.random.default_rng(123)
        for _ in range(40):
            blob = rng.bytes(int(rng.integers(0, 80)))
            with socket.create_connection((coordinator.host, coordinator.port), timeout=5) as sock:
                sock.settimeout(2.0)
                try:
                    sock.sendall(struct.pack("<I", len(blob)) + blob)
                    wire.read_frame(sock)
                except (ProtocolError, OSError):
                    pass
        client = CoordinatorClient(coordinator.address)
        try:
            probe = ivf.scan_index(quantizer, queries[0], 2)
            ids, _, _ = client.search(9, queries[0], probe, 3)
            assert len(ids) > 0
        finally:
            client.close()
