"""Threaded framed-socket services for memory nodes and the coordinator.

Each accepted connection gets a reader thread; request processing runs on
a shared worker pool, so responses can complete out of order and are
paired by query id on the client side. Malformed frames produce an error
reply and keep the connection alive; oversized frames close it.
"""

from __future__ import annotations

import logging
import socket
import threading
from concurrent.futures import ThreadPoolExecutor

from . import wire
from .client import parse_address
from .coordinator import Cluster, ClusterConfig, PayloadStore, merge_results
from .errors import CorruptionError, NodeUnavailableError, ProtocolError
from .memnode import Shard, node_query

log = logging.getLogger(__name__)


class FramedServer:
    """Accept loop plus per-connection reader threads over the wire framing."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, max_workers: int = 16):
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def handle_request(self, body: bytes) -> bytes:
        raise NotImplementedError

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                if self._closed:
                    conn.close()
                    return
                self._conns.add(conn)
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        send_lock = threading.Lock()
        try:
            while True:
                try:
                    frame = wire.read_frame(conn)
                except wire.FrameTooLarge:
                    break  # contract: oversized frames drop the connection
                except ProtocolError:
                    break  # framing is unrecoverable mid-stream
                if frame is None:
                    break
                _, body = frame
                self._pool.submit(self._respond, conn, send_lock, body)
        except OSError:
            pass
        finally:
            with self._lock:
                self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _respond(self, conn: socket.socket, send_lock: threading.Lock, body: bytes) -> None:
        try:
            reply = self.handle_request(body)
        except Exception:  # noqa: BLE001 - a worker must never die silently
            log.exception("unhandled error while serving a request")
            qid = wire.peek_query_id(body) or 0
            reply = wire.encode_error(qid, wire.ERR_INTERNAL, "internal error")
        try:
            with send_lock:
                wire.send_frame(conn, reply)
        except OSError:
            pass  # client went away; nothing to deliver

    def close(self) -> None:
        with self._lock:
            self._closed = True
            conns = list(self._conns)
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self._pool.shutdown(wait=False)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MemoryNodeServer(FramedServer):
    """Serves node queries against one loaded shard.

    Shard data is immutable while serving, so queries run concurrently on
    the worker pool without synchronization.
    """

    def __init__(
        self,
        shard: Shard,
        host: str = "127.0.0.1",
        port: int = 0,
        target_prob: float = 0.99,
        exact: bool = False,
        max_workers: int = 16,
    ):
        self.shard = shard
        self.target_prob = target_prob
        self.exact = exact
        super().__init__(host=host, port=port, max_workers=max_workers)

    def handle_request(self, body: bytes) -> bytes:
        if not body:
            return wire.encode_error(0, wire.ERR_MALFORMED, "empty frame")
        if body[0] != wire.MSG_QUERY:
            qid = wire.peek_query_id(body) or 0
            return wire.encode_error(
                qid, wire.ERR_BAD_MSG_TYPE, f"memory node cannot serve message type {body[0]}"
            )
        try:
            req = wire.parse_query(body)
        except ProtocolError as exc:
            return wire.encode_error(wire.peek_query_id(body) or 0, exc.code, str(exc))
        try:
            result = node_query(
                self.shard,
                req.query,
                req.list_ids,
                req.k,
                target_prob=self.target_prob,
                exact=self.exact,
            )
        except ProtocolError as exc:
            return wire.encode_error(req.query_id, exc.code, str(exc))
        return wire.encode_result(req.query_id, result.ids, result.distances)


class CoordinatorServer(FramedServer):
    """Accepts client queries, fans them out to every node, merges, and
    optionally attaches payloads for the winning ids."""

    def __init__(
        self,
        config: ClusterConfig,
        payload_store: PayloadStore | None = None,
        host: str | None = None,
        port: int | None = None,
        max_workers: int = 16,
    ):
        self.config = config
        self.cluster = Cluster(config)
        if payload_store is None and config.payload_store:
            payload_store = PayloadStore(config.payload_store)
        self.payloads = payload_store
        self._qid_lock = threading.Lock()
        self._next_qid = 1
        if host is None or port is None:
            cfg_host, cfg_port = parse_address(config.listen)
            host = host if host is not None else cfg_host
            port = port if port is not None else cfg_port
        super().__init__(host=host, port=port, max_workers=max_workers)

    def _internal_qid(self) -> int:
        # Client-chosen ids may collide across connections; node traffic uses
        # a coordinator-wide id space.
        with self._qid_lock:
            qid = self._next_qid
            self._next_qid += 1
            return qid

    def handle_request(self, body: bytes) -> bytes:
        if not body:
            return wire.encode_error(0, wire.ERR_MALFORMED, "empty frame")
        if body[0] != wire.MSG_CLIENT_QUERY:
            qid = wire.peek_query_id(body) or 0
            return wire.encode_error(
                qid, wire.ERR_BAD_MSG_TYPE, f"coordinator cannot serve message type {body[0]}"
            )
        try:
            req = wire.parse_query(body)
        except ProtocolError as exc:
            return wire.encode_error(wire.peek_query_id(body) or 0, exc.code, str(exc))
        try:
            node_results = self.cluster.broadcast_query(
                self._internal_qid(), req.query, req.list_ids, req.k
            )
            dists, ids = merge_results(node_results, req.k)
        except NodeUnavailableError as exc:
            return wire.encode_error(req.query_id, wire.ERR_NODE_UNAVAILABLE, str(exc))
        except ProtocolError as exc:
            return wire.encode_error(req.query_id, exc.code, str(exc))
        payloads = None
        if req.payload_requested:
            if self.payloads is None:
                return wire.encode_error(
                    req.query_id, wire.ERR_MISSING_PAYLOAD, "no payload store configured"
                )
            try:
                payloads = self.payloads.lookup(ids)
            except CorruptionError as exc:
                return wire.encode_error(req.query_id, wire.ERR_MISSING_PAYLOAD, str(exc))
        return wire.encode_client_result(req.query_id, ids, dists, payloads)

    def close(self) -> None:
        super().close()
        self.cluster.close()
        if self.payloads is not None:
            self.payloads.close()
