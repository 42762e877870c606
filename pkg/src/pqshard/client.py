"""Persistent framed connections with out-of-order response pairing.

A background reader demultiplexes response frames to waiting callers by
query id, so any number of threads can keep queries in flight on one
socket. Used by the coordinator to talk to memory nodes and by clients
(CLI, benchmark, generation driver) to talk to the coordinator.
"""

from __future__ import annotations

import socket
import threading

import numpy as np

from . import wire
from .errors import NodeUnavailableError, ProtocolError
from .memnode import NodeResult


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise ProtocolError(f"address {address!r} is not host:port")
    return host, int(port)


class FrameClient:
    """One socket to a framed service; thread-safe request/response."""

    def __init__(self, address: str, timeout_ms: float = 5000.0):
        self.address = address
        self.timeout_s = timeout_ms / 1000.0
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._reader: threading.Thread | None = None
        self._closed = False

    def _ensure_connected(self) -> socket.socket:
        with self._state_lock:
            if self._closed:
                raise NodeUnavailableError(f"client for {self.address} is closed", nodes=(self.address,))
            if self._sock is not None:
                return self._sock
            host, port = parse_address(self.address)
            try:
                sock = socket.create_connection((host, port), timeout=self.timeout_s)
            except OSError as exc:
                raise NodeUnavailableError(
                    f"node {self.address} unavailable: {exc}", nodes=(self.address,)
                ) from exc
            sock.settimeout(None)
            self._sock = sock
            self._reader = threading.Thread(target=self._read_loop, args=(sock,), daemon=True)
            self._reader.start()
            return sock

    def _read_loop(self, sock: socket.socket) -> None:
        error: Exception | None = None
        try:
            while True:
                frame = wire.read_frame(sock)
                if frame is None:
                    break
                _, body = frame
                qid = wire.peek_query_id(body)
                with self._state_lock:
                    slot = self._pending.get(qid)
                if slot is not None:
                    slot["body"] = body
                    slot["event"].set()
                # Responses for unknown ids (e.g. after a timeout) are dropped.
        except Exception as exc:  # noqa: BLE001 - the failure is re-raised at callers
            error = exc
        finally:
            with self._state_lock:
                if self._sock is sock:
                    self._sock = None
                pending = list(self._pending.values())
            for slot in pending:
                slot["error"] = error or NodeUnavailableError(
                    f"node {self.address} closed the connection", nodes=(self.address,)
                )
                slot["event"].set()
            try:
                sock.close()
            except OSError:
                pass

    def request(self, query_id: int, frame: bytes) -> bytes:
        """Send one frame and block for the response carrying query_id."""
        sock = self._ensure_connected()
        slot = {"event": threading.Event(), "body": None, "error": None}
        with self._state_lock:
            if query_id in self._pending:
                raise ProtocolError(f"query id {query_id} already in flight")
            self._pending[query_id] = slot
        try:
            with self._send_lock:
                wire.send_frame(sock, frame)
            if not slot["event"].wait(self.timeout_s):
                raise NodeUnavailableError(
                    f"node {self.address} timed out after {self.timeout_s * 1000:.0f} ms",
                    nodes=(self.address,),
                )
        finally:
            with self._state_lock:
                self._pending.pop(query_id, None)
        if slot["error"] is not None:
            if isinstance(slot["error"], NodeUnavailableError):
                raise slot["error"]
            raise NodeUnavailableError(
                f"node {self.address} connection failed: {slot['error']}", nodes=(self.address,)
            )
        return slot["body"]

    def close(self) -> None:
        with self._state_lock:
            self._closed = True
            sock = self._sock
            self._sock = None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


def _raise_remote_error(body: bytes, address: str) -> None:
    err = wire.parse_error(body)
    raise ProtocolError(f"{address}: remote error {err.code}: {err.detail}", code=err.code)


class NodeClient(FrameClient):
    """Coordinator-side handle to one memory node."""

    def query(self, query_id: int, query: np.ndarray, list_ids: np.ndarray, k: int) -> NodeResult:
        frame = wire.encode_query(query_id, k, query, list_ids)
        body = self.request(query_id, frame)
        if body[0] == wire.MSG_ERROR:
            _raise_remote_error(body, self.address)
        if body[0] != wire.MSG_RESULT:
            raise ProtocolError(f"{self.address}: unexpected message type {body[0]}")
        qid, ids, dists = wire.parse_result(body)
        return NodeResult(ids=ids, distances=dists, query_id=qid)


class CoordinatorClient(FrameClient):
    """Client-side handle to the coordinator service."""

    def search(
        self,
        query_id: int,
        query: np.ndarray,
        list_ids: np.ndarray,
        k: int,
        payload_requested: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, list[bytes] | None]:
        frame = wire.encode_client_query(query_id, k, query, list_ids, payload_requested)
        body = self.request(query_id, frame)
        if body[0] == wire.MSG_ERROR:
            _raise_remote_error(body, self.address)
        if body[0] != wire.MSG_CLIENT_RESULT:
            raise ProtocolError(f"{self.address}: unexpected message type {body[0]}")
        _, ids, dists, payloads = wire.parse_client_result(body)
        return ids, dists, payloads
