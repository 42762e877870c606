"""Length-prefixed binary wire protocol between clients, coordinator, and
memory nodes.

Every frame is a little-endian u32 byte length (counting everything after
the length field itself) followed by a u8 message type and a type-specific
body. All response types carry the u64 query id immediately after the
type byte, so one demultiplexer routes every kind of reply.

    type 1   node query      u64 query_id, u32 k, u32 nprobe, u32 dim,
                             dim x f32 query, nprobe x u32 list_ids
    type 2   node result     u64 query_id, u32 count, count x (u64 id, f32 dist)
    type 3   client query    node-query body + trailing u8 payload_requested
    type 4   client result   u64 query_id, u32 count, count x (u64 id, f32 dist),
                             u8 has_payloads, then count x (u32 len, bytes) if set
    type 255 error           u64 query_id, u32 error_code, u32 detail_len, detail
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

MSG_QUERY = 1
MSG_RESULT = 2
MSG_CLIENT_QUERY = 3
MSG_CLIENT_RESULT = 4
MSG_ERROR = 255

ERR_MALFORMED = 1
ERR_BAD_MSG_TYPE = 2
ERR_UNKNOWN_LIST = 3
ERR_DIM_MISMATCH = 4
ERR_NODE_UNAVAILABLE = 5
ERR_MISSING_PAYLOAD = 6
ERR_INTERNAL = 7

# Frames larger than this close the connection rather than being buffered.
MAX_FRAME_BYTES = 16 * 1024 * 1024


class FrameTooLarge(ProtocolError):
    def __init__(self, size: int):
        super().__init__(f"frame of {size} bytes exceeds limit {MAX_FRAME_BYTES}", code=ERR_MALFORMED)


@dataclass(frozen=True)
class QueryRequest:
    query_id: int
    k: int
    query: np.ndarray  # (dim,) float32
    list_ids: np.ndarray  # (nprobe,) uint32
    payload_requested: bool = False


@dataclass(frozen=True)
class ErrorReply:
    query_id: int
    code: int
    detail: str


def _malformed(reason: str) -> ProtocolError:
    return ProtocolError(f"malformed frame: {reason}", code=ERR_MALFORMED)


def encode_query(query_id: int, k: int, query: np.ndarray, list_ids: np.ndarray) -> bytes:
    query = np.ascontiguousarray(query, dtype="<f4")
    list_ids = np.ascontiguousarray(list_ids, dtype="<u4")
    body = (
        struct.pack("<BQIII", MSG_QUERY, query_id, k, list_ids.size, query.size)
        + query.tobytes()
        + list_ids.tobytes()
    )
    return struct.pack("<I", len(body)) + body


def encode_client_query(
    query_id: int, k: int, query: np.ndarray, list_ids: np.ndarray, payload_requested: bool
) -> bytes:
    query = np.ascontiguousarray(query, dtype="<f4")
    list_ids = np.ascontiguousarray(list_ids, dtype="<u4")
    body = (
        struct.pack("<BQIII", MSG_CLIENT_QUERY, query_id, k, list_ids.size, query.size)
        + query.tobytes()
        + list_ids.tobytes()
        + struct.pack("<B", 1 if payload_requested else 0)
    )
    return struct.pack("<I", len(body)) + body


def parse_query(body: bytes) -> QueryRequest:
    """Parse a type-1 or type-3 body (the type byte included)."""
    if len(body) < 21:
        raise _malformed("query frame shorter than fixed header")
    msg_type, query_id, k, nprobe, dim = struct.unpack_from("<BQIII", body, 0)
    expected = 21 + 4 * dim + 4 * nprobe + (1 if msg_type == MSG_CLIENT_QUERY else 0)
    if len(body) != expected:
        raise _malformed(f"query frame length {len(body)} != expected {expected}")
    if k < 1 or nprobe < 1 or dim < 1:
        raise _malformed("k, nprobe, and dim must all be >= 1")
    off = 21
    query = np.frombuffer(body, dtype="<f4", count=dim, offset=off).astype(np.float32)
    off += 4 * dim
    list_ids = np.frombuffer(body, dtype="<u4", count=nprobe, offset=off).astype(np.uint32)
    payload_requested = False
    if msg_type == MSG_CLIENT_QUERY:
        payload_requested = body[-1] != 0
    return QueryRequest(
        query_id=query_id, k=k, query=query, list_ids=list_ids, payload_requested=payload_requested
    )


def encode_result(query_id: int, ids: np.ndarray, distances: np.ndarray) -> bytes:
    ids = np.ascontiguousarray(ids, dtype="<u8")
    distances = np.ascontiguousarray(distances, dtype="<f4")
    rec = np.empty(ids.size, dtype=np.dtype([("id", "<u8"), ("dist", "<f4")]))
    rec["id"] = ids
    rec["dist"] = distances
    body = struct.pack("<BQI", MSG_RESULT, query_id, ids.size) + rec.tobytes()
    return struct.pack("<I", len(body)) + body


def parse_result(body: bytes) -> tuple[int, np.ndarray, np.ndarray]:
    if len(body) < 13:
        raise _malformed("result frame shorter than fixed header")
    _, query_id, count = struct.unpack_from("<BQI", body, 0)
    rec = np.dtype([("id", "<u8"), ("dist", "<f4")])
    if len(body) != 13 + count * rec.itemsize:
        raise _malformed("result frame length mismatch")
    block = np.frombuffer(body, dtype=rec, count=count, offset=13)
    return query_id, block["id"].astype(np.uint64), block["dist"].astype(np.float32)


def encode_client_result(
    query_id: int,
    ids: np.ndarray,
    distances: np.ndarray,
    payloads: list[bytes] | None = None,
) -> bytes:
    ids = np.ascontiguousarray(ids, dtype="<u8")
    distances = np.ascontiguousarray(distances, dtype="<f4")
    rec = np.empty(ids.size, dtype=np.dtype([("id", "<u8"), ("dist", "<f4")]))
    rec["id"] = ids
    rec["dist"] = distances
    body = struct.pack("<BQI", MSG_CLIENT_RESULT, query_id, ids.size) + rec.tobytes()
    if payloads is None:
        body += struct.pack("<B", 0)
    else:
        if len(payloads) != ids.size:
            raise ProtocolError("need exactly one payload per result id", code=ERR_INTERNAL)
        body += struct.pack("<B", 1)
        for p in payloads:
            body += struct.pack("<I", len(p)) + p
    return struct.pack("<I", len(body)) + body


def parse_client_result(body: bytes) -> tuple[int, np.ndarray, np.ndarray, list[bytes] | None]:
    if len(body) < 14:
        raise _malformed("client result frame shorter than fixed header")
    _, query_id, count = struct.unpack_from("<BQI", body, 0)
    rec = np.dtype([("id", "<u8"), ("dist", "<f4")])
    off = 13 + count * rec.itemsize
    if len(body) < off + 1:
        raise _malformed("client result frame length mismatch")
    block = np.frombuffer(body, dtype=rec, count=count, offset=13)
    has_payloads = body[off] != 0
    off += 1
    payloads: list[bytes] | None = None
    if has_payloads:
        payloads = []
        for _ in range(count):
            if len(body) < off + 4:
                raise _malformed("truncated payload section")
            (plen,) = struct.unpack_from("<I", body, off)
            off += 4
            if len(body) < off + plen:
                raise _malformed("truncated payload bytes")
            payloads.append(body[off : off + plen])
            off += plen
    if len(body) != off:
        raise _malformed("trailing bytes after client result")
    return query_id, block["id"].astype(np.uint64), block["dist"].astype(np.float32), payloads


def encode_error(query_id: int, code: int, detail: str) -> bytes:
    raw = detail.encode("utf-8")
    body = struct.pack("<BQII", MSG_ERROR, query_id, code, len(raw)) + raw
    return struct.pack("<I", len(body)) + body


def parse_error(body: bytes) -> ErrorReply:
    if len(body) < 17:
        raise _malformed("error frame shorter than fixed header")
    _, query_id, code, detail_len = struct.unpack_from("<BQII", body, 0)
    if len(body) != 17 + detail_len:
        raise _malformed("error frame length mismatch")
    return ErrorReply(query_id=query_id, code=code, detail=body[17:].decode("utf-8", "replace"))


def peek_query_id(body: bytes) -> int | None:
    """Best-effort query id for demultiplexing any response frame."""
    if len(body) < 9:
        return None
    return struct.unpack_from("<Q", body, 1)[0]


def recv_exact(sock: socket.socket, n: int) -> bytes | None:
    """Read exactly n bytes, or None on clean EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        data = sock.recv(min(65536, n - got))
        if not data:
            if got == 0:
                return None
            raise _malformed("connection closed mid-frame")
        chunks.append(data)
        got += len(data)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes] | None:
    """Read one frame; returns (msg_type, body) or None on EOF.

    Raises FrameTooLarge for oversized declarations (callers must close the
    connection) and ProtocolError for malformed framing.
    """
    header = recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(length)
    if length < 1:
        # Stream is still at a frame boundary; report an unusable frame
        # rather than tearing the connection down.
        return -1, b""
    body = recv_exact(sock, length)
    if body is None or len(body) != length:
        raise _malformed("connection closed mid-frame")
    return body[0], body


def send_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(frame)
