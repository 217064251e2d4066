"""Length-prefixed JSON framing and the TCP services built on it.

Every frame is a 4-byte big-endian length followed by a UTF-8 JSON envelope
``{"type", "id", "body"}``. Bodies use the same documents as the in-process
API, with bytes rendered as lowercase hex.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from . import errors
from .canonical import canonicalize, parse_hex
from .errors import BioQuorumError, IoFailure, ProtocolError
from .gateway import AuthRequest, EnrollRequest, Gateway, RevokeRequest
from .node import VerifierNode, VerifyResult, VerifyTask

__all__ = [
    "MESSAGE_TYPES",
    "MAX_FRAME",
    "GatewayServer",
    "LinkDelay",
    "NodeServer",
    "RemoteError",
    "WireClient",
    "decode_envelope",
    "encode_envelope",
    "recv_frame",
    "send_frame",
]

log = logging.getLogger(__name__)

MESSAGE_TYPES = frozenset({
    "ENROLL_REQ", "ENROLL_RESP", "CHALLENGE_REQ", "CHALLENGE_RESP", "AUTH_REQ", "AUTH_RESP",
    "VERIFY_TASK", "VERIFY_RESULT", "REVOKE_REQ", "REVOKE_RESP", "STATUS_REQ", "STATUS_RESP", "ERROR",
})
MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct(">I")


def encode_envelope(msg_type: str, msg_id: int, body: Any) -> bytes:
    if msg_type not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {msg_type!r}")
    payload = canonicalize({"body": body, "id": msg_id, "type": msg_type})
    if len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(payload)) + payload


def decode_envelope(payload: bytes) -> tuple[str, int, Any]:
    try:
        env = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"frame is not JSON: {exc}") from exc
    if not isinstance(env, dict) or set(env) != {"body", "id", "type"}:
        raise ProtocolError("envelope must have exactly type, id and body")
    if env["type"] not in MESSAGE_TYPES or not isinstance(env["id"], int):
        raise ProtocolError(f"bad envelope type or id: {env['type']!r}")
    return env["type"], env["id"], env["body"]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            raise EOFError
        buf += chunk
    return bytes(buf)


def send_frame(sock: socket.socket, msg_type: str, msg_id: int, body: Any) -> None:
    sock.sendall(encode_envelope(msg_type, msg_id, body))


def recv_frame(sock: socket.socket) -> tuple[str, int, Any]:
    """Read one frame. Raises EOFError on a clean close between frames."""
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    if length > MAX_FRAME:
        raise ProtocolError(f"peer announced {length}-byte frame")
    return decode_envelope(_recv_exact(sock, length))


# -- latency injection -------------------------------------------------------------

class LinkDelay:
    """Sleeps for a seeded uniform[lo, hi] ms on each simulated link traversal."""

    def __init__(self, lo_ms: float = 0.0, hi_ms: float | None = None, seed: int = 0) -> None:
        self.lo_ms = float(lo_ms)
        self.hi_ms = float(lo_ms if hi_ms is None else hi_ms)
        if self.lo_ms < 0 or self.hi_ms < self.lo_ms:
            raise errors.ConfigError("link delay needs 0 <= lo <= hi")
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def sample(self) -> float:
        with self._lock:
            return self._rng.uniform(self.lo_ms, self.hi_ms)

    def sleep(self) -> None:
        ms = self.sample()
        if ms > 0:
            time.sleep(ms / 1000.0)


_NO_DELAY = LinkDelay()


# -- servers -----------------------------------------------------------------------

def _cpu_ms() -> int:
    return int(time.process_time() * 1000)


class RemoteError(BioQuorumError):
    def __init__(self, name: str, message: str, reason: str | None = None) -> None:
        super().__init__(f"{name}: {message}")
        self.name = name
        self.reason = reason


def _error_body(exc: BaseException) -> dict[str, Any]:
    return {"error": type(exc).__name__, "message": str(exc), "reason": getattr(exc, "reason", "") or ""}


class _Handler(socketserver.BaseRequestHandler):
    server: _Server

    def handle(self) -> None:
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                msg_type, msg_id, body = recv_frame(sock)
            except (EOFError, ConnectionError, OSError):
                return
            except ProtocolError as exc:
                try:
                    send_frame(sock, "ERROR", 0, _error_body(exc))
                except OSError:
                    pass
                return
            self.server.delay.sleep()
            try:
                resp_type, resp_body = self.server.dispatch(msg_type, body)
            except Exception as exc:  # noqa: BLE001 - every failure goes back as ERROR
                if not isinstance(exc, BioQuorumError):
                    log.exception("unexpected error handling %s", msg_type)
                resp_type, resp_body = "ERROR", _error_body(exc)
            self.server.delay.sleep()
            try:
                frame = encode_envelope(resp_type, msg_id, resp_body)
            except BioQuorumError as exc:
                log.exception("cannot encode %s response", resp_type)
                frame = encode_envelope("ERROR", msg_id, _error_body(exc))
            try:
                sock.sendall(frame)
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 256

    def __init__(self, address: tuple[str, int], delay: LinkDelay | None) -> None:
        self.delay = delay or _NO_DELAY
        super().__init__(address, _Handler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return str(host), int(port)

    def dispatch(self, msg_type: str, body: Any) -> tuple[str, Any]:
        raise NotImplementedError

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name=type(self).__name__, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class NodeServer(_Server):
    def __init__(self, node: VerifierNode, address: tuple[str, int] = ("127.0.0.1", 0),
                 delay: LinkDelay | None = None) -> None:
        self.node = node
        super().__init__(address, delay)

    def dispatch(self, msg_type: str, body: Any) -> tuple[str, Any]:
        if msg_type == "VERIFY_TASK":
            return "VERIFY_RESULT", self.node.handle_verify_task(VerifyTask.from_document(body)).to_document()
        if msg_type == "STATUS_REQ":
            return "STATUS_RESP", {**self.node.node_status(), "cpu_ms": _cpu_ms()}
        raise ProtocolError(f"node does not handle {msg_type}")


class GatewayServer(_Server):
    def __init__(self, gateway: Gateway, address: tuple[str, int] = ("127.0.0.1", 0),
                 delay: LinkDelay | None = None) -> None:
        self.gateway = gateway
        super().__init__(address, delay)

    def _height(self) -> int:
        ledger = self.gateway.ledger
        if ledger.path is not None:
            ledger.reload()
        return ledger.height

    def dispatch(self, msg_type: str, body: Any) -> tuple[str, Any]:
        gw = self.gateway
        if msg_type == "CHALLENGE_REQ":
            if not isinstance(body, dict) or not isinstance(body.get("subject_did"), str):
                raise ProtocolError("CHALLENGE_REQ needs subject_did")
            ch = gw.issue_challenge(body["subject_did"])
            return "CHALLENGE_RESP", {**ch.to_document(), "ledger_height": self._height()}
        if msg_type == "ENROLL_REQ":
            return "ENROLL_RESP", gw.handle_enroll(EnrollRequest.from_document(body))
        if msg_type == "AUTH_REQ":
            return "AUTH_RESP", gw.handle_auth(AuthRequest.from_document(body)).to_document()
        if msg_type == "REVOKE_REQ":
            self._height()
            block = gw.handle_revoke(RevokeRequest.from_document(body))
            return "REVOKE_RESP", {"block_hash": block.block_hash, "height": block.index + 1}
        if msg_type == "STATUS_REQ":
            if isinstance(body, dict) and "token" in body:
                check = gw.validate_token(body["token"])
                return "STATUS_RESP", {"valid": check.valid, "reason": check.reason or "", "sub": check.sub or ""}
            return "STATUS_RESP", {**gw.status(), "cpu_ms": _cpu_ms(), "ledger_height": self._height()}
        raise ProtocolError(f"gateway does not handle {msg_type}")


# -- clients -----------------------------------------------------------------------

@dataclass
class _Conn:
    sock: socket.socket


class WireClient:
    """Request/response client with a small pool of persistent connections."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0, pool_size: int = 64) -> None:
        self.host = host
        self.port = int(port)
        self.timeout_s = timeout_s
        self._pool: queue.LifoQueue[_Conn] = queue.LifoQueue(maxsize=pool_size)
        self._ids = iter(range(1, 2**62))
        self._id_lock = threading.Lock()

    def _connect(self) -> _Conn:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
        except OSError as exc:
            raise IoFailure(f"cannot reach {self.host}:{self.port}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return _Conn(sock)

    def request(self, msg_type: str, body: Any) -> tuple[str, Any]:
        with self._id_lock:
            msg_id = next(self._ids)
        try:
            conn = self._pool.get_nowait()
        except queue.Empty:
            conn = self._connect()
        try:
            send_frame(conn.sock, msg_type, msg_id, body)
            resp_type, resp_id, resp_body = recv_frame(conn.sock)
        except (OSError, EOFError, ProtocolError) as exc:
            conn.sock.close()
            raise IoFailure(f"{msg_type} to {self.host}:{self.port} failed: {exc}") from exc
        if resp_id != msg_id and resp_type != "ERROR":
            conn.sock.close()
            raise ProtocolError(f"response id {resp_id} does not match request {msg_id}")
        try:
            self._pool.put_nowait(conn)
        except queue.Full:
            conn.sock.close()
        if resp_type == "ERROR":
            raise RemoteError(str(body_get(resp_body, "error")), str(body_get(resp_body, "message")),
                              body_get(resp_body, "reason") or None)
        return resp_type, resp_body

    def call(self, msg_type: str, body: Any, expect: str) -> Any:
        resp_type, resp_body = self.request(msg_type, body)
        if resp_type != expect:
            raise ProtocolError(f"expected {expect}, got {resp_type}")
        return resp_body

    def close(self) -> None:
        while True:
            try:
                self._pool.get_nowait().sock.close()
            except queue.Empty:
                return

    # gateway helpers

    def challenge(self, subject_did: str) -> tuple[bytes, int]:
        body = self.call("CHALLENGE_REQ", {"subject_did": str(subject_did)}, "CHALLENGE_RESP")
        return parse_hex(body["challenge"]), int(body["ledger_height"])

    def enroll(self, req: EnrollRequest) -> dict[str, Any]:
        return self.call("ENROLL_REQ", req.to_document(), "ENROLL_RESP")

    def auth(self, req: AuthRequest) -> dict[str, Any]:
        return self.call("AUTH_REQ", req.to_document(), "AUTH_RESP")

    def revoke(self, req: RevokeRequest) -> dict[str, Any]:
        return self.call("REVOKE_REQ", req.to_document(), "REVOKE_RESP")

    def status(self) -> dict[str, Any]:
        return self.call("STATUS_REQ", {}, "STATUS_RESP")


def body_get(body: Any, key: str) -> Any:
    return body.get(key, "") if isinstance(body, dict) else ""


def node_transport(client: WireClient) -> Callable[[VerifyTask], VerifyResult]:
    """Adapt a node client to the gateway's fan-out callable."""

    def send(task: VerifyTask) -> VerifyResult:
        return VerifyResult.from_document(client.call("VERIFY_TASK", task.to_document(), "VERIFY_RESULT"))

    return send
