"""In-process stand-ins for IPFS and the revocation blockchain.

``ContentStore`` addresses blobs by their SHA-256. ``RevocationLedger`` is an
append-only chain of blocks, each committing to its predecessor's hash.
Verifier nodes never read the ledger directly on the hot path; they hold a
``LedgerView`` that is refreshed by polling or by push notifications, which is
where revocation propagation delay comes from.
"""

from __future__ import annotations

import contextlib
import hashlib
import os
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from filelock import FileLock

from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import AlreadyRevoked, ConfigError, IoFailure, MalformedEncoding, NotFound

__all__ = [
    "DEFAULT_POLL_INTERVAL_MS",
    "DEFAULT_TTL_MS",
    "ChainStatus",
    "Cid",
    "ContentStore",
    "FileContentStore",
    "LedgerView",
    "RevocationBlock",
    "RevocationEvent",
    "RevocationLedger",
    "RevocationStatus",
    "append_revocation",
    "apply_notification",
    "export_ledger",
    "import_ledger",
    "is_revoked",
    "merge_views",
    "new_view",
    "refresh_view",
    "snapshot_view",
    "store_get",
    "store_put",
    "verify_chain",
]

DEFAULT_POLL_INTERVAL_MS = 500
DEFAULT_TTL_MS = 1000
ZERO_HASH = bytes(32)
_CID_RE = re.compile(r"sha256:([0-9a-f]{64})")


# -- content addressing -------------------------------------------------------

@dataclass(frozen=True)
class Cid:
    digest: str
    scheme: str = "sha256"

    def __str__(self) -> str:
        return f"{self.scheme}:{self.digest}"

    @classmethod
    def parse(cls, text: str) -> Cid:
        m = _CID_RE.fullmatch(text) if isinstance(text, str) else None
        if m is None:
            raise MalformedEncoding(f"not a CID: {text!r}")
        return cls(m.group(1))

    @classmethod
    def of(cls, content: bytes) -> Cid:
        return cls(hashlib.sha256(content).hexdigest())


class ContentStore:
    """Thread-safe in-memory blob store keyed by content hash."""

    def __init__(self) -> None:
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put(self, content: bytes) -> Cid:
        if not content:
            raise ValueError("content must be non-empty")
        cid = Cid.of(content)
        with self._lock:
            self._blobs.setdefault(cid.digest, bytes(content))
        return cid

    def get(self, cid: Cid | str) -> bytes:
        if isinstance(cid, str):
            cid = Cid.parse(cid)
        with self._lock:
            try:
                return self._blobs[cid.digest]
            except KeyError:
                raise NotFound(str(cid)) from None

    def __contains__(self, cid: object) -> bool:
        try:
            self.get(cid)  # type: ignore[arg-type]
        except (NotFound, MalformedEncoding):
            return False
        return True

    def __len__(self) -> int:
        return len(self._blobs)

    def cids(self) -> list[Cid]:
        with self._lock:
            return [Cid(d) for d in sorted(self._blobs)]


class FileContentStore(ContentStore):
    """Blob store backed by a directory (``sha256-<hex>`` files).

    Lets separate node and gateway processes share one store.
    """

    def __init__(self, root: str | os.PathLike[str]) -> None:
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, cid: Cid) -> Path:
        return self.root / f"sha256-{cid.digest}"

    def put(self, content: bytes) -> Cid:
        if not content:
            raise ValueError("content must be non-empty")
        cid = Cid.of(content)
        path = self._path(cid)
        if not path.exists():
            tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
            try:
                tmp.write_bytes(content)
                os.replace(tmp, path)
            except OSError as exc:
                raise IoFailure(str(exc)) from exc
        return cid

    def get(self, cid: Cid | str) -> bytes:
        if isinstance(cid, str):
            cid = Cid.parse(cid)
        try:
            data = self._path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFound(str(cid)) from None
        if hashlib.sha256(data).hexdigest() != cid.digest:
            raise NotFound(f"{cid} (stored bytes fail their hash)")
        return data

    def __len__(self) -> int:
        return sum(1 for p in self.root.glob("sha256-*") if "." not in p.name)

    def cids(self) -> list[Cid]:
        return sorted(Cid(p.name[7:]) for p in self.root.glob("sha256-*") if "." not in p.name)


def store_put(store: ContentStore, content: bytes) -> Cid:
    return store.put(content)


def store_get(store: ContentStore, cid: Cid | str) -> bytes:
    return store.get(cid)


# -- revocation ledger -------------------------------------------------------

@dataclass(frozen=True)
class RevocationEvent:
    credential_id: bytes
    reason: str

    def to_document(self) -> dict[str, Any]:
        return {"credential_id": self.credential_id, "reason": self.reason}


@dataclass(frozen=True)
class RevocationBlock:
    index: int
    prev_hash: bytes
    timestamp: int
    events: tuple[RevocationEvent, ...]
    block_hash: bytes

    @staticmethod
    def compute_hash(index: int, prev_hash: bytes, timestamp: int, events: Sequence[RevocationEvent]) -> bytes:
        return hashlib.sha256(canonicalize({
            "events": [e.to_document() for e in events],
            "index": index,
            "prev_hash": prev_hash,
            "timestamp": timestamp,
        })).digest()

    @classmethod
    def create(cls, index: int, prev_hash: bytes, timestamp: int, events: Sequence[RevocationEvent]) -> RevocationBlock:
        events = tuple(events)
        return cls(index, prev_hash, timestamp, events, cls.compute_hash(index, prev_hash, timestamp, events))

    def recomputes(self) -> bool:
        return self.compute_hash(self.index, self.prev_hash, self.timestamp, self.events) == self.block_hash

    def to_document(self) -> dict[str, Any]:
        return {
            "block_hash": self.block_hash,
            "events": [e.to_document() for e in self.events],
            "index": self.index,
            "prev_hash": self.prev_hash,
            "timestamp": self.timestamp,
        }

    def to_line(self) -> bytes:
        return canonicalize(self.to_document())

    @classmethod
    def from_document(cls, doc: Any) -> RevocationBlock:
        if not isinstance(doc, dict) or set(doc) != {"block_hash", "events", "index", "prev_hash", "timestamp"}:
            raise MalformedEncoding("block document has wrong fields")
        for key in ("index", "timestamp"):
            if isinstance(doc[key], bool) or not isinstance(doc[key], int):
                raise MalformedEncoding(f"{key} must be an integer")
        if not isinstance(doc["events"], list):
            raise MalformedEncoding("events must be a list")
        events = []
        for ev in doc["events"]:
            if not isinstance(ev, dict) or set(ev) != {"credential_id", "reason"} or not isinstance(ev["reason"], str):
                raise MalformedEncoding("malformed revocation event")
            events.append(RevocationEvent(parse_hex(ev["credential_id"], 16), ev["reason"]))
        return cls(
            index=doc["index"],
            prev_hash=parse_hex(doc["prev_hash"], 32),
            timestamp=doc["timestamp"],
            events=tuple(events),
            block_hash=parse_hex(doc["block_hash"], 32),
        )


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    first_bad_index: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def _verify_blocks(blocks: Sequence[RevocationBlock]) -> ChainStatus:
    prev = ZERO_HASH
    for i, block in enumerate(blocks):
        if block.index != i or block.prev_hash != prev or not block.recomputes():
            return ChainStatus(False, i)
        prev = block.block_hash
    return ChainStatus(True)


class RevocationLedger:
    """Single-writer, multi-reader hash-chained revocation ledger.

    With ``path`` set, every block is also appended to a line-delimited file
    and readers in other processes pick new blocks up via :meth:`reload`.
    """

    def __init__(self, path: str | os.PathLike[str] | None = None) -> None:
        self._blocks: list[RevocationBlock] = []
        self._revoked_at: dict[bytes, int] = {}
        self._lock = threading.RLock()
        self._subscribers: list[Callable[[RevocationBlock], None]] = []
        self.path = Path(path) if path is not None else None
        self._file_offset = 0
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
            self.reload()

    @property
    def height(self) -> int:
        return len(self._blocks)

    @property
    def blocks(self) -> tuple[RevocationBlock, ...]:
        with self._lock:
            return tuple(self._blocks)

    def head_hash(self) -> bytes:
        with self._lock:
            return self._blocks[-1].block_hash if self._blocks else ZERO_HASH

    def subscribe(self, callback: Callable[[RevocationBlock], None]) -> None:
        self._subscribers.append(callback)

    def _index(self, block: RevocationBlock) -> None:
        self._blocks.append(block)
        for ev in block.events:
            self._revoked_at.setdefault(ev.credential_id, block.index)

    def append_revocation(self, credential_id: bytes, reason: str, now: int) -> RevocationBlock:
        credential_id = bytes(credential_id)
        with self._lock, self._file_lock():
            if self.path is not None:
                self.reload()
            if credential_id in self._revoked_at:
                raise AlreadyRevoked(credential_id.hex())
            block = RevocationBlock.create(
                self.height, self.head_hash(), int(now), [RevocationEvent(credential_id, reason)]
            )
            if self.path is not None:
                self._write_line(block)
            self._index(block)
        for cb in list(self._subscribers):
            cb(block)
        return block

    def _file_lock(self) -> FileLock | contextlib.nullcontext[None]:
        # serializes writers in different processes sharing one ledger file
        return FileLock(str(self.path) + ".lock") if self.path is not None else contextlib.nullcontext()

    def _write_line(self, block: RevocationBlock) -> None:
        assert self.path is not None
        with open(self.path, "ab") as fh:
            fh.write(block.to_line() + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._file_offset = self.path.stat().st_size

    def reload(self) -> int:
        """Read blocks appended to the backing file since the last call."""
        if self.path is None:
            return 0
        with self._lock:
            try:
                with open(self.path, "rb") as fh:
                    fh.seek(self._file_offset)
                    data = fh.read()
            except OSError as exc:
                raise IoFailure(str(exc)) from exc
            complete = data[: data.rfind(b"\n") + 1]
            added = 0
            for line in complete.splitlines():
                block = RevocationBlock.from_document(decode_canonical(line))
                if block.index != self.height or block.prev_hash != self.head_hash() or not block.recomputes():
                    raise IoFailure(f"ledger file broken at block {self.height}")
                self._index(block)
                added += 1
            self._file_offset += len(complete)
            return added

    def revoked_height(self, credential_id: bytes) -> int | None:
        """Ledger height at which *credential_id* first counts as revoked."""
        idx = self._revoked_at.get(bytes(credential_id))
        return None if idx is None else idx + 1

    def revoked_set(self, height: int | None = None) -> frozenset[bytes]:
        with self._lock:
            h = self.height if height is None else min(height, self.height)
            return frozenset(cid for cid, idx in self._revoked_at.items() if idx < h)

    def verify(self) -> ChainStatus:
        return _verify_blocks(self.blocks)


def append_revocation(ledger: RevocationLedger, credential_id: bytes, reason: str, now: int) -> RevocationBlock:
    return ledger.append_revocation(credential_id, reason, now)


def verify_chain(ledger: RevocationLedger | Sequence[RevocationBlock]) -> ChainStatus:
    if isinstance(ledger, RevocationLedger):
        return ledger.verify()
    return _verify_blocks(list(ledger))


def export_ledger(ledger: RevocationLedger | Iterable[RevocationBlock]) -> bytes:
    blocks = ledger.blocks if isinstance(ledger, RevocationLedger) else ledger
    return b"".join(b.to_line() + b"\n" for b in blocks)


def import_ledger(data: bytes) -> tuple[list[RevocationBlock], ChainStatus]:
    """Parse an exported ledger and verify it.

    Returns the blocks that parsed before the first malformed line together
    with the chain status; a malformed line counts as a break at its index.
    """
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    blocks: list[RevocationBlock] = []
    for i, line in enumerate(lines):
        try:
            blocks.append(RevocationBlock.from_document(decode_canonical(line)))
        except (MalformedEncoding, ValueError):
            status = _verify_blocks(blocks)
            return blocks, status if not status.ok else ChainStatus(False, i)
    return blocks, _verify_blocks(blocks)


# -- per-node cached views -----------------------------------------------------

POLLING = "polling"
EVENT_DRIVEN = "event-driven"
CACHE_MODES = (POLLING, EVENT_DRIVEN)


@dataclass(frozen=True)
class LedgerView:
    """A node's cached picture of the revocation ledger.

    ``fetched_at`` is the node-clock time of the last full (poll) refresh and
    drives both the poll schedule and TTL staleness. Push notifications in
    event-driven mode advance ``as_of_height`` without touching it, so
    enabling push never delays a poll.
    """

    node_id: str
    revoked_set: frozenset[bytes] = field(default_factory=frozenset)
    as_of_height: int = 0
    fetched_at: int | float = 0
    ttl_ms: int = DEFAULT_TTL_MS
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS
    mode: str = POLLING

    def age(self, node_now: float) -> float:
        return node_now - self.fetched_at

    def is_stale(self, node_now: float) -> bool:
        return self.age(node_now) >= self.ttl_ms


def new_view(
    node_id: str,
    ttl_ms: int = DEFAULT_TTL_MS,
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS,
    mode: str = POLLING,
    fetched_at: float = float("-inf"),
) -> LedgerView:
    if mode not in CACHE_MODES:
        raise ConfigError(f"unknown cache mode {mode!r}")
    if ttl_ms < 0 or poll_interval_ms < 0:
        raise ConfigError("ttl_ms and poll_interval_ms must be >= 0")
    return LedgerView(node_id, frozenset(), 0, fetched_at, ttl_ms, poll_interval_ms, mode)


def snapshot_view(view: LedgerView, ledger: RevocationLedger, node_now: float) -> LedgerView:
    """Unconditional full refresh."""
    with ledger._lock:
        height = ledger.height
        revoked = ledger.revoked_set(height)
    return replace(view, revoked_set=revoked, as_of_height=height, fetched_at=node_now)


def refresh_view(
    view: LedgerView,
    ledger: RevocationLedger,
    node_now: float,
    notification: RevocationBlock | int | None = None,
) -> LedgerView:
    """Apply the cache policy.

    Polling (both modes): full refresh once ``poll_interval_ms`` has elapsed
    since ``fetched_at``. Event-driven mode additionally jumps to the current
    ledger height when a notification for a block not yet seen arrives.
    """
    if notification is not None:
        view = apply_notification(view, ledger, notification)
    if node_now - view.fetched_at >= view.poll_interval_ms:
        return snapshot_view(view, ledger, node_now)
    return view


def apply_notification(view: LedgerView, ledger: RevocationLedger, notification: RevocationBlock | int) -> LedgerView:
    """Event-driven push: jump to the ledger head if the notified block is new.

    Leaves ``fetched_at`` alone and is a no-op for polling-mode views.
    """
    if view.mode != EVENT_DRIVEN:
        return view
    notified = notification.index + 1 if isinstance(notification, RevocationBlock) else int(notification)
    if notified <= view.as_of_height:
        return view
    with ledger._lock:
        height = ledger.height
        revoked = ledger.revoked_set(height)
    return replace(view, revoked_set=revoked, as_of_height=height)


def merge_views(current: LedgerView, incoming: LedgerView) -> LedgerView:
    """Combine a view with a snapshot that arrived late; never moves backwards."""
    base = incoming if incoming.as_of_height > current.as_of_height else current
    return replace(base, fetched_at=max(current.fetched_at, incoming.fetched_at))


@dataclass(frozen=True)
class RevocationStatus:
    revoked: bool
    as_of_height: int
    stale: bool = False

    def __bool__(self) -> bool:
        return self.revoked


def is_revoked(view: LedgerView, credential_id: bytes, node_now: float | None = None) -> RevocationStatus:
    stale = False if node_now is None else view.is_stale(node_now)
    return RevocationStatus(bytes(credential_id) in view.revoked_set, view.as_of_height, stale)
