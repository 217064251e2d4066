"""Per-node hash-chained audit logs.

Two write policies are supported. ``naive`` appends in arrival order, so two
nodes receiving the same events in different orders end up with different
chains. ``deterministic`` holds events for a settle delay and appends them in
``(event_time, event_id)`` order, which makes every node converge on one head
hash as long as network delay stays under the settle delay.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import ConfigError, MalformedEncoding

__all__ = [
    "DEFAULT_SETTLE_DELAY_MS",
    "EVENT_TYPES",
    "AuditEntry",
    "AuditEvent",
    "AuditLog",
    "ConsistencyReport",
    "LogStatus",
    "append_event",
    "compare_logs",
    "export_log",
    "import_log",
    "verify_log",
]

EVENT_TYPES = ("enroll", "auth_accept", "auth_reject", "revoke", "view_refresh")
NAIVE = "naive"
DETERMINISTIC = "deterministic"
POLICIES = (NAIVE, DETERMINISTIC)
DEFAULT_SETTLE_DELAY_MS = 250
ZERO_HASH = bytes(32)


@dataclass(frozen=True)
class AuditEvent:
    event_type: str
    actor_did: str
    payload_digest: bytes
    event_time: int
    event_id: bytes

    @classmethod
    def create(
        cls,
        event_type: str,
        actor_did: str,
        payload: Mapping[str, Any],
        event_time: int,
        event_id: bytes | None = None,
    ) -> AuditEvent:
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown audit event type {event_type!r}")
        digest = hashlib.sha256(canonicalize(dict(payload))).digest()
        if event_id is None:
            event_id = os.urandom(16)
        return cls(event_type, str(actor_did), digest, int(event_time), bytes(event_id))

    def order_key(self) -> tuple[int, bytes]:
        return (self.event_time, self.event_id)


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    prev_hash: bytes
    event_type: str
    actor_did: str
    payload_digest: bytes
    event_time: int
    event_id: bytes
    entry_hash: bytes

    @staticmethod
    def compute_hash(seq: int, prev_hash: bytes, event: AuditEvent) -> bytes:
        return hashlib.sha256(canonicalize({
            "actor_did": event.actor_did,
            "event_id": event.event_id,
            "event_time": event.event_time,
            "event_type": event.event_type,
            "payload_digest": event.payload_digest,
            "prev_hash": prev_hash,
            "seq": seq,
        })).digest()

    @property
    def event(self) -> AuditEvent:
        return AuditEvent(self.event_type, self.actor_did, self.payload_digest, self.event_time, self.event_id)

    def recomputes(self) -> bool:
        return self.compute_hash(self.seq, self.prev_hash, self.event) == self.entry_hash

    def to_document(self) -> dict[str, Any]:
        return {
            "actor_did": self.actor_did,
            "entry_hash": self.entry_hash,
            "event_id": self.event_id,
            "event_time": self.event_time,
            "event_type": self.event_type,
            "payload_digest": self.payload_digest,
            "prev_hash": self.prev_hash,
            "seq": self.seq,
        }

    def to_line(self) -> bytes:
        return canonicalize(self.to_document())

    @classmethod
    def from_document(cls, doc: Any) -> AuditEntry:
        keys = {"actor_did", "entry_hash", "event_id", "event_time", "event_type", "payload_digest", "prev_hash", "seq"}
        if not isinstance(doc, dict) or set(doc) != keys:
            raise MalformedEncoding("audit entry has wrong fields")
        for key in ("seq", "event_time"):
            if isinstance(doc[key], bool) or not isinstance(doc[key], int):
                raise MalformedEncoding(f"{key} must be an integer")
        if doc["event_type"] not in EVENT_TYPES or not isinstance(doc["actor_did"], str):
            raise MalformedEncoding("bad event_type or actor_did")
        return cls(
            seq=doc["seq"],
            prev_hash=parse_hex(doc["prev_hash"], 32),
            event_type=doc["event_type"],
            actor_did=doc["actor_did"],
            payload_digest=parse_hex(doc["payload_digest"], 32),
            event_time=doc["event_time"],
            event_id=parse_hex(doc["event_id"], 16),
            entry_hash=parse_hex(doc["entry_hash"], 32),
        )


class AuditLog:
    def __init__(self, policy: str = DETERMINISTIC, settle_delay_ms: int = DEFAULT_SETTLE_DELAY_MS) -> None:
        if policy not in POLICIES:
            raise ConfigError(f"unknown audit policy {policy!r}")
        if settle_delay_ms < 0:
            raise ConfigError("settle_delay_ms must be >= 0")
        self.policy = policy
        self.settle_delay_ms = settle_delay_ms
        self.entries: list[AuditEntry] = []
        self._pending: list[tuple[int, bytes, AuditEvent]] = []
        # events that arrived after a later-ordered event had been written
        self.late_arrivals = 0

    @property
    def head_hash(self) -> bytes:
        return self.entries[-1].entry_hash if self.entries else ZERO_HASH

    @property
    def pending(self) -> int:
        return len(self._pending)

    def _write(self, event: AuditEvent) -> AuditEntry:
        if self.entries and event.order_key() < self.entries[-1].event.order_key():
            self.late_arrivals += 1
        entry = AuditEntry(
            seq=len(self.entries),
            prev_hash=self.head_hash,
            event_type=event.event_type,
            actor_did=event.actor_did,
            payload_digest=event.payload_digest,
            event_time=event.event_time,
            event_id=event.event_id,
            entry_hash=AuditEntry.compute_hash(len(self.entries), self.head_hash, event),
        )
        self.entries.append(entry)
        return entry

    def append_event(self, event: AuditEvent, arrival_time: float) -> list[AuditEntry]:
        """Accept *event* at *arrival_time*; return the entries written now.

        Under the naive policy that is always exactly the new event. Under the
        deterministic policy it is whatever the settle window releases, which
        may be nothing.
        """
        if self.policy == NAIVE:
            return [self._write(event)]
        heapq.heappush(self._pending, (event.event_time, event.event_id, event))
        return self.advance(arrival_time)

    def advance(self, now: float) -> list[AuditEntry]:
        """Release buffered events whose settle delay has elapsed by *now*."""
        out = []
        while self._pending and self._pending[0][0] + self.settle_delay_ms <= now:
            out.append(self._write(heapq.heappop(self._pending)[2]))
        return out

    def next_release_time(self) -> float | None:
        return self._pending[0][0] + self.settle_delay_ms if self._pending else None

    def flush(self) -> list[AuditEntry]:
        out = []
        while self._pending:
            out.append(self._write(heapq.heappop(self._pending)[2]))
        return out


def append_event(log: AuditLog, event: AuditEvent, arrival_time: float) -> list[AuditEntry]:
    return log.append_event(event, arrival_time)


@dataclass(frozen=True)
class LogStatus:
    ok: bool
    first_bad_seq: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_log(log: AuditLog | Sequence[AuditEntry]) -> LogStatus:
    entries = log.entries if isinstance(log, AuditLog) else log
    prev = ZERO_HASH
    for i, entry in enumerate(entries):
        if entry.seq != i or entry.prev_hash != prev or not entry.recomputes():
            return LogStatus(False, i)
        prev = entry.entry_hash
    return LogStatus(True)


def export_log(log: AuditLog | Iterable[AuditEntry]) -> bytes:
    entries = log.entries if isinstance(log, AuditLog) else log
    return b"".join(e.to_line() + b"\n" for e in entries)


def import_log(data: bytes) -> tuple[list[AuditEntry], LogStatus]:
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    entries: list[AuditEntry] = []
    for i, line in enumerate(lines):
        try:
            entries.append(AuditEntry.from_document(decode_canonical(line)))
        except (MalformedEncoding, ValueError):
            status = verify_log(entries)
            return entries, status if not status.ok else LogStatus(False, i)
    return entries, verify_log(entries)


@dataclass(frozen=True)
class ConsistencyReport:
    node_count: int
    head_hashes: tuple[str, ...]
    diverged: bool
    first_divergent_seq: int | None
    multisets_equal: bool
    kind: str  # "consistent" | "reordered" | "missing"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["head_hashes"] = list(self.head_hashes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "head_hash", "diverged", "first_divergent_seq", "multisets_equal", "kind"])
        for i, head in enumerate(self.head_hashes):
            w.writerow([i, head, self.diverged, "" if self.first_divergent_seq is None else self.first_divergent_seq,
                        self.multisets_equal, self.kind])
        return buf.getvalue()


def compare_logs(logs: Sequence[AuditLog | Sequence[AuditEntry]]) -> ConsistencyReport:
    if len(logs) < 2:
        raise ValueError("compare_logs needs at least two logs")
    chains = [log.entries if isinstance(log, AuditLog) else list(log) for log in logs]
    heads = tuple((c[-1].entry_hash if c else ZERO_HASH).hex() for c in chains)
    diverged = len(set(heads)) > 1
    first = None
    if diverged:
        longest = max(len(c) for c in chains)
        for seq in range(longest):
            hashes = {c[seq].entry_hash if seq < len(c) else None for c in chains}
            if len(hashes) > 1:
                first = seq
                break
    multisets = [Counter(e.event_id for e in c) for c in chains]
    equal = all(m == multisets[0] for m in multisets[1:])
    kind = "consistent" if not diverged else ("reordered" if equal else "missing")
    return ConsistencyReport(len(chains), heads, diverged, first, equal, kind)
