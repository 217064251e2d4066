"""Independent verifier node.

Each node checks a proof, confirms the credential metadata in the content
store, consults its *own cached* view of the revocation ledger, and returns a
signed vote. Every internal failure becomes a rejection.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import MalformedEncoding
from .identity import KeyPair, verify_signature
from .proof import ACCEPT, DEFAULT_EPOCH_TOLERANCE, AuthProof, Verdict, verify_proof
from .trust import (
    EVENT_DRIVEN,
    ContentStore,
    LedgerView,
    RevocationBlock,
    RevocationLedger,
    is_revoked,
    merge_views,
    new_view,
    refresh_view,
    snapshot_view,
)

__all__ = ["REJECT_REASONS", "VerifierNode", "VerifyResult", "VerifyTask"]

REJECT_REASONS = frozenset({
    "bad_signature", "stale_challenge", "stale_epoch", "metadata_missing", "metadata_mismatch", "revoked",
})


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class VerifyTask:
    task_id: str
    proof: AuthProof
    subject_public_key: bytes
    expected_challenge: bytes
    deadline: int

    def to_document(self) -> dict[str, Any]:
        return {
            "deadline": self.deadline,
            "expected_challenge": self.expected_challenge,
            "proof": self.proof.to_document(),
            "subject_public_key": self.subject_public_key,
            "task_id": self.task_id,
        }

    @classmethod
    def from_document(cls, doc: Any) -> VerifyTask:
        if not isinstance(doc, dict) or set(doc) != {
            "deadline", "expected_challenge", "proof", "subject_public_key", "task_id",
        }:
            raise MalformedEncoding("verify task has wrong fields")
        if not isinstance(doc["task_id"], str) or isinstance(doc["deadline"], bool) or not isinstance(doc["deadline"], int):
            raise MalformedEncoding("bad task_id or deadline")
        return cls(
            task_id=doc["task_id"],
            proof=AuthProof.from_document(doc["proof"]),
            subject_public_key=parse_hex(doc["subject_public_key"], 32),
            expected_challenge=parse_hex(doc["expected_challenge"]),
            deadline=doc["deadline"],
        )


@dataclass(frozen=True)
class VerifyResult:
    task_id: str
    node_id: str
    vote: Verdict
    as_of_height: int
    node_signature: bytes = b""

    def signed_fields(self) -> dict[str, Any]:
        return {
            "as_of_height": self.as_of_height,
            "node_id": self.node_id,
            "reason": self.vote.reason or "",
            "task_id": self.task_id,
            "vote": "accept" if self.vote.accepted else "reject",
        }

    def signing_bytes(self) -> bytes:
        return canonicalize(self.signed_fields())

    def verify(self, node_public_key: bytes) -> bool:
        if not self.vote.accepted and self.vote.reason not in REJECT_REASONS:
            return False
        return verify_signature(node_public_key, self.node_signature, self.signing_bytes())

    def to_document(self) -> dict[str, Any]:
        doc = self.signed_fields()
        doc["node_signature"] = self.node_signature
        return doc

    @classmethod
    def from_document(cls, doc: Any) -> VerifyResult:
        if not isinstance(doc, dict) or set(doc) != {
            "as_of_height", "node_id", "node_signature", "reason", "task_id", "vote",
        }:
            raise MalformedEncoding("verify result has wrong fields")
        if doc["vote"] not in ("accept", "reject"):
            raise MalformedEncoding("vote must be accept or reject")
        vote = ACCEPT if doc["vote"] == "accept" else Verdict.reject(doc["reason"])
        return cls(
            task_id=str(doc["task_id"]),
            node_id=str(doc["node_id"]),
            vote=vote,
            as_of_height=int(doc["as_of_height"]),
            node_signature=parse_hex(doc["node_signature"]),
        )


class VerifierNode:
    """One verifier. ``clock`` returns node-local milliseconds.

    With ``auto_refresh`` the node applies its cache policy itself on every
    task (and subscribes to ledger pushes in event-driven mode). The simulator
    turns it off and delivers views with network delay instead.
    """

    def __init__(
        self,
        node_id: str,
        keys: KeyPair,
        store: ContentStore,
        ledger: RevocationLedger,
        *,
        view: LedgerView | None = None,
        epoch_tolerance: int = DEFAULT_EPOCH_TOLERANCE,
        clock: Callable[[], float] = _now_ms,
        auto_refresh: bool = True,
    ) -> None:
        self.node_id = node_id
        self.keys = keys
        self.store = store
        self.ledger = ledger
        self.view = view if view is not None else new_view(node_id)
        self.epoch_tolerance = epoch_tolerance
        self.clock = clock
        self.auto_refresh = auto_refresh
        self.processed = 0
        self.last_refresh: float | None = None
        self._view_lock = threading.Lock()
        self._count_lock = threading.Lock()
        if auto_refresh and self.view.mode == EVENT_DRIVEN:
            ledger.subscribe(self.on_revocation)

    @property
    def public_key(self) -> bytes:
        return self.keys.public_key

    # -- cache maintenance --------------------------------------------------

    def install_view(self, incoming: LedgerView) -> LedgerView:
        with self._view_lock:
            self.view = merge_views(self.view, incoming)
            self.last_refresh = self.view.fetched_at
            return self.view

    def sync(self, now: float | None = None, notification: RevocationBlock | int | None = None) -> LedgerView:
        now = self.clock() if now is None else now
        with self._view_lock:
            reload = getattr(self.ledger, "reload", None)
            if reload is not None and self.ledger.path is not None:
                reload()
            view = refresh_view(self.view, self.ledger, now, notification)
            if view.is_stale(now):
                view = snapshot_view(view, self.ledger, now)
            if view is not self.view:
                self.last_refresh = now
            self.view = view
            return view

    def on_revocation(self, block: RevocationBlock) -> None:
        self.sync(notification=block)

    # -- task handling ------------------------------------------------------

    def _sign(self, task_id: str, vote: Verdict, height: int) -> VerifyResult:
        unsigned = VerifyResult(task_id, self.node_id, vote, height)
        return VerifyResult(task_id, self.node_id, vote, height, self.keys.sign(unsigned.signing_bytes()))

    def evaluate(self, task: VerifyTask, view: LedgerView, now: float) -> Verdict:
        """The three checks, in order, against a given view."""
        if now > task.deadline:
            return Verdict.reject("stale_challenge")
        try:
            verdict = verify_proof(task.proof, task.subject_public_key, task.expected_challenge,
                                   view.as_of_height, self.epoch_tolerance)
        except Exception:
            verdict = Verdict.reject("bad_signature")
        if not verdict.accepted:
            return verdict

        try:
            raw = self.store.get(task.proof.metadata_cid)
        except Exception:
            return Verdict.reject("metadata_missing")
        try:
            doc = decode_canonical(raw)
            if doc.get("credential_id") != task.proof.credential_id.hex():
                return Verdict.reject("metadata_mismatch")
            if doc.get("subject_did") != str(task.proof.subject_did):
                return Verdict.reject("metadata_mismatch")
        except Exception:
            return Verdict.reject("metadata_mismatch")

        try:
            if is_revoked(view, task.proof.credential_id).revoked:
                return Verdict.reject("revoked")
        except Exception:
            return Verdict.reject("revoked")
        return ACCEPT

    def handle_verify_task(self, task: VerifyTask, now: float | None = None) -> VerifyResult:
        now = self.clock() if now is None else now
        try:
            view = self.sync(now) if self.auto_refresh else self.view
        except Exception:
            # cannot establish revocation status: fail closed
            view = self.view
            verdict = Verdict.reject("revoked")
        else:
            verdict = self.evaluate(task, view, now)
        with self._count_lock:
            self.processed += 1
        return self._sign(task.task_id, verdict, view.as_of_height)

    def node_status(self) -> dict[str, Any]:
        status: dict[str, Any] = {
            "node_id": self.node_id,
            "processed": self.processed,
            "public_key": self.public_key.hex(),
            "view_height": self.view.as_of_height,
        }
        # omitted until the first refresh so the document stays canonical
        if self.last_refresh is not None and math.isfinite(self.last_refresh):
            status["last_refresh"] = int(self.last_refresh)
        return status
