"""Stateless orchestration gateway.

The gateway validates requests, hands out single-use challenges, fans proofs
out to every registered verifier node, and grants a session only when a quorum
of distinct nodes accepts. The only per-request state it keeps is the set of
outstanding challenges, which carry no identity material.
"""

from __future__ import annotations

import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from .audit import AuditEvent
from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import (
    ConfigError,
    InvalidCredential,
    MalformedEncoding,
    PrivacyViolation,
    RateLimited,
    UnknownChallenge,
    UnsupportedValue,
)
from .identity import Credential, Did, Issuer, find_biometric_keys, verify_credential, verify_signature
from .node import VerifyResult, VerifyTask
from .proof import CHALLENGE_BYTES, DEFAULT_EPOCH_TOLERANCE, AuthProof
from .ratelimit import RateLimiter
from .tokens import TokenCheck, mint_token, validate_token
from .trust import Cid, ContentStore, RevocationBlock, RevocationLedger

__all__ = [
    "AuthOutcome",
    "AuthRequest",
    "AuthRound",
    "Challenge",
    "Decision",
    "EnrollRequest",
    "Gateway",
    "GatewayConfig",
    "RevokeRequest",
    "aggregate",
    "default_quorum",
    "find_biometric_material",
    "quorum_flags",
]


def _now_ms() -> int:
    return int(time.time() * 1000)


def default_quorum(n_nodes: int) -> int:
    """ceil((n+1)/2): the smallest quorum no single node can satisfy alone."""
    return (n_nodes + 2) // 2


def quorum_flags(quorum: int, n_nodes: int) -> dict[str, bool]:
    """Whether one node can decide alone: grant (q <= 1) or deny (q >= n)."""
    return {"unilateral_grant": quorum <= 1, "unilateral_deny": quorum >= n_nodes}


@dataclass(frozen=True)
class Decision:
    outcome: str
    votes: tuple[VerifyResult | None, ...]
    quorum: int
    n_nodes: int
    accept_count: int
    reason: str | None = None
    unilateral: bool = False

    @property
    def accepted(self) -> bool:
        return self.outcome == "accept"

    def to_document(self) -> dict[str, Any]:
        return {
            "accept_count": self.accept_count,
            "n_nodes": self.n_nodes,
            "outcome": self.outcome,
            "quorum": self.quorum,
            "reason": self.reason or "",
            "unilateral": self.unilateral,
            "votes": [
                {"node_id": v.node_id, "vote": str(v.vote), "as_of_height": v.as_of_height} if v else {"vote": "timeout"}
                for v in self.votes
            ],
        }


def aggregate(votes: Sequence[VerifyResult | None], quorum: int, n_nodes: int) -> Decision:
    """Fail-closed quorum rule.

    ``None`` entries (timeouts, bad signatures) and nodes that never answered
    count as rejections. Several accepts from one node id count once.
    """
    if not 1 <= quorum <= n_nodes:
        raise ConfigError(f"quorum must be in 1..{n_nodes}, got {quorum}")
    if len(votes) > n_nodes:
        raise ConfigError(f"{len(votes)} votes for {n_nodes} nodes")
    accepting = {v.node_id for v in votes if v is not None and v.vote.accepted}
    flags = quorum_flags(quorum, n_nodes)
    unilateral = flags["unilateral_grant"] or flags["unilateral_deny"]
    if len(accepting) >= quorum:
        return Decision("accept", tuple(votes), quorum, n_nodes, len(accepting), None, unilateral)
    reasons = sorted(v.vote.reason or "" for v in votes if v is not None and not v.vote.accepted)
    if reasons:
        reason = max(sorted(set(reasons)), key=reasons.count)
    else:
        reason = "timeout"
    return Decision("reject", tuple(votes), quorum, n_nodes, len(accepting), reason, unilateral)


# -- requests ------------------------------------------------------------------

_BLOBBY = re.compile(r"[A-Za-z0-9+/=_-]{256,}")


def find_biometric_material(doc: Any, path: str = "") -> list[str]:
    """Biometric-named keys plus values that look like an encoded template.

    Long hex/base64 strings and long numeric arrays are treated as smuggled
    embeddings; metadata never legitimately carries either.
    """
    hits = find_biometric_keys(doc, path)
    if isinstance(doc, Mapping):
        for key, value in doc.items():
            hits.extend(_blob_hits(value, f"{path}.{key}" if path else str(key)))
    elif isinstance(doc, (list, tuple)):
        hits.extend(_blob_hits(doc, path))
    return hits


def _blob_hits(value: Any, path: str) -> list[str]:
    if isinstance(value, (bytes, bytearray)) and len(value) >= 128:
        return [path]
    if isinstance(value, str) and _BLOBBY.fullmatch(value):
        return [path]
    if isinstance(value, (list, tuple)):
        if len(value) >= 64 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            return [path]
        out = []
        for i, item in enumerate(value):
            out.extend(_blob_hits(item, f"{path}[{i}]"))
        return out
    if isinstance(value, Mapping):
        return find_biometric_material(value, path)
    return []


@dataclass(frozen=True)
class EnrollRequest:
    credential: Credential
    issuer_public_key: bytes
    metadata: Mapping[str, Any]

    def to_document(self) -> dict[str, Any]:
        return {
            "credential": self.credential.to_document(),
            "issuer_public_key": self.issuer_public_key,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_document(cls, doc: Any) -> EnrollRequest:
        if not isinstance(doc, dict) or set(doc) != {"credential", "issuer_public_key", "metadata"}:
            raise MalformedEncoding("enroll request has wrong fields")
        if not isinstance(doc["metadata"], dict):
            raise MalformedEncoding("metadata must be a map")
        return cls(Credential.from_document(doc["credential"]), parse_hex(doc["issuer_public_key"], 32), doc["metadata"])


@dataclass(frozen=True)
class AuthRequest:
    proof: AuthProof
    subject_public_key: bytes

    def to_document(self) -> dict[str, Any]:
        return {"proof": self.proof.to_document(), "subject_public_key": self.subject_public_key}

    @classmethod
    def from_document(cls, doc: Any) -> AuthRequest:
        if not isinstance(doc, dict) or set(doc) != {"proof", "subject_public_key"}:
            raise MalformedEncoding("auth request has wrong fields")
        return cls(AuthProof.from_document(doc["proof"]), parse_hex(doc["subject_public_key"], 32))


@dataclass(frozen=True)
class RevokeRequest:
    credential_id: bytes
    metadata_cid: str
    reason: str
    requested_at: int
    issuer_public_key: bytes
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return canonicalize({
            "credential_id": self.credential_id,
            "metadata_cid": self.metadata_cid,
            "purpose": "revoke/v1",
            "reason": self.reason,
            "requested_at": self.requested_at,
        })

    @classmethod
    def create(cls, issuer: Issuer, credential_id: bytes, metadata_cid: str, reason: str, now: int) -> RevokeRequest:
        unsigned = cls(bytes(credential_id), metadata_cid, reason, int(now), issuer.keys.public_key)
        return cls(**{**unsigned.__dict__, "signature": issuer.keys.sign(unsigned.signing_bytes())})

    def to_document(self) -> dict[str, Any]:
        return {
            "credential_id": self.credential_id,
            "issuer_public_key": self.issuer_public_key,
            "metadata_cid": self.metadata_cid,
            "reason": self.reason,
            "requested_at": self.requested_at,
            "signature": self.signature,
        }

    @classmethod
    def from_document(cls, doc: Any) -> RevokeRequest:
        keys = {"credential_id", "issuer_public_key", "metadata_cid", "reason", "requested_at", "signature"}
        if not isinstance(doc, dict) or set(doc) != keys:
            raise MalformedEncoding("revoke request has wrong fields")
        if not isinstance(doc["reason"], str) or not isinstance(doc["metadata_cid"], str):
            raise MalformedEncoding("reason and metadata_cid must be strings")
        if isinstance(doc["requested_at"], bool) or not isinstance(doc["requested_at"], int):
            raise MalformedEncoding("requested_at must be an integer")
        return cls(
            parse_hex(doc["credential_id"], 16), doc["metadata_cid"], doc["reason"], doc["requested_at"],
            parse_hex(doc["issuer_public_key"], 32), parse_hex(doc["signature"]),
        )


@dataclass(frozen=True)
class Challenge:
    challenge: bytes
    expires: int

    def to_document(self) -> dict[str, Any]:
        return {"challenge": self.challenge, "expires": self.expires}


@dataclass(frozen=True)
class AuthRound:
    """A consumed challenge and the tasks to send, one per registered node."""

    request: AuthRequest
    tasks: dict[str, VerifyTask]
    started_at: int


@dataclass(frozen=True)
class AuthOutcome:
    decision: Decision
    token: str | None = None

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"decision": self.decision.to_document()}
        if self.token is not None:
            doc["token"] = self.token
        return doc


# -- gateway ---------------------------------------------------------------------

@dataclass
class GatewayConfig:
    quorum: int | None = None  # None: default_quorum(registered nodes)
    node_timeout_ms: int = 2000
    token_lifetime_s: int = 900
    challenge_ttl_ms: int = 30_000
    rate_capacity: int = 20
    rate_refill_per_s: float = 10.0
    epoch_tolerance: int = DEFAULT_EPOCH_TOLERANCE
    legacy_expiry: bool = False
    trusted_issuers: frozenset[str] | None = None
    max_workers: int = 256


@dataclass
class RegisteredNode:
    node_id: str
    public_key: bytes
    transport: Callable[[VerifyTask], VerifyResult]


Transport = Callable[[VerifyTask], VerifyResult]


class Gateway:
    def __init__(
        self,
        store: ContentStore,
        ledger: RevocationLedger,
        mac_key: bytes,
        config: GatewayConfig | None = None,
        *,
        clock: Callable[[], int] = _now_ms,
        rng: Callable[[int], bytes] = os.urandom,
        audit_sink: Callable[[AuditEvent], None] | None = None,
    ) -> None:
        if len(mac_key) < 32:
            raise ConfigError("MAC key must be at least 256 bits")
        self.store = store
        self.ledger = ledger
        self.config = config or GatewayConfig()
        self.clock = clock
        self.rng = rng
        self.audit_sink = audit_sink
        self._mac_key = bytes(mac_key)
        self._nodes: dict[str, RegisteredNode] = {}
        self._challenges: dict[bytes, int] = {}
        self._challenge_lock = threading.Lock()
        self._limiter = RateLimiter(self.config.rate_capacity, self.config.rate_refill_per_s)
        self._pool: ThreadPoolExecutor | None = None
        self._rng_lock = threading.Lock()

    # -- setup -----------------------------------------------------------------

    def register_node(self, node_id: str, public_key: bytes, transport: Transport) -> None:
        self._nodes[node_id] = RegisteredNode(node_id, bytes(public_key), transport)

    @property
    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    @property
    def quorum(self) -> int:
        n = len(self._nodes)
        q = self.config.quorum if self.config.quorum is not None else default_quorum(n)
        if not 1 <= q <= max(n, 1):
            raise ConfigError(f"quorum {q} out of range for {n} registered nodes")
        return q

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)
            self._pool = None

    def _random(self, n: int) -> bytes:
        with self._rng_lock:
            return self.rng(n)

    def _emit(self, event_type: str, actor: str, payload: dict[str, Any], now: int) -> None:
        if self.audit_sink is not None:
            self.audit_sink(AuditEvent.create(event_type, actor, payload, now, self._random(16)))

    def _admit(self, subject: str, now: int) -> None:
        if not self._limiter.admit(subject, now / 1000.0):
            raise RateLimited(subject)

    # -- challenges --------------------------------------------------------------

    def _purge(self, now: int) -> None:
        for c in [c for c, exp in self._challenges.items() if exp <= now]:
            del self._challenges[c]

    def issue_challenge(self, subject_did: str | Did, now: int | None = None) -> Challenge:
        now = self.clock() if now is None else now
        self._admit(str(subject_did), now)
        challenge = self._random(CHALLENGE_BYTES)
        expires = now + self.config.challenge_ttl_ms
        with self._challenge_lock:
            self._purge(now)
            self._challenges[challenge] = expires
        return Challenge(challenge, expires)

    def consume_challenge(self, challenge: bytes, now: int | None = None) -> bool:
        """Atomically remove *challenge*; True for exactly one caller."""
        now = self.clock() if now is None else now
        with self._challenge_lock:
            expires = self._challenges.pop(bytes(challenge), None)
            self._purge(now)
        return expires is not None and now < expires

    # -- enrolment -----------------------------------------------------------------

    def handle_enroll(self, req: EnrollRequest, now: int | None = None) -> dict[str, Any]:
        now = self.clock() if now is None else now
        cred = req.credential
        self._admit(str(cred.subject_did), now)
        hits = find_biometric_material(req.metadata)
        if hits:
            raise PrivacyViolation(f"metadata carries biometric material at {', '.join(hits)}")
        if not verify_credential(cred, req.issuer_public_key):
            raise InvalidCredential("credential signature does not verify")
        trusted = self.config.trusted_issuers
        if trusted is not None and str(cred.issuer_did) not in trusted:
            raise InvalidCredential(f"issuer {cred.issuer_did} is not trusted")
        if req.metadata.get("credential_id") != cred.credential_id.hex() or req.metadata.get("subject_did") != str(cred.subject_did):
            raise InvalidCredential("metadata does not describe this credential")
        try:
            blob = canonicalize(dict(req.metadata))
        except UnsupportedValue as exc:
            raise InvalidCredential(f"metadata not canonicalizable: {exc}") from exc
        if str(Cid.of(blob)) != cred.metadata_cid:
            raise InvalidCredential("metadata CID does not match the credential")
        cid = self.store.put(blob)
        self._emit("enroll", str(cred.subject_did), {"credential_id": cred.credential_id, "metadata_cid": str(cid)}, now)
        return {"credential": cred.to_document(), "metadata_cid": str(cid)}

    # -- authentication --------------------------------------------------------------

    def prepare_auth(self, req: AuthRequest, now: int) -> AuthRound:
        self._admit(str(req.proof.subject_did), now)
        if not self.consume_challenge(req.proof.challenge, now):
            raise UnknownChallenge("challenge unknown, consumed or expired")
        deadline = now + self.config.node_timeout_ms
        tasks = {
            node_id: VerifyTask(self._random(8).hex(), req.proof, req.subject_public_key, req.proof.challenge, deadline)
            for node_id in self.node_ids
        }
        return AuthRound(req, tasks, now)

    def finish_auth(self, rnd: AuthRound, results: Mapping[str, VerifyResult | None], now: int) -> AuthOutcome:
        votes: list[VerifyResult | None] = []
        for node_id in self.node_ids:
            res = results.get(node_id)
            node = self._nodes[node_id]
            task = rnd.tasks.get(node_id)
            if (res is None or task is None or res.node_id != node_id or res.task_id != task.task_id
                    or not res.verify(node.public_key)):
                votes.append(None)
            else:
                votes.append(res)
        decision = aggregate(votes, self.quorum, len(self._nodes))
        proof = rnd.request.proof
        token = None
        if decision.accepted:
            iat = now // 1000
            token = mint_token(self._mac_key, str(proof.subject_did), self._random(16).hex(), iat,
                               self.config.token_lifetime_s)
        self._emit(
            "auth_accept" if decision.accepted else "auth_reject",
            str(proof.subject_did),
            {"credential_id": proof.credential_id, "outcome": decision.outcome, "reason": decision.reason or ""},
            now,
        )
        return AuthOutcome(decision, token)

    def _fan_out(self, rnd: AuthRound) -> dict[str, VerifyResult | None]:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.config.max_workers, thread_name_prefix="fanout")
        futures = {self._pool.submit(self._nodes[nid].transport, task): nid for nid, task in rnd.tasks.items()}
        done, _ = wait(futures, timeout=self.config.node_timeout_ms / 1000.0)
        results: dict[str, VerifyResult | None] = {}
        for fut, nid in futures.items():
            if fut in done and fut.exception() is None:
                results[nid] = fut.result()
            else:
                results[nid] = None
        return results

    def handle_auth(self, req: AuthRequest, now: int | None = None) -> AuthOutcome:
        start = self.clock() if now is None else now
        rnd = self.prepare_auth(req, start)
        results = self._fan_out(rnd)
        return self.finish_auth(rnd, results, self.clock() if now is None else now)

    # -- revocation ---------------------------------------------------------------

    def handle_revoke(self, req: RevokeRequest, now: int | None = None) -> RevocationBlock:
        now = self.clock() if now is None else now
        try:
            doc = decode_canonical(self.store.get(req.metadata_cid))
        except Exception as exc:
            raise InvalidCredential(f"metadata for revocation not found: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("credential_id") != req.credential_id.hex():
            raise InvalidCredential("metadata does not name this credential")
        try:
            issuer = Did.parse(doc.get("issuer_did"))
        except (MalformedEncoding, TypeError, ValueError) as exc:
            raise InvalidCredential("metadata lacks a valid issuer DID") from exc
        if not issuer.controls(req.issuer_public_key):
            raise InvalidCredential("revocation not requested by the credential's issuer")
        if not verify_signature(req.issuer_public_key, req.signature, req.signing_bytes()):
            raise InvalidCredential("revocation request signature does not verify")
        block = self.ledger.append_revocation(req.credential_id, req.reason, now)
        self._emit("revoke", str(issuer), {"credential_id": req.credential_id, "reason": req.reason}, now)
        return block

    # -- sessions ---------------------------------------------------------------------

    def validate_token(self, token: str, now: int | None = None) -> TokenCheck:
        now = self.clock() if now is None else now
        return validate_token(token, self._mac_key, now // 1000, legacy_expiry=self.config.legacy_expiry)

    # -- introspection ------------------------------------------------------------------

    def storage_dump(self, now: int | None = None) -> dict[str, Any]:
        """Everything the gateway holds between requests."""
        now = self.clock() if now is None else now
        with self._challenge_lock:
            self._purge(now)
            challenges = {c.hex(): exp for c, exp in self._challenges.items()}
        return {"challenges": challenges, "rate_limiter": self._limiter.snapshot(now / 1000.0)}

    def status(self) -> dict[str, Any]:
        return {
            "nodes": [{"node_id": n.node_id, "public_key": n.public_key.hex()} for n in self._nodes.values()],
            "outstanding_challenges": len(self._challenges),
            "quorum": self.quorum if self._nodes else 0,
        }

