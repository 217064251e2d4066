"""Device integrity gate and the challenge-bound authentication proof.

The proof is a signed transcript, not a zero-knowledge proof system. It binds
credential possession (subject signature), the outcome of the on-device face
match (a salted hash commitment), the device attestation (digest only) and the
revocation-ledger epoch the prover saw, all to a single gateway challenge.
Nothing biometric ever enters the transcript.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass
from typing import Any, Callable

from .biometric import MatchResult
from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import AuthBlocked, DeviceUntrusted, MalformedEncoding, MatchRejected
from .identity import Credential, Did, KeyPair, verify_signature

__all__ = [
    "ACCEPT",
    "CHALLENGE_BYTES",
    "DEFAULT_EPOCH_TOLERANCE",
    "AuthProof",
    "DeviceAttestation",
    "GatePass",
    "MatchCommitment",
    "Verdict",
    "build_proof",
    "commit_match",
    "gate_device",
    "verify_proof",
]

CHALLENGE_BYTES = 32
SALT_BYTES = 16
DEFAULT_EPOCH_TOLERANCE = 2
_PURPOSE = "auth-proof/v1"


@dataclass(frozen=True)
class DeviceAttestation:
    rooted: bool = False
    keystore_ok: bool = True
    tee_ok: bool = True
    liveness_ok: bool = True

    def failed_checks(self) -> list[str]:
        failed = []
        if self.rooted:
            failed.append("rooted")
        if not self.keystore_ok:
            failed.append("keystore")
        if not self.tee_ok:
            failed.append("tee")
        if not self.liveness_ok:
            failed.append("liveness")
        return failed

    @property
    def passes(self) -> bool:
        return not self.failed_checks()

    def digest(self) -> bytes:
        return hashlib.sha256(canonicalize({
            "keystore_ok": self.keystore_ok,
            "liveness_ok": self.liveness_ok,
            "rooted": self.rooted,
            "tee_ok": self.tee_ok,
        })).digest()


_GATE_KEY = object()


class GatePass:
    """Proof that the integrity gate accepted an attestation. Only
    :func:`gate_device` can mint one."""

    __slots__ = ("attestation_digest",)

    def __init__(self, key: object, attestation_digest: bytes) -> None:
        if key is not _GATE_KEY:
            raise TypeError("GatePass is issued by gate_device only")
        self.attestation_digest = attestation_digest


def gate_device(att: DeviceAttestation) -> GatePass:
    failed = att.failed_checks()
    if failed:
        raise AuthBlocked(failed)
    return GatePass(_GATE_KEY, att.digest())


@dataclass(frozen=True)
class MatchCommitment:
    commitment: bytes
    salt: bytes  # stays on the device


def commit_match(accepted: bool, salt: bytes) -> MatchCommitment:
    if len(salt) != SALT_BYTES:
        raise ValueError(f"salt must be {SALT_BYTES} bytes")
    return MatchCommitment(hashlib.sha256(bytes([1 if accepted else 0]) + salt).digest(), bytes(salt))


@dataclass(frozen=True)
class AuthProof:
    credential_id: bytes
    subject_did: Did
    metadata_cid: str
    challenge: bytes
    match_commitment: bytes
    attestation_digest: bytes
    ledger_epoch: int
    signature: bytes = b""

    def transcript(self) -> bytes:
        return canonicalize({
            "attestation_digest": self.attestation_digest,
            "challenge": self.challenge,
            "credential_id": self.credential_id,
            "ledger_epoch": self.ledger_epoch,
            "match_commitment": self.match_commitment,
            "metadata_cid": self.metadata_cid,
            "purpose": _PURPOSE,
            "subject_did": str(self.subject_did),
        })

    def to_document(self) -> dict[str, Any]:
        return {
            "attestation_digest": self.attestation_digest,
            "challenge": self.challenge,
            "credential_id": self.credential_id,
            "ledger_epoch": self.ledger_epoch,
            "match_commitment": self.match_commitment,
            "metadata_cid": self.metadata_cid,
            "signature": self.signature,
            "subject_did": str(self.subject_did),
        }

    def to_wire(self) -> bytes:
        return canonicalize(self.to_document())

    @classmethod
    def from_document(cls, doc: Any) -> AuthProof:
        expected = {
            "attestation_digest", "challenge", "credential_id", "ledger_epoch",
            "match_commitment", "metadata_cid", "signature", "subject_did",
        }
        if not isinstance(doc, dict) or set(doc) != expected:
            raise MalformedEncoding("auth proof document has wrong fields")
        epoch = doc["ledger_epoch"]
        if isinstance(epoch, bool) or not isinstance(epoch, int) or epoch < 0:
            raise MalformedEncoding("ledger_epoch must be a non-negative integer")
        if not isinstance(doc["metadata_cid"], str):
            raise MalformedEncoding("metadata_cid must be a string")
        return cls(
            credential_id=parse_hex(doc["credential_id"], 16),
            subject_did=Did.parse(doc["subject_did"]),
            metadata_cid=doc["metadata_cid"],
            challenge=parse_hex(doc["challenge"], CHALLENGE_BYTES),
            match_commitment=parse_hex(doc["match_commitment"], 32),
            attestation_digest=parse_hex(doc["attestation_digest"], 32),
            ledger_epoch=epoch,
            signature=parse_hex(doc["signature"]),
        )

    @classmethod
    def from_wire(cls, data: bytes) -> AuthProof:
        return cls.from_document(decode_canonical(data))


def build_proof(
    cred: Credential,
    keys: KeyPair,
    challenge: bytes,
    match: MatchResult,
    att: DeviceAttestation,
    ledger_epoch: int,
    rng: Callable[[int], bytes] = os.urandom,
) -> AuthProof:
    """Assemble and sign a proof on the user's device.

    Raises DeviceUntrusted when the attestation fails the gate and
    MatchRejected when the local face match did not pass.
    """
    try:
        gate = gate_device(att)
    except AuthBlocked as exc:
        raise DeviceUntrusted(exc.failed) from None
    if not match.accepted:
        raise MatchRejected(f"local match score {match.score:.4f} below {match.threshold}")
    if len(challenge) != CHALLENGE_BYTES:
        raise ValueError(f"challenge must be {CHALLENGE_BYTES} bytes")
    commitment = commit_match(True, rng(SALT_BYTES))
    unsigned = AuthProof(
        credential_id=cred.credential_id,
        subject_did=cred.subject_did,
        metadata_cid=cred.metadata_cid,
        challenge=bytes(challenge),
        match_commitment=commitment.commitment,
        attestation_digest=gate.attestation_digest,
        ledger_epoch=int(ledger_epoch),
    )
    return AuthProof(**{**unsigned.__dict__, "signature": keys.sign(unsigned.transcript())})


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None

    @classmethod
    def reject(cls, reason: str) -> Verdict:
        return cls(False, reason)

    def __str__(self) -> str:
        return "accept" if self.accepted else f"reject:{self.reason}"


ACCEPT = Verdict(True)


def verify_proof(
    p: AuthProof,
    subject_public_key: bytes,
    expected_challenge: bytes,
    current_epoch: int,
    epoch_tolerance: int = DEFAULT_EPOCH_TOLERANCE,
) -> Verdict:
    try:
        if not p.subject_did.controls(subject_public_key):
            return Verdict.reject("bad_signature")
        if not verify_signature(subject_public_key, p.signature, p.transcript()):
            return Verdict.reject("bad_signature")
        if not hmac.compare_digest(p.challenge, bytes(expected_challenge)):
            return Verdict.reject("stale_challenge")
        if current_epoch - p.ledger_epoch > epoch_tolerance:
            return Verdict.reject("stale_epoch")
    except Exception:
        return Verdict.reject("bad_signature")
    return ACCEPT
