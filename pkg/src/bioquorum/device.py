"""The user's device: holds the subject key, credential and encrypted template.

Nothing in here is sent to the gateway except the credential, its metadata
document and signed proofs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .biometric import (
    DEFAULT_NOISE_SIGMA,
    DEFAULT_THRESHOLD,
    Embedding,
    ProtectedTemplate,
    enrol_template,
    make_profile,
    match,
    protect_template,
    recover_template,
    sample_embedding,
)
from .canonical import canonicalize, parse_hex
from .errors import MalformedEncoding
from .gateway import AuthRequest, EnrollRequest
from .identity import Credential, Did, Issuer, KeyPair, generate_identity, issue_credential
from .proof import DeviceAttestation, build_proof
from .trust import Cid

__all__ = ["Wallet", "build_metadata", "enrol_wallet"]


def build_metadata(credential_id: bytes, subject: Did, issuer: Did, issued_at: int,
                   attributes: Mapping[str, str]) -> dict[str, Any]:
    """The public metadata document a credential points at by CID."""
    return {
        "claims": sorted(attributes),
        "credential_id": credential_id.hex(),
        "issued_at": int(issued_at),
        "issuer_did": str(issuer),
        "subject_did": str(subject),
    }


@dataclass
class Wallet:
    subject_seed: bytes
    profile_seed: bytes
    template_key: bytes
    template: ProtectedTemplate
    credential: Credential
    metadata: dict[str, Any]

    @property
    def keys(self) -> KeyPair:
        return KeyPair.from_seed(self.subject_seed)

    @property
    def did(self) -> Did:
        return self.credential.subject_did

    def enroll_request(self, issuer_public_key: bytes) -> EnrollRequest:
        return EnrollRequest(self.credential, issuer_public_key, self.metadata)

    def capture(self, sample_seed: bytes, noise_sigma: float = DEFAULT_NOISE_SIGMA) -> Embedding:
        """A fresh synthetic face capture of the wallet's owner."""
        return sample_embedding(make_profile(self.profile_seed), noise_sigma, sample_seed)

    def authenticate(
        self,
        probe: Embedding,
        challenge: bytes,
        ledger_epoch: int,
        attestation: DeviceAttestation | None = None,
        *,
        threshold: float = DEFAULT_THRESHOLD,
        rng: Callable[[int], bytes] = os.urandom,
    ) -> AuthRequest:
        """Match locally and, if it passes, build a signed proof for *challenge*.

        Raises MatchRejected or DeviceUntrusted from the proof engine.
        """
        reference = recover_template(self.template, self.template_key)
        result = match(reference, probe, threshold)
        proof = build_proof(self.credential, self.keys, challenge, result,
                            attestation or DeviceAttestation(), ledger_epoch, rng)
        return AuthRequest(proof, self.keys.public_key)

    def to_document(self) -> dict[str, Any]:
        return {
            "credential": self.credential.to_document(),
            "metadata": self.metadata,
            "profile_seed": self.profile_seed,
            "subject_seed": self.subject_seed,
            "template": self.template.to_document(),
            "template_key": self.template_key,
        }

    def to_bytes(self) -> bytes:
        return canonicalize(self.to_document())

    @classmethod
    def from_document(cls, doc: Any) -> Wallet:
        keys = {"credential", "metadata", "profile_seed", "subject_seed", "template", "template_key"}
        if not isinstance(doc, dict) or set(doc) != keys:
            raise MalformedEncoding("wallet document has wrong fields")
        return cls(
            subject_seed=parse_hex(doc["subject_seed"], 32),
            profile_seed=parse_hex(doc["profile_seed"]),
            template_key=parse_hex(doc["template_key"], 32),
            template=ProtectedTemplate.from_document(doc["template"]),
            credential=Credential.from_document(doc["credential"]),
            metadata=doc["metadata"],
        )


def enrol_wallet(
    issuer: Issuer,
    subject_seed: bytes,
    profile_seed: bytes,
    now: int,
    attributes: Mapping[str, str] | None = None,
    *,
    template_key: bytes | None = None,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    rng: Callable[[int], bytes] = os.urandom,
) -> Wallet:
    """Capture a template, seal it on the device and obtain a credential."""
    attributes = dict(attributes or {"role": "member"})
    subject, _ = generate_identity(subject_seed)
    template = enrol_template(make_profile(profile_seed), noise_sigma, seed=subject_seed)
    key = template_key if template_key is not None else rng(32)
    sealed = protect_template(template, key, nonce=rng(12))
    cred_id = issuer.next_credential_id(subject, now)
    metadata = build_metadata(cred_id, subject, issuer.did, now, attributes)
    cid = Cid.of(canonicalize(metadata))
    cred = issue_credential(subject, issuer, attributes, str(cid), now, credential_id=cred_id)
    return Wallet(bytes(subject_seed), bytes(profile_seed), key, sealed, cred, metadata)
