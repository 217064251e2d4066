"""Self-certifying DIDs, Ed25519 key pairs and issuer-signed credentials."""

from __future__ import annotations

import hashlib
import itertools
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .canonical import canonicalize, decode_canonical, parse_hex
from .errors import MalformedEncoding, PrivacyViolation

__all__ = [
    "DID_METHOD",
    "SIGNATURE_SCHEME",
    "Credential",
    "Did",
    "Issuer",
    "KeyPair",
    "find_biometric_keys",
    "generate_identity",
    "issue_credential",
    "verify_credential",
    "verify_signature",
]

DID_METHOD = "ciph"
SIGNATURE_SCHEME = "ed25519"
BIOMETRIC_KEY_NAMES = frozenset({"embedding", "template"})

_DID_RE = re.compile(r"did:([a-z0-9]+):([0-9a-f]{32})")
_CID_RE = re.compile(r"sha256:[0-9a-f]{64}")


@dataclass(frozen=True, order=True)
class Did:
    method_name: str
    identifier: str

    def __post_init__(self) -> None:
        if not _DID_RE.fullmatch(f"did:{self.method_name}:{self.identifier}"):
            raise MalformedEncoding(f"malformed DID components: {self.method_name!r}, {self.identifier!r}")

    def __str__(self) -> str:
        return f"did:{self.method_name}:{self.identifier}"

    @classmethod
    def parse(cls, text: str) -> Did:
        m = _DID_RE.fullmatch(text) if isinstance(text, str) else None
        if m is None:
            raise MalformedEncoding(f"not a DID: {text!r}")
        return cls(m.group(1), m.group(2))

    @classmethod
    def from_public_key(cls, public_key: bytes, method_name: str = DID_METHOD) -> Did:
        return cls(method_name, hashlib.sha256(public_key).hexdigest()[:32])

    def controls(self, public_key: bytes) -> bool:
        """True when *public_key* is the key this DID was derived from."""
        return Did.from_public_key(public_key, self.method_name) == self


class KeyPair:
    """Ed25519 signing key. The private half never leaves this object.

    There is deliberately no accessor, ``repr`` or pickle support for the
    private key; wallets persist the 32-byte seed instead.
    """

    __slots__ = ("_sk", "public_key")

    def __init__(self, signing_key: Ed25519PrivateKey) -> None:
        self._sk = signing_key
        self.public_key: bytes = signing_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def from_seed(cls, seed: bytes) -> KeyPair:
        if len(seed) != 32:
            raise ValueError("seed must be exactly 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(bytes(seed)))

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message)

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()})"

    def __reduce__(self):
        raise TypeError("KeyPair is not serializable")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, KeyPair) and other.public_key == self.public_key

    def __hash__(self) -> int:
        return hash(self.public_key)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(bytes(signature), message)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def generate_identity(seed: bytes) -> tuple[Did, KeyPair]:
    """Derive a key pair and its DID deterministically from a 32-byte seed."""
    keys = KeyPair.from_seed(seed)
    return Did.from_public_key(keys.public_key), keys


def find_biometric_keys(doc: Any, path: str = "") -> list[str]:
    """Return paths of every map key that names biometric material."""
    hits: list[str] = []
    if isinstance(doc, Mapping):
        for key, value in doc.items():
            here = f"{path}.{key}" if path else str(key)
            if isinstance(key, str) and key.lower() in BIOMETRIC_KEY_NAMES:
                hits.append(here)
            hits.extend(find_biometric_keys(value, here))
    elif isinstance(doc, (list, tuple)):
        for i, item in enumerate(doc):
            hits.extend(find_biometric_keys(item, f"{path}[{i}]"))
    return hits


def _check_attributes(attributes: Mapping[str, str]) -> None:
    hits = find_biometric_keys(dict(attributes))
    if hits:
        raise PrivacyViolation(f"biometric-named attribute(s): {', '.join(hits)}")
    for key, value in attributes.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise TypeError("credential attributes must map strings to strings")


@dataclass(frozen=True)
class Credential:
    credential_id: bytes
    subject_did: Did
    issuer_did: Did
    attributes: Mapping[str, str]
    metadata_cid: str
    issued_at: int
    signature: bytes = b""
    scheme: str = SIGNATURE_SCHEME

    def signed_fields(self) -> dict[str, Any]:
        return {
            "attributes": dict(self.attributes),
            "credential_id": self.credential_id,
            "issued_at": self.issued_at,
            "issuer_did": str(self.issuer_did),
            "metadata_cid": self.metadata_cid,
            "scheme": self.scheme,
            "subject_did": str(self.subject_did),
        }

    def signing_bytes(self) -> bytes:
        return canonicalize(self.signed_fields())

    def to_document(self) -> dict[str, Any]:
        doc = self.signed_fields()
        doc["signature"] = self.signature
        return doc

    def to_wire(self) -> bytes:
        return canonicalize(self.to_document())

    @classmethod
    def from_document(cls, doc: Any) -> Credential:
        if not isinstance(doc, dict) or set(doc) != {
            "attributes", "credential_id", "issued_at", "issuer_did",
            "metadata_cid", "scheme", "signature", "subject_did",
        }:
            raise MalformedEncoding("credential document has wrong fields")
        attrs = doc["attributes"]
        if not isinstance(attrs, dict) or not all(isinstance(v, str) for v in attrs.values()):
            raise MalformedEncoding("attributes must be a string map")
        issued_at = doc["issued_at"]
        if isinstance(issued_at, bool) or not isinstance(issued_at, int):
            raise MalformedEncoding("issued_at must be an integer")
        cid = doc["metadata_cid"]
        if not isinstance(cid, str) or not _CID_RE.fullmatch(cid):
            raise MalformedEncoding("metadata_cid malformed")
        if not isinstance(doc["scheme"], str):
            raise MalformedEncoding("scheme must be a string")
        return cls(
            credential_id=parse_hex(doc["credential_id"], 16),
            subject_did=Did.parse(doc["subject_did"]),
            issuer_did=Did.parse(doc["issuer_did"]),
            attributes=dict(attrs),
            metadata_cid=cid,
            issued_at=issued_at,
            signature=parse_hex(doc["signature"]),
            scheme=doc["scheme"],
        )

    @classmethod
    def from_wire(cls, data: bytes) -> Credential:
        return cls.from_document(decode_canonical(data))


@dataclass
class Issuer:
    """An issuing authority: its DID, key pair and a credential-id counter."""

    did: Did
    keys: KeyPair
    _counter: itertools.count = field(default_factory=itertools.count, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_seed(cls, seed: bytes) -> Issuer:
        did, keys = generate_identity(seed)
        return cls(did, keys)

    def next_credential_id(self, subject: Did, now: int) -> bytes:
        with self._lock:
            n = next(self._counter)
        doc = {"counter": n, "issuer": str(self.did), "now": now, "subject": str(subject)}
        return hashlib.sha256(canonicalize(doc)).digest()[:16]


def issue_credential(
    subject: Did,
    issuer: Issuer,
    attributes: Mapping[str, str],
    metadata_cid: str,
    now: int,
    credential_id: bytes | None = None,
) -> Credential:
    """Issue and sign a credential for *subject*.

    ``credential_id`` may be reserved in advance with
    :meth:`Issuer.next_credential_id` when the metadata document (whose CID
    the credential carries) must itself name the credential.
    """
    _check_attributes(attributes)
    if not _CID_RE.fullmatch(metadata_cid):
        raise MalformedEncoding(f"metadata_cid malformed: {metadata_cid!r}")
    if credential_id is None:
        credential_id = issuer.next_credential_id(subject, now)
    unsigned = Credential(
        credential_id=bytes(credential_id),
        subject_did=subject,
        issuer_did=issuer.did,
        attributes=dict(attributes),
        metadata_cid=metadata_cid,
        issued_at=int(now),
    )
    sig = issuer.keys.sign(unsigned.signing_bytes())
    return Credential(**{**unsigned.__dict__, "signature": sig})


def verify_credential(cred: Credential, issuer_public_key: bytes) -> bool:
    try:
        if cred.scheme != SIGNATURE_SCHEME or not cred.issuer_did.controls(issuer_public_key):
            return False
        return verify_signature(issuer_public_key, cred.signature, cred.signing_bytes())
    except Exception:
        return False
