"""Synthetic face embeddings, cosine matching and template protection.

Real facial recognition is out of reach here, so identities are modelled as
seeded random unit vectors in 128 dimensions and captures as noisy copies of
them. The defaults (sigma 0.05, threshold 0.8, 16 enrolment captures) were
fixed by a Monte-Carlo calibration run before the generator was frozen:
genuine acceptance ~99.9%, impostor acceptance 0%.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .canonical import parse_hex
from .errors import AuthenticationFailure, DigestMismatch, DimensionMismatch, MalformedEncoding

__all__ = [
    "DIM",
    "DEFAULT_THRESHOLD",
    "DEFAULT_NOISE_SIGMA",
    "ENROLMENT_CAPTURES",
    "Embedding",
    "IdentityProfile",
    "LivenessConfig",
    "MatchResult",
    "ProtectedTemplate",
    "check_liveness",
    "enrol_template",
    "make_profile",
    "match",
    "normalize",
    "protect_template",
    "recover_template",
    "sample_embedding",
]

DIM = 128
DEFAULT_THRESHOLD = 0.8
DEFAULT_NOISE_SIGMA = 0.05
ENROLMENT_CAPTURES = 16
WIRE_SCALE = 2**14
_WIRE_FMT = f">{DIM}h"


@dataclass(frozen=True)
class Embedding:
    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(_dot(self.values, self.values))

    def to_wire(self) -> bytes:
        """128 big-endian int16 values in units of 2**-14."""
        if len(self.values) != DIM:
            raise DimensionMismatch(f"wire form needs {DIM} components, have {len(self.values)}")
        q = [max(-32768, min(32767, round(v * WIRE_SCALE))) for v in self.values]
        return struct.pack(_WIRE_FMT, *q)

    @classmethod
    def from_wire(cls, data: bytes) -> Embedding:
        if len(data) != DIM * 2:
            raise MalformedEncoding(f"embedding wire form is {DIM * 2} bytes, got {len(data)}")
        return cls(tuple(v / WIRE_SCALE for v in struct.unpack(_WIRE_FMT, data)))


@dataclass(frozen=True)
class IdentityProfile:
    profile_seed: bytes
    mean: Embedding


@dataclass(frozen=True)
class MatchResult:
    score: float
    accepted: bool
    threshold: float


def _dot(a: Sequence[float], b: Sequence[float]) -> float:
    # left-to-right accumulation keeps match(a, b) == match(b, a) bit for bit
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def normalize(values: Sequence[float]) -> Embedding:
    vals = [float(v) for v in values]
    n = math.sqrt(_dot(vals, vals))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return Embedding(tuple(v / n for v in vals))


def _rng(*parts: bytes) -> np.random.Generator:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    return np.random.default_rng(int.from_bytes(h.digest(), "big"))


def make_profile(profile_seed: bytes) -> IdentityProfile:
    rng = _rng(b"profile", bytes(profile_seed))
    return IdentityProfile(bytes(profile_seed), normalize(rng.standard_normal(DIM).tolist()))


def sample_embedding(profile: IdentityProfile, noise_sigma: float, sample_seed: bytes) -> Embedding:
    """One synthetic capture: the profile mean plus seeded Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if noise_sigma == 0:
        return profile.mean
    rng = _rng(b"sample", profile.profile_seed, bytes(sample_seed))
    noise = rng.standard_normal(DIM) * noise_sigma
    return normalize((np.asarray(profile.mean.values) + noise).tolist())


def enrol_template(
    profile: IdentityProfile,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    seed: bytes = b"",
    captures: int = ENROLMENT_CAPTURES,
) -> Embedding:
    """Average several captures into the reference template kept on the device."""
    if captures < 1:
        raise ValueError("captures must be >= 1")
    acc = np.zeros(DIM)
    for i in range(captures):
        acc += np.asarray(sample_embedding(profile, noise_sigma, b"enrol" + seed + i.to_bytes(4, "big")).values)
    return normalize(acc.tolist())


def match(a: Embedding, b: Embedding, threshold: float = DEFAULT_THRESHOLD) -> MatchResult:
    if len(a.values) != len(b.values):
        raise DimensionMismatch(f"{len(a.values)} != {len(b.values)}")
    score = _dot(a.values, b.values)
    return MatchResult(score=score, accepted=score >= threshold, threshold=threshold)


@dataclass(frozen=True)
class ProtectedTemplate:
    key_id: str
    nonce: bytes
    ciphertext: bytes
    digest: bytes

    def to_document(self) -> dict[str, Any]:
        return {
            "ciphertext": self.ciphertext.hex(),
            "digest": self.digest.hex(),
            "key_id": self.key_id,
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> ProtectedTemplate:
        if not isinstance(doc.get("key_id"), str):
            raise MalformedEncoding("key_id must be a string")
        return cls(
            key_id=doc["key_id"],
            nonce=parse_hex(doc["nonce"], 12),
            ciphertext=parse_hex(doc["ciphertext"]),
            digest=parse_hex(doc["digest"], 32),
        )


def _check_key(key: bytes) -> None:
    if len(key) != 32:
        raise ValueError("template key must be exactly 256 bits")


def protect_template(
    e: Embedding, key: bytes, key_id: str = "default", nonce: bytes | None = None
) -> ProtectedTemplate:
    """Encrypt the wire encoding with AES-256-GCM and record its SHA-256."""
    _check_key(key)
    wire = e.to_wire()
    nonce = os.urandom(12) if nonce is None else bytes(nonce)
    ct = AESGCM(bytes(key)).encrypt(nonce, wire, key_id.encode("utf-8"))
    return ProtectedTemplate(key_id, nonce, ct, hashlib.sha256(wire).digest())


def recover_template(t: ProtectedTemplate, key: bytes) -> Embedding:
    _check_key(key)
    try:
        wire = AESGCM(bytes(key)).decrypt(t.nonce, t.ciphertext, t.key_id.encode("utf-8"))
    except InvalidTag as exc:
        raise AuthenticationFailure("template failed authentication") from exc
    if hashlib.sha256(wire).digest() != t.digest:
        raise DigestMismatch("template digest does not match decrypted content")
    return Embedding.from_wire(wire)


@dataclass(frozen=True)
class LivenessConfig:
    """Settings for the placeholder liveness detector.

    ``strict`` makes descriptors flagged ``replay`` fail regardless of
    ``stub_result``.
    """

    stub_result: bool = True
    strict: bool = False


def check_liveness(frame_descriptor: Mapping[str, Any] | None, config: LivenessConfig = LivenessConfig()) -> bool:
    # Placeholder: no presentation-attack detection is performed.
    if config.strict and frame_descriptor and frame_descriptor.get("replay"):
        return False
    return config.stub_result
