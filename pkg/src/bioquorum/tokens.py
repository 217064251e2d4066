"""Compact HS256 session tokens (JWT layout, stdlib only)."""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
from dataclasses import dataclass

__all__ = ["LEGACY_LEEWAY_S", "TokenCheck", "b64url", "mint_token", "validate_token"]

_HEADER = {"alg": "HS256", "typ": "JWT"}

# Reproduces the defective prototype behaviour: expiry compared with a
# generous leeway and an inclusive boundary, so sessions outlive their window.
LEGACY_LEEWAY_S = 60


def b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def _tag(key: bytes, signing_input: bytes) -> str:
    return b64url(hmac.new(key, signing_input, hashlib.sha256).digest())


def mint_token(key: bytes, sub: str, sid: str, iat: int, lifetime_s: int) -> str:
    header = b64url(json.dumps(_HEADER, separators=(",", ":"), sort_keys=True).encode())
    payload = b64url(json.dumps(
        {"exp": iat + lifetime_s, "iat": iat, "sid": sid, "sub": sub},
        separators=(",", ":"), sort_keys=True,
    ).encode())
    signing_input = f"{header}.{payload}"
    return f"{signing_input}.{_tag(key, signing_input.encode('ascii'))}"


@dataclass(frozen=True)
class TokenCheck:
    valid: bool
    sub: str | None = None
    sid: str | None = None
    reason: str | None = None  # bad_mac | expired | malformed

    def __bool__(self) -> bool:
        return self.valid


def validate_token(token: str, key: bytes, now: int, *, legacy_expiry: bool = False) -> TokenCheck:
    """Check MAC then expiry. ``now`` is unix seconds; ``now >= exp`` is expired."""
    if not isinstance(token, str):
        return TokenCheck(False, reason="malformed")
    parts = token.split(".")
    if len(parts) != 3:
        return TokenCheck(False, reason="malformed")
    if not token.isascii():
        return TokenCheck(False, reason="malformed")
    signing_input = f"{parts[0]}.{parts[1]}".encode("ascii")
    # compare the tag as text so non-canonical base64 spellings never pass
    if not hmac.compare_digest(_tag(key, signing_input), parts[2]):
        return TokenCheck(False, reason="bad_mac")
    try:
        header = json.loads(_b64url_decode(parts[0]))
        payload = json.loads(_b64url_decode(parts[1]))
        if header != _HEADER:
            return TokenCheck(False, reason="malformed")
        exp, sub, sid = payload["exp"], payload["sub"], payload["sid"]
        if not isinstance(exp, int) or not isinstance(sub, str) or not isinstance(sid, str):
            return TokenCheck(False, reason="malformed")
    except (ValueError, KeyError, TypeError):
        return TokenCheck(False, reason="malformed")
    expired = now > exp + LEGACY_LEEWAY_S if legacy_expiry else now >= exp
    if expired:
        return TokenCheck(False, sub=sub, sid=sid, reason="expired")
    return TokenCheck(True, sub=sub, sid=sid)
