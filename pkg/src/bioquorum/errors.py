"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BioQuorumError(Exception):
    """Base class for all domain errors raised by this package."""


class UnsupportedValue(BioQuorumError, TypeError):
    """A value cannot be represented in the canonical encoding."""


class MalformedEncoding(BioQuorumError, ValueError):
    """Bytes are not the canonical encoding of a well-formed document."""


class PrivacyViolation(BioQuorumError):
    """Biometric material was found where only non-biometric claims may appear."""


class InvalidCredential(BioQuorumError):
    pass


class DimensionMismatch(BioQuorumError, ValueError):
    pass


class AuthenticationFailure(BioQuorumError):
    """Authenticated decryption rejected the key or the ciphertext."""


class DigestMismatch(BioQuorumError):
    """Ciphertext authenticated but the recovered plaintext has the wrong digest."""


class AuthBlocked(BioQuorumError):
    """The device integrity gate refused to issue a pass."""

    def __init__(self, failed: list[str]) -> None:
        self.failed = list(failed)
        super().__init__(f"authentication blocked: {', '.join(self.failed)}")


class DeviceUntrusted(AuthBlocked):
    pass


class MatchRejected(BioQuorumError):
    pass


class NotFound(BioQuorumError, KeyError):
    pass


class AlreadyRevoked(BioQuorumError):
    pass


class ConfigError(BioQuorumError, ValueError):
    pass


class RateLimited(BioQuorumError):
    pass


class UnknownChallenge(BioQuorumError):
    """The challenge was never issued, already consumed, or has expired."""

    reason = "stale_challenge"


class IoFailure(BioQuorumError, OSError):
    pass


class ProtocolError(BioQuorumError):
    pass
