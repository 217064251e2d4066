"""Per-subject token-bucket rate limiting."""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass

__all__ = ["RateLimiter", "TokenBucket"]


@dataclass
class TokenBucket:
    capacity: float
    refill_per_s: float
    tokens: float
    last_refill: float  # seconds

    def refill(self, now_s: float) -> None:
        if now_s > self.last_refill:
            self.tokens = min(self.capacity, self.tokens + (now_s - self.last_refill) * self.refill_per_s)
            self.last_refill = now_s

    def take(self, now_s: float) -> bool:
        self.refill(now_s)
        if self.tokens >= 1:
            self.tokens -= 1
            return True
        return False


class RateLimiter:
    """Token buckets keyed by a salted hash of the subject.

    Raw identifiers are never kept, and buckets that have refilled to capacity
    are dropped because they are indistinguishable from a fresh bucket.
    """

    def __init__(self, capacity: int = 20, refill_per_s: float = 10.0) -> None:
        if capacity < 1 or refill_per_s <= 0:
            raise ValueError("capacity must be >= 1 and refill_per_s > 0")
        self.capacity = capacity
        self.refill_per_s = refill_per_s
        self._salt = os.urandom(16)
        self._buckets: dict[str, TokenBucket] = {}
        self._lock = threading.Lock()

    def _key(self, subject: str) -> str:
        return hashlib.sha256(self._salt + subject.encode("utf-8")).hexdigest()

    def admit(self, subject: str, now_s: float) -> bool:
        key = self._key(subject)
        with self._lock:
            bucket = self._buckets.get(key)
            if bucket is None:
                bucket = TokenBucket(self.capacity, self.refill_per_s, self.capacity, now_s)
                self._buckets[key] = bucket
            ok = bucket.take(now_s)
            self._prune(now_s)
            return ok

    def _prune(self, now_s: float) -> None:
        full = []
        for key, bucket in self._buckets.items():
            bucket.refill(now_s)
            if bucket.tokens >= bucket.capacity:
                full.append(key)
        for key in full:
            del self._buckets[key]

    def snapshot(self, now_s: float) -> dict[str, float]:
        with self._lock:
            self._prune(now_s)
            return {k: b.tokens for k, b in self._buckets.items()}
