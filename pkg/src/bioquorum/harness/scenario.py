"""Seeded consistency scenarios: propagation windows, stale acceptance, audit divergence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from ..audit import ConsistencyReport, compare_logs, verify_log
from ..gateway import default_quorum, quorum_flags
from ..trust import POLLING
from .config import ScenarioConfig
from .sim import World

__all__ = ["SimReport", "run_scenario"]


@dataclass(frozen=True)
class SimReport:
    config: dict[str, Any]
    quorum: int
    unilateral: dict[str, bool]
    revocations: tuple[dict[str, Any], ...]
    stale_acceptances: tuple[dict[str, Any], ...]
    auths: tuple[dict[str, Any], ...]
    audit: ConsistencyReport | None
    audit_logs_verified: tuple[bool, ...]
    invariants: dict[str, bool]
    errors: tuple[str, ...] = ()
    end_ms: int = 0

    @property
    def windows(self) -> list[int]:
        return [r["window_ms"] for r in self.revocations if r["window_ms"] is not None]

    @property
    def stale_count(self) -> int:
        return len(self.stale_acceptances)

    @property
    def diverged(self) -> bool:
        return bool(self.audit and self.audit.diverged)

    @property
    def ok(self) -> bool:
        return all(self.invariants.values())

    def auths_in_window(self) -> list[dict[str, Any]]:
        """Auths for a revoked credential that reached the gateway inside its window."""
        out = []
        for rev in self.revocations:
            if rev["window_ms"] is None:
                continue
            lo, hi = rev["commit_ms"], rev["commit_ms"] + rev["window_ms"]
            out.extend(a for a in self.auths
                       if a["user"] == rev["user"] and a["gateway_ms"] is not None and lo <= a["gateway_ms"] <= hi)
        return out

    def to_document(self) -> dict[str, Any]:
        return {
            "audit": self.audit.to_dict() if self.audit else None,
            "audit_logs_verified": list(self.audit_logs_verified),
            "auths": list(self.auths),
            "config": self.config,
            "end_ms": self.end_ms,
            "errors": list(self.errors),
            "invariants": dict(sorted(self.invariants.items())),
            "quorum": self.quorum,
            "revocations": list(self.revocations),
            "stale_acceptance_count": self.stale_count,
            "stale_acceptances": list(self.stale_acceptances),
            "unilateral": self.unilateral,
            "windows_ms": self.windows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=2) + "\n"


def _horizon(cfg: ScenarioConfig) -> int:
    last = max((a.at_ms for a in cfg.actions()), default=0)
    return last + cfg.poll_interval_ms + cfg.ttl_ms + 4 * cfg.max_latency_ms + cfg.node_timeout_ms


def run_scenario(config: ScenarioConfig) -> SimReport:
    """Run *config* to quiescence on a virtual clock. Equal configs give equal reports."""
    config.validate()
    world = World(config, config.users, tick_until=_horizon(config))
    actions = config.actions()
    explicit = {a.user for a in actions if a.kind == "enroll"}
    for user in range(config.users):
        if user not in explicit:
            world.enroll(user)
    for action in actions:
        world.sim.at(action.at_ms, _dispatch, world, action.kind, action.user)
    world.drain()

    n = config.n_nodes
    revocations = tuple(r.to_document(n) for r in world.revocations)
    windows = [r["window_ms"] for r in revocations]
    bound = config.poll_interval_ms + config.ttl_ms + config.max_latency_ms
    invariants = {
        "windows_complete": all(w is not None for w in windows),
        "windows_nonnegative": all(w is None or w >= 0 for w in windows),
        "stale_only_behind": all(s["view_height"] < s["revoked_height"] for s in world.stale_acceptances),
    }
    if config.cache_mode == POLLING:
        invariants["window_within_bound"] = all(w is None or w <= bound for w in windows)
    audit = compare_logs(world.logs) if n >= 2 else None
    quorum = config.quorum if config.quorum is not None else default_quorum(n)
    return SimReport(
        config=config.to_document(),
        quorum=quorum,
        unilateral=quorum_flags(quorum, n),
        revocations=revocations,
        stale_acceptances=tuple(world.stale_acceptances),
        auths=tuple(a.to_document() for a in world.auths),
        audit=audit,
        audit_logs_verified=tuple(verify_log(log).ok for log in world.logs),
        invariants=invariants,
        errors=tuple(world.errors),
        end_ms=world.sim.now,
    )


def _dispatch(world: World, kind: str, user: int) -> None:
    if kind == "enroll":
        world.enroll(user)
    elif kind == "auth":
        world.auth(user)
    elif kind == "revoke":
        world.revoke(user)
