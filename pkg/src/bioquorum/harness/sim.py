"""Discrete-event engine and a simulated deployment built on the real modules.

Everything runs on one thread against a virtual millisecond clock. Each source
of randomness (link latency per link class, poll phases, key material) has
its own seeded stream, so switching the cache mode or audit policy leaves
every latency draw unchanged and runs can be compared pairwise.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from ..audit import DETERMINISTIC, AuditEvent, AuditLog
from ..device import Wallet, enrol_wallet
from ..errors import AlreadyRevoked, BioQuorumError, MatchRejected
from ..gateway import AuthRound, Gateway, GatewayConfig, RevokeRequest
from ..identity import Issuer, KeyPair
from ..node import VerifierNode, VerifyResult, VerifyTask
from ..trust import (
    EVENT_DRIVEN,
    ContentStore,
    RevocationBlock,
    RevocationLedger,
    apply_notification,
    new_view,
    snapshot_view,
)
from .config import _Common

__all__ = ["AuthRecord", "RevocationRecord", "Simulator", "World", "stream", "byte_stream"]


def stream(seed: int, label: str) -> random.Random:
    return random.Random(f"{seed}/{label}")


def byte_stream(seed: int, label: str) -> Callable[[int], bytes]:
    return stream(seed, label).randbytes


def derive(seed: int, *labels: object) -> bytes:
    return hashlib.sha256("/".join(map(str, (seed, *labels))).encode()).digest()


class Simulator:
    """Min-heap of ``(time, seq, fn, args)``; ties run in scheduling order."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Callable[..., None], tuple[Any, ...]]] = []
        self._seq = 0
        self.processed = 0

    def at(self, t: int, fn: Callable[..., None], *args: Any) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before now={self.now}")
        heapq.heappush(self._queue, (t, self._seq, fn, args))
        self._seq += 1

    def after(self, delay: int, fn: Callable[..., None], *args: Any) -> None:
        self.at(self.now + delay, fn, *args)

    def run(self, until: int | None = None) -> None:
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                break
            t, _, fn, args = heapq.heappop(self._queue)
            self.now = t
            self.processed += 1
            fn(*args)


@dataclass
class AuthRecord:
    auth_id: int
    user: int
    sent_ms: int
    gateway_ms: int | None = None
    decided_ms: int | None = None
    completed_ms: int | None = None
    outcome: str = "pending"
    reason: str = ""
    votes: list[str] = field(default_factory=list)
    results: dict[str, VerifyResult] = field(default_factory=dict)
    on_done: Callable[[AuthRecord], None] | None = None

    @property
    def latency_ms(self) -> int | None:
        return None if self.completed_ms is None else self.completed_ms - self.sent_ms

    def to_document(self) -> dict[str, Any]:
        return {
            "auth_id": self.auth_id,
            "completed_ms": self.completed_ms,
            "decided_ms": self.decided_ms,
            "gateway_ms": self.gateway_ms,
            "outcome": self.outcome,
            "reason": self.reason,
            "sent_ms": self.sent_ms,
            "user": self.user,
            "votes": list(self.votes),
        }


@dataclass
class RevocationRecord:
    user: int
    credential_id: bytes
    height: int
    commit_ms: int
    seen_ms: dict[str, int] = field(default_factory=dict)

    def window_ms(self, n_nodes: int) -> int | None:
        if len(self.seen_ms) < n_nodes:
            return None
        return max(self.seen_ms.values()) - self.commit_ms

    def to_document(self, n_nodes: int) -> dict[str, Any]:
        return {
            "commit_ms": self.commit_ms,
            "credential_id": self.credential_id.hex(),
            "height": self.height,
            "node_seen_ms": dict(sorted(self.seen_ms.items())),
            "user": self.user,
            "window_ms": self.window_ms(n_nodes),
        }


class World:
    """Gateway, verifier nodes, ledger, store and audit logs on one virtual clock."""

    def __init__(self, cfg: _Common, users: int, *, tick_until: int) -> None:
        self.cfg = cfg
        self.sim = Simulator()
        self.tick_until = tick_until
        seed = cfg.seed
        self._lat = {name: stream(seed, f"latency/{name}") for name in
                     ("client", "fanout", "poll", "push", "refresh", "audit")}
        self._device_bytes = byte_stream(seed, "device")
        self.store = ContentStore()
        self.ledger = RevocationLedger()
        self.issuer = Issuer.from_seed(derive(seed, "issuer"))
        self.logs = [AuditLog(cfg.audit_policy, cfg.settle_delay_ms) for _ in range(cfg.n_nodes)]
        self.gateway = Gateway(
            self.store, self.ledger, derive(seed, "mac"),
            GatewayConfig(quorum=cfg.quorum, node_timeout_ms=cfg.node_timeout_ms),
            clock=lambda: self.sim.now, rng=byte_stream(seed, "gateway"), audit_sink=self._on_audit,
        )
        self.nodes: list[VerifierNode] = []
        for i in range(cfg.n_nodes):
            view = new_view(f"node-{i}", cfg.ttl_ms, cfg.poll_interval_ms, cfg.cache_mode)
            node = VerifierNode(f"node-{i}", KeyPair.from_seed(derive(seed, "node", i)), self.store, self.ledger,
                                view=view, auto_refresh=False, clock=lambda: self.sim.now)
            node.install_view(snapshot_view(node.view, self.ledger, 0))
            self.nodes.append(node)
            self.gateway.register_node(node.node_id, node.public_key, _no_transport)
        self.node_free_at = [0] * cfg.n_nodes
        self.node_busy_ms = [0] * cfg.n_nodes
        self.user_count = users
        self.wallets: dict[int, Wallet] = {}
        self.auths: list[AuthRecord] = []
        self.revocations: list[RevocationRecord] = []
        self.stale_acceptances: list[dict[str, Any]] = []
        self.errors: list[str] = []
        self.ledger.subscribe(self._on_commit)
        poll = cfg.poll_interval_ms
        if poll > 0:
            phases = stream(seed, "phase")
            for i in range(cfg.n_nodes):
                self.sim.at(phases.randrange(poll), self._poll_tick, i)

    def latency(self, purpose: str, link: str) -> int:
        return self.cfg.link(link).sample(self._lat[purpose])

    # -- ledger views --------------------------------------------------------

    def _install(self, i: int, view) -> None:
        node = self.nodes[i]
        node.install_view(view)
        self._note_seen(i)

    def _note_seen(self, i: int) -> None:
        node = self.nodes[i]
        for rec in self.revocations:
            if node.node_id not in rec.seen_ms and node.view.as_of_height >= rec.height:
                rec.seen_ms[node.node_id] = self.sim.now

    def _poll_tick(self, i: int) -> None:
        snap = snapshot_view(self.nodes[i].view, self.ledger, self.sim.now)
        self.sim.after(self.latency("poll", "ledger_node"), self._install, i, snap)
        nxt = self.sim.now + self.cfg.poll_interval_ms
        if nxt <= self.tick_until:
            self.sim.at(nxt, self._poll_tick, i)

    def _push(self, i: int, block: RevocationBlock) -> None:
        node = self.nodes[i]
        node.view = apply_notification(node.view, self.ledger, block)
        self._note_seen(i)

    def _on_commit(self, block: RevocationBlock) -> None:
        for ev in block.events:
            user = self._user_of.get(ev.credential_id, -1)
            self.revocations.append(RevocationRecord(user, ev.credential_id, block.index + 1, self.sim.now))
        if self.cfg.poll_interval_ms == 0:
            for i in range(len(self.nodes)):
                snap = snapshot_view(self.nodes[i].view, self.ledger, self.sim.now)
                self.sim.after(self.latency("poll", "ledger_node"), self._install, i, snap)
        if self.cfg.cache_mode == EVENT_DRIVEN:
            for i in range(len(self.nodes)):
                self.sim.after(self.latency("push", "ledger_node"), self._push, i, block)

    # -- audit -----------------------------------------------------------------

    def _on_audit(self, event: AuditEvent) -> None:
        for i in range(len(self.logs)):
            self.sim.after(self.latency("audit", "audit"), self._deliver_audit, i, event)

    def _deliver_audit(self, i: int, event: AuditEvent) -> None:
        log = self.logs[i]
        log.append_event(event, self.sim.now)
        self._schedule_release(i)

    def _schedule_release(self, i: int) -> None:
        t = self.logs[i].next_release_time()
        if t is not None:
            self.sim.at(max(int(t), self.sim.now), self._release_audit, i)

    def _release_audit(self, i: int) -> None:
        self.logs[i].advance(self.sim.now)
        self._schedule_release(i)

    # -- enrolment and revocation -------------------------------------------------

    @property
    def _user_of(self) -> dict[bytes, int]:
        return {w.credential.credential_id: u for u, w in self.wallets.items()}

    def enroll(self, user: int) -> None:
        wallet = enrol_wallet(self.issuer, derive(self.cfg.seed, "user", user), derive(self.cfg.seed, "face", user),
                              self.sim.now, rng=self._device_bytes)
        try:
            self.gateway.handle_enroll(wallet.enroll_request(self.issuer.keys.public_key), self.sim.now)
        except BioQuorumError as exc:
            self.errors.append(f"enroll {user}: {type(exc).__name__}")
            return
        self.wallets[user] = wallet

    def revoke(self, user: int) -> None:
        wallet = self.wallets.get(user)
        if wallet is None:
            self.errors.append(f"revoke {user}: not enrolled")
            return
        cred = wallet.credential
        req = RevokeRequest.create(self.issuer, cred.credential_id, cred.metadata_cid, "compromised", self.sim.now)
        try:
            self.gateway.handle_revoke(req, self.sim.now)
        except (AlreadyRevoked, BioQuorumError) as exc:
            self.errors.append(f"revoke {user}: {type(exc).__name__}")

    # -- authentication ---------------------------------------------------------------

    def auth(self, user: int, *, fetch_challenge: bool = False,
             on_done: Callable[[AuthRecord], None] | None = None) -> None:
        """Start one authentication for *user* at the current time.

        With ``fetch_challenge`` the client first does a challenge round trip;
        otherwise it already holds one issued now. Latency is measured from
        sending AUTH_REQ to receiving the response either way.
        """
        if fetch_challenge:
            self.sim.after(self.latency("client", "client_gateway"), self._challenge_at_gateway, user, on_done)
            return
        self._send_auth(user, self._issue(user), on_done)

    def _issue(self, user: int):
        wallet = self.wallets[user]
        try:
            return self.gateway.issue_challenge(wallet.did, self.sim.now).challenge
        except BioQuorumError:
            return None

    def _challenge_at_gateway(self, user: int, on_done) -> None:
        challenge = self._issue(user)
        self.sim.after(self.latency("client", "client_gateway"), self._send_auth, user, challenge, on_done)

    def _send_auth(self, user: int, challenge: bytes | None, on_done) -> None:
        rec = AuthRecord(len(self.auths), user, self.sim.now, on_done=on_done)
        self.auths.append(rec)
        wallet = self.wallets.get(user)
        if wallet is None or challenge is None:
            self._finish_local(rec, "no_challenge" if wallet else "not_enrolled")
            return
        probe = wallet.capture(self._device_bytes(16))
        try:
            req = wallet.authenticate(probe, challenge, self.ledger.height, rng=self._device_bytes)
        except MatchRejected:
            self._finish_local(rec, "match_rejected")
            return
        self.sim.after(self.latency("client", "client_gateway"), self._auth_at_gateway, rec, req)

    def _finish_local(self, rec: AuthRecord, reason: str) -> None:
        rec.outcome, rec.reason = "reject", reason
        rec.decided_ms = rec.completed_ms = self.sim.now
        if rec.on_done:
            rec.on_done(rec)

    def _auth_at_gateway(self, rec: AuthRecord, req) -> None:
        rec.gateway_ms = self.sim.now
        try:
            rnd = self.gateway.prepare_auth(req, self.sim.now)
        except BioQuorumError as exc:
            rec.outcome, rec.reason = "reject", getattr(exc, "reason", None) or type(exc).__name__
            rec.decided_ms = self.sim.now
            self.sim.after(self.latency("client", "client_gateway"), self._auth_response, rec)
            return
        for i, node in enumerate(self.nodes):
            self.sim.after(self.latency("fanout", "gateway_node"), self._task_at_node, i, rnd.tasks[node.node_id],
                           rec, rnd)
        self.sim.after(self.cfg.node_timeout_ms, self._decide, rec, rnd)

    def _task_at_node(self, i: int, task: VerifyTask, rec: AuthRecord, rnd: AuthRound) -> None:
        node = self.nodes[i]
        if node.view.is_stale(self.sim.now):
            # TTL expired: fetch a fresh view before answering
            one_way = self.latency("refresh", "ledger_node")
            self.sim.after(one_way, self._refresh_read, i, task, rec, rnd, one_way)
            return
        self._queue_task(i, task, rec, rnd)

    def _refresh_read(self, i, task, rec, rnd, one_way: int) -> None:
        snap = snapshot_view(self.nodes[i].view, self.ledger, self.sim.now)
        self.sim.after(one_way, self._refresh_done, i, snap, task, rec, rnd)

    def _refresh_done(self, i, snap, task, rec, rnd) -> None:
        self._install(i, snap)
        self._queue_task(i, task, rec, rnd)

    def _queue_task(self, i: int, task: VerifyTask, rec: AuthRecord, rnd: AuthRound) -> None:
        service = self.cfg.node_service_ms
        if service == 0:
            self._evaluate(i, task, rec, rnd)
            return
        start = max(self.sim.now, self.node_free_at[i])
        self.node_free_at[i] = start + service
        self.node_busy_ms[i] += service
        self.sim.at(start + service, self._evaluate, i, task, rec, rnd)

    def _evaluate(self, i: int, task: VerifyTask, rec: AuthRecord, rnd: AuthRound) -> None:
        node = self.nodes[i]
        result = node.handle_verify_task(task, self.sim.now)
        revoked_at = self.ledger.revoked_height(task.proof.credential_id)
        if result.vote.accepted and revoked_at is not None:
            self.stale_acceptances.append({
                "auth_id": rec.auth_id,
                "at_ms": self.sim.now,
                "node_id": node.node_id,
                "revoked_height": revoked_at,
                "view_height": result.as_of_height,
            })
        self.sim.after(self.latency("fanout", "gateway_node"), self._result_at_gateway, result, rec, rnd)

    def _result_at_gateway(self, result: VerifyResult, rec: AuthRecord, rnd: AuthRound) -> None:
        if rec.decided_ms is not None:
            return
        rec.results[result.node_id] = result
        if len(rec.results) == len(self.nodes):
            self._decide(rec, rnd)

    def _decide(self, rec: AuthRecord, rnd: AuthRound) -> None:
        if rec.decided_ms is not None:
            return
        outcome = self.gateway.finish_auth(rnd, rec.results, self.sim.now)
        rec.decided_ms = self.sim.now
        rec.outcome = outcome.decision.outcome
        rec.reason = outcome.decision.reason or ""
        rec.votes = [str(v.vote) if v else "timeout" for v in outcome.decision.votes]
        self.sim.after(self.latency("client", "client_gateway"), self._auth_response, rec)

    def _auth_response(self, rec: AuthRecord) -> None:
        rec.completed_ms = self.sim.now
        if rec.on_done:
            rec.on_done(rec)

    # -- end of run --------------------------------------------------------------------

    def drain(self) -> None:
        self.sim.run()
        if self.cfg.audit_policy == DETERMINISTIC:
            for log in self.logs:
                log.flush()


def _no_transport(task: VerifyTask) -> VerifyResult:
    raise RuntimeError("simulated nodes are driven by the event queue")
