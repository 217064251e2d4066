"""Twelve end-to-end functional cases across five categories.

Fault injection switches reproduce two known defect classes without making
them the default: ``legacy-expiry`` (sessions outlive their window) and
``naive-audit`` (audit logs appended in arrival order).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Iterable

from .audit import DETERMINISTIC, NAIVE, compare_logs, verify_log
from .biometric import make_profile, sample_embedding
from .device import Wallet, enrol_wallet
from .errors import DeviceUntrusted, InvalidCredential, MatchRejected, PrivacyViolation, UnknownChallenge
from .gateway import Gateway, GatewayConfig, RevokeRequest
from .harness.config import Action, LatencyModel, ScenarioConfig
from .harness.scenario import run_scenario
from .harness.sim import World
from .identity import Issuer, KeyPair
from .node import VerifierNode
from .proof import DeviceAttestation
from .tokens import mint_token, validate_token
from .trust import EVENT_DRIVEN, ContentStore, RevocationLedger, new_view

__all__ = ["CATEGORIES", "INJECTIONS", "CaseResult", "format_table", "run_functional"]

INJECTIONS = ("legacy-expiry", "naive-audit")
CATEGORIES = ("Enrolment", "Authentication", "Revocation", "Audit", "Session")
_T0 = 1_700_000_000_000


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    category: str
    name: str
    passed: bool
    detail: str = ""


class _Env:
    """A small in-process deployment on a manual clock."""

    def __init__(self, inject: frozenset[str], seed: int = 7) -> None:
        self.inject = inject
        self.now = _T0
        self.store = ContentStore()
        self.ledger = RevocationLedger()
        self.issuer = Issuer.from_seed(bytes([seed]) * 32)
        self.gateway = Gateway(self.store, self.ledger, bytes([seed + 1]) * 32,
                               GatewayConfig(legacy_expiry="legacy-expiry" in inject), clock=lambda: self.now)
        # event-driven nodes with a zero TTL always see the ledger head
        for i in range(3):
            node = VerifierNode(f"node-{i}", KeyPair.from_seed(bytes([0x40 + i]) * 32), self.store, self.ledger,
                                view=new_view(f"node-{i}", ttl_ms=0, poll_interval_ms=0, mode=EVENT_DRIVEN),
                                clock=lambda: self.now)
            self.gateway.register_node(node.node_id, node.public_key, node.handle_verify_task)

    def wallet(self, n: int) -> Wallet:
        return enrol_wallet(self.issuer, bytes([n]) * 32, b"face-%d" % n, self.now)

    def enrolled(self, n: int) -> Wallet:
        w = self.wallet(n)
        self.gateway.handle_enroll(w.enroll_request(self.issuer.keys.public_key), self.now)
        return w

    def auth(self, w: Wallet, probe_seed: bytes = b"probe", attestation: DeviceAttestation | None = None):
        ch = self.gateway.issue_challenge(w.did, self.now)
        req = w.authenticate(w.capture(probe_seed), ch.challenge, self.ledger.height, attestation)
        return req, self.gateway.handle_auth(req, self.now)


def _e1(env: _Env) -> str | None:
    w = env.wallet(1)
    resp = env.gateway.handle_enroll(w.enroll_request(env.issuer.keys.public_key), env.now)
    if resp["metadata_cid"] != w.credential.metadata_cid or resp["metadata_cid"] not in env.store:
        return "metadata not stored under the credential's CID"
    dump = repr(env.gateway.storage_dump(env.now))
    if str(w.did) in dump or w.did.identifier in dump:
        return "gateway retained a DID-keyed record"
    return None


def _e2(env: _Env) -> str | None:
    w = env.wallet(2)
    smuggled = dict(w.metadata, embedding=[round(v * 1000) for v in sample_embedding(make_profile(b"x"), 0, b"").values])
    try:
        env.gateway.handle_enroll(dataclasses.replace(w.enroll_request(env.issuer.keys.public_key), metadata=smuggled),
                                  env.now)
    except PrivacyViolation:
        return None
    return "embedding in metadata was accepted"


def _e3(env: _Env) -> str | None:
    w = env.wallet(3)
    sig = bytearray(w.credential.signature)
    sig[5] ^= 0x01
    forged = dataclasses.replace(w.credential, signature=bytes(sig))
    try:
        env.gateway.handle_enroll(dataclasses.replace(w.enroll_request(env.issuer.keys.public_key), credential=forged),
                                  env.now)
    except InvalidCredential:
        return None
    return "credential with a broken signature was enrolled"


def _a1(env: _Env) -> str | None:
    w = env.enrolled(4)
    _, out = env.auth(w)
    if not out.decision.accepted or out.token is None:
        return f"honest user rejected: {out.decision.reason}"
    if not env.gateway.validate_token(out.token, env.now).valid:
        return "minted token does not validate"
    return None


def _a2(env: _Env) -> str | None:
    w = env.enrolled(5)
    req, out = env.auth(w)
    if not out.decision.accepted:
        return "first use of the challenge was rejected"
    try:
        env.gateway.handle_auth(req, env.now)
    except UnknownChallenge as exc:
        return None if exc.reason == "stale_challenge" else f"wrong reason {exc.reason}"
    return "replayed challenge was accepted"


def _a3(env: _Env) -> str | None:
    w = env.enrolled(6)
    impostor = sample_embedding(make_profile(b"someone-else"), 0.05, b"probe")
    ch = env.gateway.issue_challenge(w.did, env.now)
    try:
        w.authenticate(impostor, ch.challenge, env.ledger.height)
        return "impostor face produced a proof"
    except MatchRejected:
        pass
    try:
        env.auth(w, attestation=DeviceAttestation(rooted=True))
        return "rooted device produced a proof"
    except DeviceUntrusted:
        return None


def _r1(env: _Env) -> str | None:
    w = env.enrolled(7)
    cred = w.credential
    env.gateway.handle_revoke(RevokeRequest.create(env.issuer, cred.credential_id, cred.metadata_cid, "lost", env.now),
                              env.now)
    _, out = env.auth(w)
    if out.decision.accepted or out.token is not None:
        return "revoked credential was accepted"
    return None if out.decision.reason == "revoked" else f"rejected for {out.decision.reason}, not revoked"


def _r2(env: _Env) -> str | None:
    base = ScenarioConfig(seed=11, latency=LatencyModel.uniform(50, 150), poll_interval_ms=500, ttl_ms=1000,
                          users=3, workload=(Action(1000, "revoke", 0), Action(1200, "revoke", 1),
                                             Action(1201, "auth", 2)))
    polling = run_scenario(base)
    pushed = run_scenario(base.with_(cache_mode=EVENT_DRIVEN))
    bound = base.poll_interval_ms + base.ttl_ms + base.max_latency_ms
    if not polling.windows or max(polling.windows) > bound:
        return f"propagation window {polling.windows} exceeds {bound} ms"
    if any(e > p for e, p in zip(pushed.windows, polling.windows)):
        return "event-driven propagation was slower than polling"
    return None


def _burst_world(env: _Env) -> World:
    policy = NAIVE if "naive-audit" in env.inject else DETERMINISTIC
    cfg = ScenarioConfig(seed=3, latency=LatencyModel.uniform(10, 150), users=20, audit_policy=policy,
                         workload=(Action(500, "revoke_burst", 0, count=20, spacing_ms=5),))
    world = World(cfg, cfg.users, tick_until=5000)
    for u in range(cfg.users):
        world.enroll(u)
    for a in cfg.actions():
        world.sim.at(a.at_ms, world.revoke, a.user)
    world.drain()
    return world


def _u1(env: _Env) -> str | None:
    report = compare_logs(_burst_world(env).logs)
    return f"audit logs diverged ({report.kind}) at seq {report.first_divergent_seq}" if report.diverged else None


def _u2(env: _Env) -> str | None:
    for i, log in enumerate(_burst_world(env).logs):
        status = verify_log(log)
        if not status.ok:
            return f"log {i} broken at seq {status.first_bad_seq}"
        keys = [e.event.order_key() for e in log.entries]
        if keys != sorted(keys):
            return f"log {i} is not in (event_time, event_id) order"
    return None


def _session_token(env: _Env) -> tuple[str, int]:
    iat = env.now // 1000
    return mint_token(bytes([8]) * 32, "did:ciph:" + "0" * 32, "s1", iat, 900), iat + 900


def _s1(env: _Env) -> str | None:
    token, exp = _session_token(env)
    check = validate_token(token, bytes([8]) * 32, exp, legacy_expiry="legacy-expiry" in env.inject)
    return None if not check.valid and check.reason == "expired" else "token accepted at its expiry instant"


def _s2(env: _Env) -> str | None:
    token, exp = _session_token(env)
    check = validate_token(token, bytes([8]) * 32, exp + 30, legacy_expiry="legacy-expiry" in env.inject)
    return None if not check.valid else "token accepted 30 s after expiry"


CASES: tuple[tuple[str, str, str, Callable[[_Env], str | None]], ...] = (
    ("E1", "Enrolment", "valid enrolment stores metadata by CID", _e1),
    ("E2", "Enrolment", "embedding smuggled into metadata is refused", _e2),
    ("E3", "Enrolment", "credential with tampered signature is refused", _e3),
    ("A1", "Authentication", "honest user is granted a session", _a1),
    ("A2", "Authentication", "replayed challenge is refused", _a2),
    ("A3", "Authentication", "impostor face and rooted device are blocked", _a3),
    ("R1", "Revocation", "revoked credential is rejected with fresh views", _r1),
    ("R2", "Revocation", "propagation window bounded; push no slower than poll", _r2),
    ("U1", "Audit", "node audit logs agree after a revocation burst", _u1),
    ("U2", "Audit", "each audit log verifies and is canonically ordered", _u2),
    ("S1", "Session", "token rejected at now == exp", _s1),
    ("S2", "Session", "token rejected 30 s after exp", _s2),
)


def run_functional(inject: Iterable[str] = ()) -> list[CaseResult]:
    flags = frozenset(inject)
    unknown = flags - set(INJECTIONS)
    if unknown:
        raise ValueError(f"unknown injection {sorted(unknown)}")
    results = []
    for case_id, category, name, fn in CASES:
        env = _Env(flags)
        try:
            failure = fn(env)
        except Exception as exc:  # noqa: BLE001 - a crash is a failed row
            failure = f"{type(exc).__name__}: {exc}"
        results.append(CaseResult(case_id, category, name, failure is None, failure or ""))
    return results


def format_table(results: list[CaseResult]) -> str:
    lines = [f"{'case':<5} {'category':<15} {'result':<6} name", "-" * 72]
    for r in results:
        lines.append(f"{r.case_id:<5} {r.category:<15} {'PASS' if r.passed else 'FAIL':<6} {r.name}"
                     + (f"  [{r.detail}]" if r.detail else ""))
    lines += ["", f"{'category':<15} {'cases':>5} {'passed':>6} {'rate':>6}", "-" * 36]
    for cat in CATEGORIES:
        rows = [r for r in results if r.category == cat]
        ok = sum(r.passed for r in rows)
        lines.append(f"{cat:<15} {len(rows):>5} {ok:>6} {100 * ok / len(rows):>5.0f}%")
    ok = sum(r.passed for r in results)
    lines.append(f"{'Overall':<15} {len(results):>5} {ok:>6} {100 * ok / len(results):>5.0f}%")
    return "\n".join(lines)
