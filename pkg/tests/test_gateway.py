import dataclasses
import itertools
import threading
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioquorum.canonical import canonicalize
from bioquorum.device import enrol_wallet
from bioquorum.errors import ConfigError, InvalidCredential, PrivacyViolation, RateLimited, UnknownChallenge
from bioquorum.gateway import (
    Gateway,
    GatewayConfig,
    RevokeRequest,
    aggregate,
    default_quorum,
    find_biometric_material,
    quorum_flags,
)
from bioquorum.identity import Issuer, KeyPair
from bioquorum.node import VerifierNode, VerifyResult
from bioquorum.proof import ACCEPT, Verdict
from bioquorum.trust import EVENT_DRIVEN, ContentStore, RevocationLedger, new_view

T0 = 1_700_000_000_000


def vote(node, kind):
    if kind == "timeout":
        return None
    return VerifyResult("t", node, ACCEPT if kind == "accept" else Verdict.reject("revoked"), 0)


def _oracle(kinds, quorum):
    # brute-force restatement of the fail-closed rule
    accepts = sum(1 for k in kinds if k == "accept")
    return "accept" if accepts >= quorum else "reject"


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_enumeration_matches_oracle(n):
    for quorum in range(1, n + 1):
        for kinds in itertools.product(["accept", "reject", "timeout"], repeat=n):
            d = aggregate([vote(f"n{i}", k) for i, k in enumerate(kinds)], quorum, n)
            assert d.outcome == _oracle(kinds, quorum), (kinds, quorum)


def test_duplicate_node_counts_once():
    votes = [vote("n0", "accept"), vote("n0", "accept"), None]
    assert aggregate(votes, 2, 3).outcome == "reject"


def test_missing_votes_fail_closed():
    assert aggregate([vote("n0", "accept")], 2, 3).outcome == "reject"
    d = aggregate([None, None, None], 2, 3)
    assert d.reason == "timeout"


def test_reason_is_most_common():
    votes = [VerifyResult("t", "a", Verdict.reject("revoked"), 0), VerifyResult("t", "b", Verdict.reject("revoked"), 0),
             VerifyResult("t", "c", Verdict.reject("stale_epoch"), 0)]
    assert aggregate(votes, 2, 3).reason == "revoked"


def test_quorum_defaults_and_flags():
    assert [default_quorum(n) for n in range(1, 8)] == [1, 2, 2, 3, 3, 4, 4]
    assert quorum_flags(1, 1) == {"unilateral_grant": True, "unilateral_deny": True}
    assert quorum_flags(2, 3) == {"unilateral_grant": False, "unilateral_deny": False}
    assert aggregate([vote("n0", "accept")], 1, 1).unilateral
    for bad in (0, 4):
        with pytest.raises(ConfigError):
            aggregate([], bad, 3)


def test_privacy_scan():
    assert find_biometric_material({"Template": "x"}) == ["Template"]
    assert find_biometric_material({"notes": [0.1] * 64}) == ["notes"]
    assert find_biometric_material({"x": {"y": "ab" * 128}}) == ["x.y"]
    assert find_biometric_material({"x": b"\x00" * 128}) == ["x"]
    assert find_biometric_material({"claims": ["role"], "issued_at": 5, "subject_did": "did:ciph:" + "0" * 32}) == []


class Deployment:
    def __init__(self, n=3, config=None, issuer_seed=b"\x11" * 32):
        self.now = T0
        self.store, self.ledger = ContentStore(), RevocationLedger()
        self.issuer = Issuer.from_seed(issuer_seed)
        self.events = []
        self.gateway = Gateway(self.store, self.ledger, b"m" * 32, config, clock=lambda: self.now,
                               audit_sink=self.events.append)
        self.nodes = []
        for i in range(n):
            node = VerifierNode(f"n{i}", KeyPair.from_seed(bytes([0x50 + i]) * 32), self.store, self.ledger,
                                view=new_view(f"n{i}", ttl_ms=0, poll_interval_ms=0, mode=EVENT_DRIVEN),
                                clock=lambda: self.now)
            self.nodes.append(node)
            self.gateway.register_node(node.node_id, node.public_key, node.handle_verify_task)

    def enrolled(self, k=1):
        w = enrol_wallet(self.issuer, bytes([k]) * 32, b"face%d" % k, self.now)
        self.gateway.handle_enroll(w.enroll_request(self.issuer.keys.public_key), self.now)
        return w

    def auth(self, w):
        ch = self.gateway.issue_challenge(w.did, self.now)
        return self.gateway.handle_auth(w.authenticate(w.capture(b"p"), ch.challenge, self.ledger.height), self.now)


@pytest.fixture
def dep():
    d = Deployment()
    yield d
    d.gateway.close()


def test_enrol_auth_revoke_cycle(dep):
    w = dep.enrolled()
    out = dep.auth(w)
    assert out.decision.accepted and out.decision.accept_count == 3
    assert dep.gateway.validate_token(out.token).sub == str(w.did)
    cred = w.credential
    block = dep.gateway.handle_revoke(RevokeRequest.create(dep.issuer, cred.credential_id, cred.metadata_cid, "lost",
                                                           dep.now))
    assert block.index == 0
    out = dep.auth(w)
    assert not out.decision.accepted and out.decision.reason == "revoked" and out.token is None
    assert [e.event_type for e in dep.events] == ["enroll", "auth_accept", "revoke", "auth_reject"]


def test_enrol_checks(dep):
    w = enrol_wallet(dep.issuer, b"\x02" * 32, b"f", dep.now)
    req = w.enroll_request(dep.issuer.keys.public_key)
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_enroll(dataclasses.replace(req, metadata=dict(w.metadata, claims=["other"])))
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_enroll(dataclasses.replace(req, metadata=dict(w.metadata, subject_did="did:ciph:" + "1" * 32)))
    with pytest.raises(PrivacyViolation):
        dep.gateway.handle_enroll(dataclasses.replace(req, metadata=dict(w.metadata, template="x")))
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_enroll(dataclasses.replace(req, issuer_public_key=KeyPair.from_seed(b"\x09" * 32).public_key))
    assert len(dep.store) == 0


def test_untrusted_issuer():
    d = Deployment(config=GatewayConfig(trusted_issuers=frozenset({"did:ciph:" + "0" * 32})))
    with pytest.raises(InvalidCredential):
        d.enrolled()


def test_revoke_requires_issuer(dep):
    w = dep.enrolled()
    cred = w.credential
    impostor = Issuer.from_seed(b"\x77" * 32)
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_revoke(RevokeRequest.create(impostor, cred.credential_id, cred.metadata_cid, "x", dep.now))
    good = RevokeRequest.create(dep.issuer, cred.credential_id, cred.metadata_cid, "x", dep.now)
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_revoke(dataclasses.replace(good, reason="y"))
    with pytest.raises(InvalidCredential):
        dep.gateway.handle_revoke(dataclasses.replace(good, credential_id=b"\x00" * 16))
    assert dep.ledger.height == 0


def test_challenge_single_use_and_expiry(dep):
    w = dep.enrolled()
    ch = dep.gateway.issue_challenge(w.did, dep.now)
    req = w.authenticate(w.capture(b"p"), ch.challenge, 0)
    assert dep.gateway.handle_auth(req).decision.accepted
    with pytest.raises(UnknownChallenge):
        dep.gateway.handle_auth(req)
    ch = dep.gateway.issue_challenge(w.did, dep.now)
    dep.now += dep.gateway.config.challenge_ttl_ms
    with pytest.raises(UnknownChallenge):
        dep.gateway.handle_auth(w.authenticate(w.capture(b"p"), ch.challenge, 0))


def test_concurrent_consumers_exactly_one_wins(dep):
    ch = dep.gateway.issue_challenge("did:ciph:" + "a" * 32, dep.now)
    barrier = threading.Barrier(100)
    wins = []

    def attempt():
        barrier.wait()
        wins.append(dep.gateway.consume_challenge(ch.challenge, dep.now))

    threads = [threading.Thread(target=attempt) for _ in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert wins.count(True) == 1 and len(wins) == 100


def test_rate_limit():
    d = Deployment(config=GatewayConfig(rate_capacity=2, rate_refill_per_s=1))
    d.gateway.issue_challenge("did:ciph:" + "a" * 32)
    d.gateway.issue_challenge("did:ciph:" + "a" * 32)
    with pytest.raises(RateLimited):
        d.gateway.issue_challenge("did:ciph:" + "a" * 32)
    d.gateway.issue_challenge("did:ciph:" + "b" * 32)


def test_slow_and_forged_nodes_count_as_reject():
    d = Deployment(config=GatewayConfig(node_timeout_ms=200))
    w = d.enrolled()
    honest = d.nodes[0].handle_verify_task

    def slow(task):
        time.sleep(1)
        return honest(task)

    def forged(task):
        res = d.nodes[2].handle_verify_task(task)
        return dataclasses.replace(res, node_signature=bytes(64))

    d.gateway.register_node("n1", d.nodes[1].public_key, slow)
    d.gateway.register_node("n2", d.nodes[2].public_key, forged)
    out = d.auth(w)
    assert not out.decision.accepted and out.decision.accept_count == 1
    d.gateway.close()


def test_two_of_three_suffices():
    d = Deployment()
    w = d.enrolled()
    d.gateway.register_node("n2", d.nodes[2].public_key, lambda task: (_ for _ in ()).throw(OSError("down")))
    out = d.auth(w)
    assert out.decision.accepted and out.decision.accept_count == 2
    d.gateway.close()


def test_quorum_config_out_of_range():
    d = Deployment(n=2, config=GatewayConfig(quorum=3))
    with pytest.raises(ConfigError):
        d.gateway.quorum


def test_storage_dump_has_no_identity(dep):
    w = dep.enrolled()
    dep.auth(w)
    dump = repr(dep.gateway.storage_dump())
    assert str(w.did) not in dump and w.did.identifier not in dump
    assert w.capture(b"p").to_wire().hex() not in dump
    canonicalize(dep.gateway.status())


@given(st.integers(0, 900 * 1000 * 2))
def test_token_validity_window(offset_ms):
    d = Deployment(n=1)
    w = d.enrolled()
    out = d.auth(w)
    iat = T0 // 1000
    check = d.gateway.validate_token(out.token, (iat * 1000) + offset_ms)
    assert check.valid == (offset_ms // 1000 < 900)
