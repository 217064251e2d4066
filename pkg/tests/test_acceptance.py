"""The eight acceptance criteria. Each records one PASS/FAIL line, printed at the end of the run."""

import itertools
import json
import os
import random
import threading
import time
from contextlib import contextmanager
from importlib.resources import files
from pathlib import Path

from bioquorum.audit import DETERMINISTIC, NAIVE, AuditEvent, AuditLog, export_log, import_log
from bioquorum.biometric import enrol_template, make_profile, match, sample_embedding
from bioquorum.device import enrol_wallet
from bioquorum.errors import BioQuorumError, MalformedEncoding, MatchRejected
from bioquorum.functional import run_functional
from bioquorum.gateway import Gateway, aggregate, find_biometric_material, quorum_flags
from bioquorum.harness.config import Action, LatencyModel, LoadConfig, ScenarioConfig
from bioquorum.harness.load import run_load
from bioquorum.harness.scenario import run_scenario
from bioquorum.identity import Credential, Issuer, KeyPair, verify_credential
from bioquorum.node import VerifierNode, VerifyResult
from bioquorum.proof import ACCEPT, Verdict
from bioquorum.tokens import mint_token, validate_token
from bioquorum.trust import EVENT_DRIVEN, ContentStore, RevocationLedger, append_revocation, export_ledger, \
    import_ledger, new_view

from .conftest import ACCEPTANCE
from .test_biometric import ORACLE_GENUINE, ORACLE_IMPOSTOR

README = Path(__file__).resolve().parents[1] / "README.md"


@contextmanager
def criterion(num, name):
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        ACCEPTANCE[num] = (name, False, f"{info['detail']} [{type(exc).__name__}: {exc}]".strip())
        print(f"FAIL {num}. {name}")
        raise
    ACCEPTANCE[num] = (name, True, info["detail"])
    print(f"PASS {num}. {name}: {info['detail']}")


def flip(data: bytes, rng: random.Random) -> bytes:
    pos = rng.randrange(len(data) * 8)
    out = bytearray(data)
    out[pos // 8] ^= 1 << (pos % 8)
    return bytes(out)


def small_deployment(n=3):
    now = [1_700_000_000_000]
    store, ledger = ContentStore(), RevocationLedger()
    gateway = Gateway(store, ledger, os.urandom(32), clock=lambda: now[0])
    for i in range(n):
        node = VerifierNode(f"n{i}", KeyPair.from_seed(os.urandom(32)), store, ledger,
                            view=new_view(f"n{i}", ttl_ms=0, poll_interval_ms=0, mode=EVENT_DRIVEN),
                            clock=lambda: now[0])
        gateway.register_node(node.node_id, node.public_key, node.handle_verify_task)
    return gateway, ledger, now


# 1 ------------------------------------------------------------------------------------

def test_1_quorum_enumeration():
    with criterion(1, "quorum enumeration") as info:
        t0 = time.perf_counter()
        cases = 0
        for kinds in itertools.product(("accept", "reject", "timeout"), repeat=3):
            votes = [None if k == "timeout" else
                     VerifyResult("t", f"n{i}", ACCEPT if k == "accept" else Verdict.reject("revoked"), 0)
                     for i, k in enumerate(kinds)]
            expected = "accept" if kinds.count("accept") >= 2 else "reject"
            assert aggregate(votes, 2, 3).outcome == expected, kinds
            cases += 1
        single = run_scenario(ScenarioConfig(n_nodes=1, users=1, latency=LatencyModel.fixed(10)))
        assert quorum_flags(1, 1)["unilateral_grant"] and single.unilateral["unilateral_grant"]
        assert aggregate([VerifyResult("t", "n0", ACCEPT, 0)], 1, 1).unilateral
        elapsed = time.perf_counter() - t0
        assert cases == 27 and elapsed < 1
        info["detail"] = f"27/27 cases match, n=1 flagged unilateral, {elapsed:.2f}s"


# 2 ------------------------------------------------------------------------------------

def _tamper_targets():
    issuer = Issuer.from_seed(os.urandom(32))
    w = enrol_wallet(issuer, os.urandom(32), b"tamper", 1, {"role": "staff"})
    cred = w.credential.to_wire()

    def cred_ok(data):
        try:
            return verify_credential(Credential.from_wire(data), issuer.keys.public_key)
        except (MalformedEncoding, ValueError, UnicodeDecodeError):
            return False

    key = os.urandom(32)
    token = mint_token(key, str(w.did), "sess", 1000, 900).encode("ascii")

    def token_ok(data):
        return validate_token(data.decode("latin-1"), key, 1001).valid

    ledger = RevocationLedger()
    for i in range(5):
        append_revocation(ledger, os.urandom(16), "lost", i)
    blocks = export_ledger(ledger)

    def ledger_ok(data):
        parsed, status = import_ledger(data)
        return status.ok and len(parsed) == 5

    log = AuditLog(NAIVE)
    for i in range(5):
        log.append_event(AuditEvent.create("revoke", str(w.did), {"i": i}, i), i)
    audit = export_log(log)

    def audit_ok(data):
        parsed, status = import_log(data)
        return status.ok and len(parsed) == 5

    return {"credential": (cred, cred_ok), "token": (token, token_ok), "ledger": (blocks, ledger_ok),
            "audit": (audit, audit_ok)}


def test_2_tamper_evidence():
    with criterion(2, "tamper evidence") as info:
        t0 = time.perf_counter()
        rng = random.Random(int.from_bytes(os.urandom(4), "big"))
        targets = _tamper_targets()
        for kind, (data, ok) in targets.items():
            assert ok(data), f"untampered {kind} must verify"
        misses, counts = [], dict.fromkeys(targets, 0)
        for i in range(1000):
            kind = list(targets)[i % 4]
            data, ok = targets[kind]
            mutated = flip(data, rng)
            counts[kind] += 1
            if ok(mutated):
                misses.append((kind, mutated))
        elapsed = time.perf_counter() - t0
        info["detail"] = f"{1000 - len(misses)}/1000 detected {counts}, {elapsed:.1f}s"
        assert not misses and elapsed < 30


# 3 ------------------------------------------------------------------------------------

def test_3_revocation_propagation():
    with criterion(3, "revocation propagation") as info:
        t0 = time.perf_counter()
        in_window = stale_runs = 0
        max_window = 0
        pairwise = True
        for seed in range(100):
            base = ScenarioConfig(seed=seed, latency=LatencyModel.uniform(50, 150), poll_interval_ms=500,
                                  ttl_ms=1000, users=1, workload=(Action(1000, "revoke", 0), Action(1001, "auth", 0)))
            polling = run_scenario(base)
            pushed = run_scenario(base.with_(cache_mode=EVENT_DRIVEN))
            assert polling.ok and pushed.ok, seed
            if polling.auths_in_window():
                in_window += 1
                stale_runs += polling.stale_count > 0
            max_window = max(max_window, *polling.windows)
            pairwise &= len(pushed.windows) == len(polling.windows) and all(
                e <= p for e, p in zip(pushed.windows, polling.windows))
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"(a) stale in {stale_runs} of {in_window} in-window runs; (b) max window {max_window} ms; "
                          f"(c) event<=poll {pairwise}; {elapsed:.1f}s")
        assert in_window >= 95 and stale_runs >= 95
        assert max_window <= 1650
        assert pairwise
        assert elapsed < 60


# 4 ------------------------------------------------------------------------------------

def test_4_audit_divergence():
    with criterion(4, "audit divergence") as info:
        t0 = time.perf_counter()
        diverged = {NAIVE: 0, DETERMINISTIC: 0}
        for policy in diverged:
            for seed in range(100):
                cfg = ScenarioConfig(seed=seed, latency=LatencyModel.uniform(10, 150), users=20, n_nodes=3,
                                     audit_policy=policy,
                                     workload=(Action(500, "revoke_burst", 0, count=20, spacing_ms=5),))
                report = run_scenario(cfg)
                assert all(report.audit_logs_verified)
                diverged[policy] += report.diverged
        elapsed = time.perf_counter() - t0
        info["detail"] = f"naive {diverged[NAIVE]}/100, deterministic {diverged[DETERMINISTIC]}/100, {elapsed:.1f}s"
        assert diverged[NAIVE] >= 1 and diverged[DETERMINISTIC] == 0 and elapsed < 60


# 5 ------------------------------------------------------------------------------------

def test_5_biometric_calibration():
    with criterion(5, "biometric calibration") as info:
        salt, n = os.urandom(8), 10_000
        genuine = impostor = 0
        for i in range(n):
            p = make_profile(salt + b"g%d" % i)
            tpl = enrol_template(p, 0.05, seed=b"e")
            genuine += match(tpl, sample_embedding(p, 0.05, b"probe"), 0.8).accepted
            other = make_profile(salt + b"i%d" % i)
            impostor += match(tpl, sample_embedding(other, 0.05, b"probe"), 0.8).accepted
        g, im = genuine / n, impostor / n
        info["detail"] = f"genuine {100 * g:.2f}%, impostor {100 * im:.2f}% (oracle {100 * ORACLE_GENUINE:.2f}%, " \
                         f"{100 * ORACLE_IMPOSTOR:.2f}%)"
        assert g >= 0.99 and im <= 0.01
        assert abs(g - ORACLE_GENUINE) <= 0.005 and abs(im - ORACLE_IMPOSTOR) <= 0.005


# 6 ------------------------------------------------------------------------------------

def test_6_functional_suite():
    with criterion(6, "functional suite") as info:
        default = run_functional()
        legacy = {r.case_id for r in run_functional(["legacy-expiry"]) if not r.passed}
        naive = {r.case_id for r in run_functional(["naive-audit"]) if not r.passed}
        passed = sum(r.passed for r in default)
        info["detail"] = f"{passed}/12 default; legacy-expiry fails {sorted(legacy)}; naive-audit fails {sorted(naive)}"
        assert passed == 12
        assert legacy == {"S1", "S2"} and naive == {"U1", "U2"}
        text = README.read_text(encoding="utf-8")
        assert "81%" in text and "not a target" in text
        assert "85%" in text and "83%" in text


# 7 ------------------------------------------------------------------------------------

def test_7a_sim_latency_analytic():
    with criterion(7, "latency") as info:
        cg, gn, service = 120, 80, 7
        report = run_load(LoadConfig(clients=1, duration_ms=5000, think_ms=200, node_service_ms=service,
                                     links={"client_gateway": LatencyModel.fixed(cg),
                                            "gateway_node": LatencyModel.fixed(gn)}))
        expected = 2 * cg + 2 * gn + service
        assert report.request_count > 0
        assert all(abs(s.latency_ms - expected) <= 1 for s in report.samples)
        info["detail"] = f"(a) sim {report.p50_ms} ms vs analytic {expected} ms"


def test_7b_real_mode_paper_profile():
    with criterion(7, "latency") as info:
        info["detail"] = ACCEPTANCE.get(7, ("", True, ""))[2]
        doc = json.loads(files("bioquorum").joinpath("profiles/paper_profile.json").read_text())
        cfg = LoadConfig.from_document(doc)
        t0 = time.perf_counter()
        report = run_load(cfg)
        elapsed = time.perf_counter() - t0
        info["detail"] += (f"; (b) real {cfg.n_nodes} nodes, {cfg.clients} clients, n={report.request_count}, "
                           f"p50/p95/p99 = {report.p50_ms}/{report.p95_ms}/{report.p99_ms} ms, {elapsed:.0f}s")
        assert cfg.n_nodes == 3 and cfg.clients == 50 and report.request_count > 0
        assert report.p50_ms <= report.p95_ms <= report.p99_ms
        assert 700 <= report.p95_ms <= 950
        assert elapsed < 300


# 8 ------------------------------------------------------------------------------------

def test_8_privacy_and_security():
    with criterion(8, "privacy and security") as info:
        gateway, ledger, now = small_deployment()
        issuer = Issuer.from_seed(os.urandom(32))
        w = enrol_wallet(issuer, os.urandom(32), b"privacy", now[0], {"role": "staff"})
        gateway.handle_enroll(w.enroll_request(issuer.keys.public_key))
        probe = w.capture(b"p")
        ch = gateway.issue_challenge(w.did)
        out = gateway.handle_auth(w.authenticate(probe, ch.challenge, ledger.height))
        assert out.decision.accepted
        dump = gateway.storage_dump()
        text = json.dumps(dump)
        assert str(w.did) not in text and w.did.identifier not in text
        for emb in (probe, w.capture(b"other")):
            assert emb.to_wire().hex() not in text
        assert not find_biometric_material(dump)
        # (b)
        exp_ms = (now[0] // 1000 + gateway.config.token_lifetime_s) * 1000
        assert gateway.validate_token(out.token, exp_ms - 1000).valid
        at_exp = gateway.validate_token(out.token, exp_ms)
        assert not at_exp.valid and at_exp.reason == "expired"
        # (c)
        ch = gateway.issue_challenge(w.did)
        req = w.authenticate(w.capture(b"q"), ch.challenge, ledger.height)
        barrier, results = threading.Barrier(100), []

        def replay():
            barrier.wait()
            try:
                results.append(gateway.handle_auth(req).decision.accepted)
            except BioQuorumError:
                results.append(False)

        threads = [threading.Thread(target=replay) for _ in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 100 and results.count(True) == 1
        # (d)
        built = 0
        for i in range(200):
            salt = os.urandom(16)
            probe = w.capture(b"d%d" % i)
            try:
                p = w.authenticate(probe, os.urandom(32), i, rng=lambda n, s=salt: s[:n]).proof
            except MatchRejected:
                continue  # a genuine probe below threshold builds no proof at all
            built += 1
            wire = p.to_wire()
            assert salt not in wire and salt.hex().encode() not in wire
            assert probe.to_wire() not in wire and probe.to_wire().hex().encode() not in wire
            assert not find_biometric_material(p.to_document())
        gateway.close()
        assert built >= 190
        info["detail"] = f"(a) dump clean (b) now==exp rejected (c) 1 of 100 replays won (d) {built} proofs clean"

