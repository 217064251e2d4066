import csv
import io
import json
import time

import pytest

from bioquorum.audit import DETERMINISTIC, NAIVE, export_log
from bioquorum.cli import main
from bioquorum.harness.config import Action, LatencyModel, ScenarioConfig
from bioquorum.harness.sim import World
from bioquorum.trust import RevocationLedger, append_revocation, export_ledger

from .stack import Stack


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def burst_logs(policy):
    cfg = ScenarioConfig(seed=3, latency=LatencyModel.uniform(10, 150), users=20, audit_policy=policy,
                         workload=(Action(500, "revoke_burst", 0, count=20, spacing_ms=5),))
    world = World(cfg, cfg.users, tick_until=5000)
    for u in range(cfg.users):
        world.enroll(u)
    for a in cfg.actions():
        world.sim.at(a.at_ms, world.revoke, a.user)
    world.drain()
    return world.logs


def test_usage_errors(capsys):
    assert run(capsys,)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "auth", "--wallet", "w", "--gateway", "nocolon")[0] == 2
    assert run(capsys, "ledger", "verify", "/nonexistent")[0] == 2


def test_keygen(tmp_path, capsys):
    code, out, _ = run(capsys, "keygen", "--out", str(tmp_path / "k.json"), "--seed", "11" * 32)
    doc = json.loads((tmp_path / "k.json").read_text())
    assert code == 0 and out.strip() == doc["did"] and doc["seed"] == "11" * 32
    assert (tmp_path / "k.json").stat().st_mode & 0o777 == 0o600


def test_ledger_verify(tmp_path, capsys):
    ledger = RevocationLedger()
    for i in range(3):
        append_revocation(ledger, bytes([i]) * 16, "lost", i)
    data = bytearray(export_ledger(ledger))
    (tmp_path / "l").write_bytes(bytes(data))
    assert run(capsys, "ledger", "verify", str(tmp_path / "l"))[:2] == (0, "ok: 3 blocks\n")
    i = data.index(b"lost")
    data[i] = ord("L")
    (tmp_path / "l").write_bytes(bytes(data))
    code, out, _ = run(capsys, "ledger", "verify", str(tmp_path / "l"))
    assert code == 1 and out.startswith("broken at block")


def test_audit_verify_and_compare(tmp_path, capsys):
    for policy in (DETERMINISTIC, NAIVE):
        for i, log in enumerate(burst_logs(policy)):
            (tmp_path / f"{policy}-{i}").write_bytes(export_log(log))
    det = [str(tmp_path / f"{DETERMINISTIC}-{i}") for i in range(3)]
    naive = [str(tmp_path / f"{NAIVE}-{i}") for i in range(3)]
    assert run(capsys, "audit", "verify", det[0])[:2] == (0, "ok: 40 entries\n")  # 20 enrolments then 20 revocations
    code, out, _ = run(capsys, "audit", "compare", *det)
    assert code == 0 and json.loads(out)["diverged"] is False
    code, out, _ = run(capsys, "audit", "compare", "--format", "csv", *naive)
    assert code == 1 and list(csv.reader(io.StringIO(out)))


def test_sim_run(tmp_path, capsys):
    cfg = {"seed": 5, "users": 2, "latency": {"fixed": 50},
           "workload": [{"at_ms": 100, "kind": "auth", "user": 0}]}
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "sim", "run", "--config", str(tmp_path / "s.json"))
    assert code == 0 and json.loads(out)["auths"][0]["outcome"] == "accept"
    code, _, _ = run(capsys, "sim", "run", "--config", str(tmp_path / "s.json"), "--set", "seed=9",
                     "--format", "csv", "--out", str(tmp_path / "r.csv"))
    assert code == 0 and (tmp_path / "r.csv").read_text().startswith("auth_id,")
    assert run(capsys, "sim", "run", "--config", str(tmp_path / "s.json"), "--set", "users=0")[0] == 2
    assert run(capsys, "sim", "run", "--config", str(tmp_path / "s.json"), "--set", "bogus")[0] == 2


def test_load_run_sim(tmp_path, capsys):
    (tmp_path / "l.json").write_text(json.dumps({"clients": 1, "duration_ms": 2000, "latency": {"fixed": 50}}))
    code, out, err = run(capsys, "load", "run", "--config", str(tmp_path / "l.json"))
    assert code == 0 and json.loads(out)["p50_ms"] == 200 and "p95=200" in err


def test_functional(capsys):
    code, out, _ = run(capsys, "functional")
    assert code == 0 and "Overall" in out and "FAIL" not in out
    code, out, _ = run(capsys, "functional", "--inject", "naive-audit")
    assert code == 1 and out.count("FAIL") == 2


def test_client_commands_against_stack(tmp_path, capsys):
    stack = Stack()
    gw = "%s:%d" % stack.address
    try:
        for name, seed in (("issuer", "aa"), ("alice", "bb")):
            assert run(capsys, "keygen", "--out", str(tmp_path / name), "--seed", seed * 32)[0] == 0
        wallet = str(tmp_path / "wallet")
        code, out, _ = run(capsys, "enroll", "--issuer-key", str(tmp_path / "issuer"), "--subject-key",
                           str(tmp_path / "alice"), "--face-seed", "alice", "--wallet", wallet,
                           "--attribute", "role=staff", "--gateway", gw)
        assert code == 0 and json.loads(out)["did"].startswith("did:ciph:")
        code, out, _ = run(capsys, "challenge", "--wallet", wallet, "--gateway", gw)
        assert code == 0 and len(json.loads(out)["challenge"]) == 64
        code, out, _ = run(capsys, "auth", "--wallet", wallet, "--gateway", gw, "--token-out", str(tmp_path / "t"))
        assert code == 0 and json.loads(out)["outcome"] == "accept" and (tmp_path / "t").read_text().count(".") == 2
        code, out, err = run(capsys, "auth", "--wallet", wallet, "--gateway", gw, "--rooted")
        assert code == 1 and "DeviceUntrusted" in err
        assert run(capsys, "revoke", "--issuer-key", str(tmp_path / "issuer"), "--wallet", wallet,
                   "--gateway", gw)[0] == 0
        time.sleep(0.6)  # one poll interval
        code, out, _ = run(capsys, "auth", "--wallet", wallet, "--gateway", gw)
        assert code == 1 and json.loads(out)["reason"] == "revoked"
        code, _, err = run(capsys, "revoke", "--issuer-key", str(tmp_path / "alice"), "--wallet", wallet,
                           "--gateway", gw)
        assert code == 1 and "rejected" in err
    finally:
        stack.close()


@pytest.mark.parametrize("argv", [["auth", "--wallet", "/nonexistent", "--gateway", "127.0.0.1:1"]])
def test_missing_files_are_config_errors(argv, capsys):
    assert run(capsys, *argv)[0] == 2
