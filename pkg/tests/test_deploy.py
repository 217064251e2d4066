import json

import pytest

from bioquorum.deploy import MAC_KEY_ENV, Deployment
from bioquorum.errors import ConfigError, IoFailure


def doc(**extra):
    base = {"gateway": {"host": "127.0.0.1", "port": 0},
            "nodes": [{"node_id": "n0", "host": "127.0.0.1", "port": 0, "key_file": "n0.key"}],
            "store_dir": "store", "ledger_path": "ledger.jsonl"}
    base.update(extra)
    return base


def test_paths_relative_to_config(tmp_path):
    (tmp_path / "d.json").write_text(json.dumps(doc()))
    dep = Deployment.load(tmp_path / "d.json")
    assert dep.store_dir == tmp_path / "store" and dep.ledger_path == tmp_path / "ledger.jsonl"
    assert dep.node("n0").key_file == "n0.key"
    with pytest.raises(ConfigError):
        dep.node("n9")


def test_schema_rejects():
    with pytest.raises(ConfigError):
        Deployment.from_document(doc(colour="blue"))
    with pytest.raises(ConfigError):
        Deployment.from_document({"nodes": []})


def test_mac_key_sources(tmp_path, monkeypatch):
    monkeypatch.delenv(MAC_KEY_ENV, raising=False)
    dep = Deployment.from_document(doc(), tmp_path)
    with pytest.raises(ConfigError):
        dep.mac_key()
    (tmp_path / "mac").write_text("ab" * 32)
    dep = Deployment.from_document(doc(mac_key_file="mac"), tmp_path)
    assert dep.mac_key() == b"\xab" * 32
    monkeypatch.setenv(MAC_KEY_ENV, "CD" * 32)
    assert dep.mac_key() == b"\xcd" * 32
    monkeypatch.setenv(MAC_KEY_ENV, "zz")
    with pytest.raises(ConfigError):
        dep.mac_key()


def test_node_keys(tmp_path):
    dep = Deployment.from_document(doc(), tmp_path)
    with pytest.raises(IoFailure):
        dep.node_keys(dep.node("n0"))
    (tmp_path / "n0.key").write_text("01" * 32)
    assert len(dep.node_keys(dep.node("n0")).public_key) == 32


def test_gateway_config_and_links(tmp_path):
    dep = Deployment.from_document(doc(quorum=1, rate_limit={"capacity": 3}, legacy_expiry=True,
                                       links={"client_gateway": {"uniform": [10, 20]}}), tmp_path)
    cfg = dep.gateway_config()
    assert cfg.quorum == 1 and cfg.rate_capacity == 3 and cfg.legacy_expiry
    d = dep.link_delay("client_gateway", 0)
    assert (d.lo_ms, d.hi_ms) == (10, 20)
    assert dep.link_delay("gateway_node", 1).hi_ms == 0
