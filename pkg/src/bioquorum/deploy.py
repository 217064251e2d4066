"""Deployment config for real-mode gateway and node processes.

Documented keys (JSON)::

    gateway          {"host", "port"}                 listen address (port 0 picks one)
    nodes            [{"node_id", "host", "port", "public_key", "key_file"}]
                     node addresses; public_key (hex) is what the gateway
                     registers; key_file holds the node's 32-byte seed as hex
    quorum           integer or null for ceil((n+1)/2)
    node_timeout_ms  per-node fan-out timeout, default 2000
    token_lifetime_s default 900
    challenge_ttl_ms default 30000
    rate_limit       {"capacity": 20, "refill_per_s": 10}
    mac_key_file     file with the gateway MAC key as hex; the environment
                     variable BIOQUORUM_MAC_KEY (hex) overrides it
    store_dir        shared content-store directory
    ledger_path      shared revocation-ledger file
    cache            {"mode", "poll_interval_ms", "ttl_ms"} for nodes
    links            {"client_gateway", "gateway_node"} injected latency models
    latency_seed     seed for injected latency
    legacy_expiry    reproduce the lenient token-expiry defect (default false)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .canonical import parse_hex
from .errors import ConfigError, IoFailure, MalformedEncoding
from .gateway import Gateway, GatewayConfig
from .harness.config import LatencyModel
from .identity import KeyPair
from .node import VerifierNode
from .trust import CACHE_MODES, DEFAULT_POLL_INTERVAL_MS, DEFAULT_TTL_MS, POLLING, FileContentStore, RevocationLedger, new_view
from .wire import GatewayServer, LinkDelay, NodeServer, WireClient, node_transport

__all__ = ["DEPLOYMENT_SCHEMA", "Deployment", "NodeEntry", "build_gateway_server", "build_node_server"]

MAC_KEY_ENV = "BIOQUORUM_MAC_KEY"

_ADDR = {"type": "object", "properties": {"host": {"type": "string"}, "port": {"type": "integer", "minimum": 0}},
         "required": ["host", "port"], "additionalProperties": False}
_LAT = {"oneOf": [{"type": "integer", "minimum": 0},
                  {"type": "object", "properties": {"fixed": {"type": "integer"}}, "required": ["fixed"],
                   "additionalProperties": False},
                  {"type": "object", "properties": {"uniform": {"type": "array", "minItems": 2, "maxItems": 2}},
                   "required": ["uniform"], "additionalProperties": False}]}
DEPLOYMENT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "gateway": _ADDR,
        "nodes": {"type": "array", "items": {
            "type": "object",
            "properties": {"node_id": {"type": "string"}, "host": {"type": "string"},
                           "port": {"type": "integer", "minimum": 0}, "public_key": {"type": "string"},
                           "key_file": {"type": "string"}},
            "required": ["node_id", "host", "port"], "additionalProperties": False}},
        "quorum": {"type": ["integer", "null"], "minimum": 1},
        "node_timeout_ms": {"type": "integer", "minimum": 1},
        "token_lifetime_s": {"type": "integer", "minimum": 1},
        "challenge_ttl_ms": {"type": "integer", "minimum": 1},
        "rate_limit": {"type": "object", "properties": {"capacity": {"type": "integer", "minimum": 1},
                                                        "refill_per_s": {"type": "number", "exclusiveMinimum": 0}},
                       "additionalProperties": False},
        "mac_key_file": {"type": "string"},
        "store_dir": {"type": "string"},
        "ledger_path": {"type": "string"},
        "cache": {"type": "object", "properties": {"mode": {"enum": list(CACHE_MODES)},
                                                   "poll_interval_ms": {"type": "integer", "minimum": 0},
                                                   "ttl_ms": {"type": "integer", "minimum": 0}},
                  "additionalProperties": False},
        "links": {"type": "object", "properties": {"client_gateway": _LAT, "gateway_node": _LAT},
                  "additionalProperties": False},
        "latency_seed": {"type": "integer"},
        "legacy_expiry": {"type": "boolean"},
    },
    "required": ["gateway", "nodes", "store_dir", "ledger_path"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class NodeEntry:
    node_id: str
    host: str
    port: int
    public_key: str | None = None
    key_file: str | None = None


@dataclass
class Deployment:
    doc: dict[str, Any]
    base: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path) -> Deployment:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{path} is not JSON: {exc}") from exc
        return cls.from_document(doc, path.parent)

    @classmethod
    def from_document(cls, doc: Any, base: Path | None = None) -> Deployment:
        try:
            jsonschema.validate(doc, DEPLOYMENT_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"deployment config invalid: {exc.message}") from exc
        return cls(doc, base or Path.cwd())

    def _path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    @property
    def nodes(self) -> list[NodeEntry]:
        return [NodeEntry(**n) for n in self.doc["nodes"]]

    def node(self, node_id: str) -> NodeEntry:
        for entry in self.nodes:
            if entry.node_id == node_id:
                return entry
        raise ConfigError(f"node {node_id!r} is not in the deployment")

    @property
    def store_dir(self) -> Path:
        return self._path(self.doc["store_dir"])

    @property
    def ledger_path(self) -> Path:
        return self._path(self.doc["ledger_path"])

    def mac_key(self) -> bytes:
        text = os.environ.get(MAC_KEY_ENV)
        if text is None:
            if "mac_key_file" not in self.doc:
                raise ConfigError(f"no MAC key: set {MAC_KEY_ENV} or mac_key_file")
            try:
                text = self._path(self.doc["mac_key_file"]).read_text().strip()
            except OSError as exc:
                raise IoFailure(f"cannot read MAC key: {exc}") from exc
        try:
            return parse_hex(text.strip().lower())
        except MalformedEncoding as exc:
            raise ConfigError("MAC key must be hex") from exc

    def node_keys(self, entry: NodeEntry) -> KeyPair:
        if entry.key_file is None:
            raise ConfigError(f"node {entry.node_id} has no key_file")
        try:
            return KeyPair.from_seed(parse_hex(self._path(entry.key_file).read_text().strip(), 32))
        except OSError as exc:
            raise IoFailure(f"cannot read key for {entry.node_id}: {exc}") from exc

    def link_delay(self, name: str, salt: int) -> LinkDelay:
        model = LatencyModel.from_document(self.doc.get("links", {}).get(name, 0))
        return LinkDelay(model.lo_ms, model.hi_ms, seed=self.doc.get("latency_seed", 0) * 1000 + salt)

    def gateway_config(self) -> GatewayConfig:
        rl = self.doc.get("rate_limit", {})
        return GatewayConfig(
            quorum=self.doc.get("quorum"),
            node_timeout_ms=self.doc.get("node_timeout_ms", 2000),
            token_lifetime_s=self.doc.get("token_lifetime_s", 900),
            challenge_ttl_ms=self.doc.get("challenge_ttl_ms", 30_000),
            rate_capacity=rl.get("capacity", 20),
            rate_refill_per_s=rl.get("refill_per_s", 10.0),
            legacy_expiry=self.doc.get("legacy_expiry", False),
        )


def build_node_server(dep: Deployment, node_id: str) -> NodeServer:
    entry = dep.node(node_id)
    cache = dep.doc.get("cache", {})
    view = new_view(node_id, cache.get("ttl_ms", DEFAULT_TTL_MS),
                    cache.get("poll_interval_ms", DEFAULT_POLL_INTERVAL_MS), cache.get("mode", POLLING))
    node = VerifierNode(node_id, dep.node_keys(entry), FileContentStore(dep.store_dir),
                        RevocationLedger(dep.ledger_path), view=view)
    index = [n.node_id for n in dep.nodes].index(node_id)
    return NodeServer(node, (entry.host, entry.port), dep.link_delay("gateway_node", 1 + index))


def build_gateway_server(dep: Deployment) -> GatewayServer:
    cfg = dep.gateway_config()
    gateway = Gateway(FileContentStore(dep.store_dir), RevocationLedger(dep.ledger_path), dep.mac_key(), cfg)
    for entry in dep.nodes:
        client = WireClient(entry.host, entry.port, timeout_s=cfg.node_timeout_ms / 1000.0)
        if entry.public_key is not None:
            public_key = parse_hex(entry.public_key, 32)
        else:
            # no pinned key: ask the node once at startup
            public_key = parse_hex(client.status()["public_key"], 32)
        gateway.register_node(entry.node_id, public_key, node_transport(client))
    addr = dep.doc["gateway"]
    return GatewayServer(gateway, (addr["host"], addr["port"]), dep.link_delay("client_gateway", 0))
