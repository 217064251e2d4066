"""Scenario and load configurations, with their JSON schemas."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from ..audit import DEFAULT_SETTLE_DELAY_MS, DETERMINISTIC, POLICIES
from ..errors import ConfigError, IoFailure
from ..trust import CACHE_MODES, DEFAULT_POLL_INTERVAL_MS, DEFAULT_TTL_MS, POLLING

__all__ = [
    "ACTION_KINDS",
    "LINK_CLASSES",
    "LOAD_SCHEMA",
    "SCENARIO_SCHEMA",
    "Action",
    "LatencyModel",
    "LoadConfig",
    "ScenarioConfig",
    "load_config_file",
]

# client <-> gateway, gateway <-> node, ledger -> node (poll/push/refresh), audit fan-out
LINK_CLASSES = ("client_gateway", "gateway_node", "ledger_node", "audit")
ACTION_KINDS = ("enroll", "auth", "revoke", "revoke_burst")

_LATENCY_SCHEMA = {
    "oneOf": [
        {"type": "integer", "minimum": 0},
        {"type": "object", "properties": {"fixed": {"type": "integer", "minimum": 0}},
         "required": ["fixed"], "additionalProperties": False},
        {"type": "object", "properties": {"uniform": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                                      "minItems": 2, "maxItems": 2}},
         "required": ["uniform"], "additionalProperties": False},
    ]
}
_LINKS_SCHEMA = {
    "type": "object",
    "properties": {name: _LATENCY_SCHEMA for name in LINK_CLASSES},
    "additionalProperties": False,
}
_COMMON = {
    "notes": {"type": "array", "items": {"type": "string"}},
    "seed": {"type": "integer"},
    "n_nodes": {"type": "integer", "minimum": 1},
    "quorum": {"type": ["integer", "null"], "minimum": 1},
    "latency": _LATENCY_SCHEMA,
    "links": _LINKS_SCHEMA,
    "poll_interval_ms": {"type": "integer", "minimum": 0},
    "ttl_ms": {"type": "integer", "minimum": 0},
    "cache_mode": {"enum": list(CACHE_MODES)},
    "audit_policy": {"enum": list(POLICIES)},
    "settle_delay_ms": {"type": "integer", "minimum": 0},
    "node_timeout_ms": {"type": "integer", "minimum": 1},
    "node_service_ms": {"type": "integer", "minimum": 0},
}
SCENARIO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "scenario",
    "type": "object",
    "properties": {
        **_COMMON,
        "users": {"type": "integer", "minimum": 1},
        "workload": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "at_ms": {"type": "integer", "minimum": 0},
                    "kind": {"enum": list(ACTION_KINDS)},
                    "user": {"type": "integer", "minimum": 0},
                    "count": {"type": "integer", "minimum": 1},
                    "spacing_ms": {"type": "integer", "minimum": 0},
                },
                "required": ["at_ms", "kind"],
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}
LOAD_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "load",
    "type": "object",
    "properties": {
        **_COMMON,
        "mode": {"enum": ["sim", "real"]},
        "clients": {"type": "integer", "minimum": 1},
        "duration_ms": {"type": "integer", "minimum": 1},
        "think_ms": {"type": "integer", "minimum": 0},
        "warmup_ms": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class LatencyModel:
    """Integer milliseconds, either fixed or uniform over [lo, hi]."""

    lo_ms: int = 0
    hi_ms: int = 0

    def __post_init__(self) -> None:
        if self.lo_ms < 0 or self.hi_ms < self.lo_ms:
            raise ConfigError(f"latency needs 0 <= lo <= hi, got [{self.lo_ms}, {self.hi_ms}]")

    @classmethod
    def fixed(cls, ms: int) -> LatencyModel:
        return cls(ms, ms)

    @classmethod
    def uniform(cls, lo: int, hi: int) -> LatencyModel:
        return cls(lo, hi)

    @classmethod
    def from_document(cls, doc: Any) -> LatencyModel:
        if isinstance(doc, LatencyModel):
            return doc
        if isinstance(doc, int) and not isinstance(doc, bool):
            return cls.fixed(doc)
        if isinstance(doc, Mapping) and "fixed" in doc:
            return cls.fixed(int(doc["fixed"]))
        if isinstance(doc, Mapping) and "uniform" in doc:
            lo, hi = doc["uniform"]
            return cls.uniform(int(lo), int(hi))
        raise ConfigError(f"bad latency model {doc!r}")

    def to_document(self) -> dict[str, Any]:
        if self.lo_ms == self.hi_ms:
            return {"fixed": self.lo_ms}
        return {"uniform": [self.lo_ms, self.hi_ms]}

    def sample(self, rng: random.Random) -> int:
        return self.lo_ms if self.lo_ms == self.hi_ms else rng.randint(self.lo_ms, self.hi_ms)


@dataclass(frozen=True)
class Action:
    at_ms: int
    kind: str
    user: int = 0
    count: int = 1
    spacing_ms: int = 0

    def to_document(self) -> dict[str, Any]:
        return {"at_ms": self.at_ms, "count": self.count, "kind": self.kind, "spacing_ms": self.spacing_ms,
                "user": self.user}

    def expand(self) -> list[Action]:
        """A burst becomes one revoke per user, ``spacing_ms`` apart."""
        if self.kind != "revoke_burst":
            return [self]
        return [Action(self.at_ms + k * self.spacing_ms, "revoke", self.user + k) for k in range(self.count)]


def _links(doc: Mapping[str, Any]) -> dict[str, LatencyModel]:
    return {k: LatencyModel.from_document(v) for k, v in doc.items()}


@dataclass(frozen=True)
class _Common:
    seed: int = 0
    n_nodes: int = 3
    quorum: int | None = None
    latency: LatencyModel = LatencyModel()
    links: Mapping[str, LatencyModel] = field(default_factory=dict)
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS
    ttl_ms: int = DEFAULT_TTL_MS
    cache_mode: str = POLLING
    audit_policy: str = DETERMINISTIC
    settle_delay_ms: int = DEFAULT_SETTLE_DELAY_MS
    node_timeout_ms: int = 2000
    node_service_ms: int = 0

    def link(self, name: str) -> LatencyModel:
        if name not in LINK_CLASSES:
            raise ConfigError(f"unknown link class {name!r}")
        return self.links.get(name, self.latency)

    @property
    def max_latency_ms(self) -> int:
        return max(self.link(name).hi_ms for name in LINK_CLASSES)

    def _check(self) -> None:
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.quorum is not None and not 1 <= self.quorum <= self.n_nodes:
            raise ConfigError(f"quorum must be in 1..{self.n_nodes}")
        if self.cache_mode not in CACHE_MODES:
            raise ConfigError(f"unknown cache mode {self.cache_mode!r}")
        if self.audit_policy not in POLICIES:
            raise ConfigError(f"unknown audit policy {self.audit_policy!r}")
        unknown = set(self.links) - set(LINK_CLASSES)
        if unknown:
            raise ConfigError(f"unknown link classes {sorted(unknown)}")
        for name in ("poll_interval_ms", "ttl_ms", "settle_delay_ms", "node_service_ms"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.node_timeout_ms < 1:
            raise ConfigError("node_timeout_ms must be >= 1")

    def _common_document(self) -> dict[str, Any]:
        return {
            "audit_policy": self.audit_policy,
            "cache_mode": self.cache_mode,
            "latency": self.latency.to_document(),
            "links": {k: v.to_document() for k, v in sorted(self.links.items())},
            "n_nodes": self.n_nodes,
            "node_service_ms": self.node_service_ms,
            "node_timeout_ms": self.node_timeout_ms,
            "poll_interval_ms": self.poll_interval_ms,
            "quorum": self.quorum,
            "seed": self.seed,
            "settle_delay_ms": self.settle_delay_ms,
            "ttl_ms": self.ttl_ms,
        }

    def with_(self, **changes: Any):
        return replace(self, **changes)


def _validate(doc: Any, schema: Mapping[str, Any]) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid at {'/'.join(map(str, exc.absolute_path)) or '<root>'}: {exc.message}") from exc


def _common_kwargs(doc: Mapping[str, Any]) -> dict[str, Any]:
    out = {k: doc[k] for k in _COMMON if k in doc and k not in ("latency", "links", "notes")}
    if "latency" in doc:
        out["latency"] = LatencyModel.from_document(doc["latency"])
    if "links" in doc:
        out["links"] = _links(doc["links"])
    return out


@dataclass(frozen=True)
class ScenarioConfig(_Common):
    users: int = 1
    workload: tuple[Action, ...] = ()

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        self._check()
        for action in self.workload:
            if action.kind not in ACTION_KINDS:
                raise ConfigError(f"unknown action kind {action.kind!r}")
            last_user = action.user + (action.count - 1 if action.kind == "revoke_burst" else 0)
            if action.at_ms < 0 or last_user >= self.users:
                raise ConfigError(f"action {action} refers to a user outside 0..{self.users - 1} or negative time")

    def actions(self) -> list[Action]:
        out = [a for action in self.workload for a in action.expand()]
        return sorted(out, key=lambda a: a.at_ms)

    def to_document(self) -> dict[str, Any]:
        doc = self._common_document()
        doc["users"] = self.users
        doc["workload"] = [a.to_document() for a in self.workload]
        return doc

    @classmethod
    def from_document(cls, doc: Any) -> ScenarioConfig:
        _validate(doc, SCENARIO_SCHEMA)
        kwargs = _common_kwargs(doc)
        if "users" in doc:
            kwargs["users"] = doc["users"]
        kwargs["workload"] = tuple(Action(**a) for a in doc.get("workload", ()))
        return cls(**kwargs)


@dataclass(frozen=True)
class LoadConfig(_Common):
    mode: str = "sim"
    clients: int = 1
    duration_ms: int = 10_000
    think_ms: int = 0
    warmup_ms: int = 0
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self._check()
        if self.mode not in ("sim", "real"):
            raise ConfigError(f"unknown load mode {self.mode!r}")
        if self.clients < 1 or self.duration_ms < 1 or self.think_ms < 0 or self.warmup_ms < 0:
            raise ConfigError("clients and duration_ms must be >= 1; think_ms and warmup_ms >= 0")

    def to_document(self) -> dict[str, Any]:
        doc = self._common_document()
        doc.update(clients=self.clients, duration_ms=self.duration_ms, mode=self.mode, think_ms=self.think_ms,
                   warmup_ms=self.warmup_ms)
        return doc

    @classmethod
    def from_document(cls, doc: Any) -> LoadConfig:
        _validate(doc, LOAD_SCHEMA)
        kwargs = _common_kwargs(doc)
        for key in ("mode", "clients", "duration_ms", "think_ms", "warmup_ms"):
            if key in doc:
                kwargs[key] = doc[key]
        kwargs["notes"] = tuple(doc.get("notes", ()))
        return cls(**kwargs)


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
