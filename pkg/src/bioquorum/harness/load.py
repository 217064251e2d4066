"""Closed-loop load generation with nearest-rank latency percentiles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..errors import ConfigError
from .config import LoadConfig
from .sim import AuthRecord, World

__all__ = ["LatencyReport", "Sample", "nearest_rank", "run_load", "summarize"]


def nearest_rank(sorted_values: Sequence[float], pct: int) -> float:
    """Smallest value with at least ``pct`` percent of the sample at or below it."""
    if not sorted_values:
        raise ValueError("percentile of an empty sample")
    if not 0 < pct <= 100:
        raise ValueError("pct must be in (0, 100]")
    rank = -(-pct * len(sorted_values) // 100)  # ceil without floats
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class Sample:
    request_id: int
    client: int
    sent_ms: float
    latency_ms: float
    outcome: str


@dataclass(frozen=True)
class LatencyReport:
    mode: str
    request_count: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    max_ms: float
    throughput_rps: float
    per_node_processed: dict[str, int]
    cpu: dict[str, float]  # busy virtual ms per node (sim) or process CPU seconds (real)
    outcomes: dict[str, int]
    samples: tuple[Sample, ...] = ()
    errors: int = 0
    config: dict[str, Any] = field(default_factory=dict)

    def to_document(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "cpu": dict(sorted(self.cpu.items())),
            "errors": self.errors,
            "max_ms": self.max_ms,
            "mode": self.mode,
            "outcomes": dict(sorted(self.outcomes.items())),
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "p99_ms": self.p99_ms,
            "per_node_processed": dict(sorted(self.per_node_processed.items())),
            "request_count": self.request_count,
            "samples": [s.__dict__ for s in self.samples],
            "throughput_rps": self.throughput_rps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=2) + "\n"


def summarize(
    mode: str,
    samples: Sequence[Sample],
    window_s: float,
    per_node_processed: dict[str, int],
    cpu: dict[str, float],
    errors: int = 0,
    config: dict[str, Any] | None = None,
) -> LatencyReport:
    lat = sorted(s.latency_ms for s in samples)
    outcomes: dict[str, int] = {}
    for s in samples:
        outcomes[s.outcome] = outcomes.get(s.outcome, 0) + 1
    if lat:
        p50, p95, p99, mx = (nearest_rank(lat, 50), nearest_rank(lat, 95), nearest_rank(lat, 99), lat[-1])
    else:
        p50 = p95 = p99 = mx = 0
    return LatencyReport(
        mode=mode,
        request_count=len(lat),
        p50_ms=p50,
        p95_ms=p95,
        p99_ms=p99,
        max_ms=mx,
        throughput_rps=round(len(lat) / window_s, 6) if window_s > 0 else 0.0,
        per_node_processed=per_node_processed,
        cpu=cpu,
        outcomes=outcomes,
        samples=tuple(sorted(samples, key=lambda s: s.request_id)),
        errors=errors,
        config=config or {},
    )


def run_load(config: LoadConfig) -> LatencyReport:
    if config.mode == "real":
        from .realmode import run_real_load

        return run_real_load(config)
    return _run_sim_load(config)


def _run_sim_load(cfg: LoadConfig) -> LatencyReport:
    if cfg.think_ms == 0 and cfg.link("client_gateway").lo_ms == 0:
        # a rejected request could complete at the instant it was sent and spin forever
        raise ConfigError("sim load needs think_ms > 0 or a non-zero client_gateway latency")
    horizon = cfg.duration_ms + cfg.poll_interval_ms + cfg.ttl_ms + 4 * cfg.max_latency_ms + cfg.node_timeout_ms
    world = World(cfg, cfg.clients, tick_until=horizon)
    for c in range(cfg.clients):
        world.enroll(c)
    samples: list[Sample] = []
    errors = 0

    def cycle(client: int) -> None:
        if world.sim.now < cfg.duration_ms:
            world.auth(client, fetch_challenge=True, on_done=done)

    def done(rec: AuthRecord) -> None:
        nonlocal errors
        if rec.gateway_ms is None:
            errors += 1
        elif rec.sent_ms >= cfg.warmup_ms and rec.completed_ms is not None and rec.completed_ms <= cfg.duration_ms:
            samples.append(Sample(rec.auth_id, rec.user, rec.sent_ms, rec.latency_ms, rec.outcome))
        world.sim.after(cfg.think_ms, cycle, rec.user)

    for c in range(cfg.clients):
        world.sim.at(0, cycle, c)
    world.drain()
    window_s = (cfg.duration_ms - cfg.warmup_ms) / 1000
    processed = {n.node_id: n.processed for n in world.nodes}
    busy = {n.node_id: float(b) for n, b in zip(world.nodes, world.node_busy_ms)}
    return summarize("sim", samples, window_s, processed, busy, errors, cfg.to_document())
