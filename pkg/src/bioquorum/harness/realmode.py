"""Real-mode load: separate gateway and node processes over TCP on this machine.

Latency is injected by the servers themselves (one sleep per link traversal),
so the measured numbers include real serialization, crypto and scheduling on
top of the configured link delays.
"""

from __future__ import annotations

import itertools
import json
import os
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path
from typing import Any

from ..device import enrol_wallet
from ..errors import BioQuorumError, IoFailure
from ..identity import Issuer, KeyPair
from ..wire import WireClient
from .config import LoadConfig
from .load import LatencyReport, Sample, summarize

__all__ = ["Cluster", "run_real_load"]

_READY_TIMEOUT_S = 30


def _spawn(args: list[str]) -> tuple[subprocess.Popen[str], int]:
    proc = subprocess.Popen([sys.executable, "-m", "bioquorum", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.DEVNULL, text=True)
    deadline = time.monotonic() + _READY_TIMEOUT_S
    assert proc.stdout is not None
    while time.monotonic() < deadline:
        line = proc.stdout.readline()
        if not line:
            break
        if line.startswith("listening "):
            return proc, int(line.split()[-1].rsplit(":", 1)[1])
    proc.kill()
    raise IoFailure(f"process {' '.join(args)} did not start")


class Cluster:
    """Writes a deployment into *root*, starts n nodes then the gateway."""

    def __init__(self, root: Path, cfg: LoadConfig, extra: dict[str, Any] | None = None) -> None:
        self.root = root
        self.cfg = cfg
        self.extra = extra or {}
        self.procs: list[subprocess.Popen[str]] = []
        self.gateway_port = 0

    def _write(self, name: str, doc: dict[str, Any]) -> Path:
        path = self.root / name
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    def start(self) -> Cluster:
        (self.root / "mac.key").write_text(os.urandom(32).hex())
        nodes = []
        for i in range(self.cfg.n_nodes):
            seed = os.urandom(32)
            (self.root / f"node-{i}.key").write_text(seed.hex())
            nodes.append({"node_id": f"node-{i}", "host": "127.0.0.1", "port": 0,
                          "public_key": KeyPair.from_seed(seed).public_key.hex(), "key_file": f"node-{i}.key"})
        doc: dict[str, Any] = {
            "gateway": {"host": "127.0.0.1", "port": 0},
            "nodes": nodes,
            "quorum": self.cfg.quorum,
            "node_timeout_ms": self.cfg.node_timeout_ms,
            "mac_key_file": "mac.key",
            "store_dir": "store",
            "ledger_path": "ledger.jsonl",
            "cache": {"mode": self.cfg.cache_mode, "poll_interval_ms": self.cfg.poll_interval_ms,
                      "ttl_ms": self.cfg.ttl_ms},
            "links": {name: self.cfg.link(name).to_document() for name in ("client_gateway", "gateway_node")},
            "latency_seed": self.cfg.seed,
            **self.extra,
        }
        node_cfg = self._write("nodes.json", doc)
        try:
            for entry in nodes:
                proc, port = _spawn(["node", "run", "--config", str(node_cfg), "--node-id", entry["node_id"]])
                self.procs.append(proc)
                entry["port"] = port
            proc, self.gateway_port = _spawn(["gateway", "run", "--config", str(self._write("gateway.json", doc))])
            self.procs.append(proc)
        except BaseException:
            self.stop()
            raise
        self.doc = doc
        return self

    def node_clients(self) -> list[WireClient]:
        return [WireClient(n["host"], n["port"]) for n in self.doc["nodes"]]

    def stop(self) -> None:
        for proc in self.procs:
            proc.terminate()
        for proc in self.procs:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
        self.procs.clear()

    def __enter__(self) -> Cluster:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def run_real_load(cfg: LoadConfig) -> LatencyReport:
    with tempfile.TemporaryDirectory(prefix="bioquorum-load-") as tmp, Cluster(Path(tmp), cfg) as cluster:
        issuer = Issuer.from_seed(os.urandom(32))
        samples: list[Sample] = []
        errors = [0]
        lock = threading.Lock()
        ids = itertools.count()
        start_barrier = threading.Barrier(cfg.clients + 1)
        t0 = [0.0]

        def client_loop(c: int) -> None:
            client = WireClient("127.0.0.1", cluster.gateway_port, timeout_s=30, pool_size=1)
            w = enrol_wallet(issuer, os.urandom(32), b"load-client-%d" % c, int(time.time() * 1000))
            try:
                client.enroll(w.enroll_request(issuer.keys.public_key))
            finally:
                start_barrier.wait()
            end = t0[0] + cfg.duration_ms / 1000
            while time.perf_counter() < end:
                try:
                    challenge, height = client.challenge(str(w.did))
                    req = w.authenticate(w.capture(os.urandom(16)), challenge, height)
                    sent = time.perf_counter()
                    body = client.auth(req)
                    done = time.perf_counter()
                except (BioQuorumError, OSError):
                    with lock:
                        errors[0] += 1
                    time.sleep(0.05)
                    continue
                rel = (sent - t0[0]) * 1000
                if rel >= cfg.warmup_ms and done <= end:
                    with lock:
                        samples.append(Sample(next(ids), c, round(rel, 3), round((done - sent) * 1000, 3),
                                              body["decision"]["outcome"]))
                if cfg.think_ms:
                    time.sleep(cfg.think_ms / 1000)
            client.close()

        threads = [threading.Thread(target=client_loop, args=(c,), daemon=True) for c in range(cfg.clients)]
        for t in threads:
            t.start()
        cpu0 = time.process_time()
        t0[0] = time.perf_counter()
        start_barrier.wait()
        for t in threads:
            t.join()
        wall = time.perf_counter() - t0[0]

        processed: dict[str, int] = {}
        cpu: dict[str, float] = {"load_driver": round(time.process_time() - cpu0, 3)}
        for client in cluster.node_clients():
            status = client.status()
            processed[status["node_id"]] = status["processed"]
            cpu[status["node_id"]] = status["cpu_ms"] / 1000
            client.close()
        gw = WireClient("127.0.0.1", cluster.gateway_port)
        cpu["gateway"] = gw.status()["cpu_ms"] / 1000
        gw.close()
        server_cpu = sum(v for k, v in cpu.items() if k != "load_driver")
        cpu["server_utilisation"] = round(server_cpu / (wall * (os.cpu_count() or 1)), 4)
        return summarize("real", samples, (cfg.duration_ms - cfg.warmup_ms) / 1000, processed, cpu, errors[0],
                         cfg.to_document())
