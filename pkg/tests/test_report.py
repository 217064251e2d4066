import csv
import io
import json
import math

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioquorum.errors import ConfigError, IoFailure
from bioquorum.harness.config import Action, LatencyModel, LoadConfig, ScenarioConfig
from bioquorum.harness.load import Sample, nearest_rank, run_load, summarize
from bioquorum.harness.report import LATENCY_REPORT_SCHEMA, SIM_REPORT_SCHEMA, emit_report, render_report
from bioquorum.harness.scenario import run_scenario


def _oracle_rank(values, pct):
    # smallest v with at least pct% of the sample <= v, by brute force
    n = len(values)
    for v in sorted(values):
        if sum(1 for x in values if x <= v) * 100 >= pct * n:
            return v


def test_nearest_rank_known():
    vals = list(range(1, 101))
    assert [nearest_rank(vals, p) for p in (50, 95, 99, 100)] == [50, 95, 99, 100]
    assert nearest_rank([15, 20, 35, 40, 50], 30) == 20
    assert nearest_rank([15, 20, 35, 40, 50], 40) == 20
    assert nearest_rank([7], 1) == 7
    with pytest.raises(ValueError):
        nearest_rank([], 50)
    with pytest.raises(ValueError):
        nearest_rank([1], 0)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=200), st.integers(1, 100))
def test_nearest_rank_matches_oracle(values, pct):
    assert nearest_rank(sorted(values), pct) == _oracle_rank(values, pct)
    assert nearest_rank(sorted(values), pct) == sorted(values)[math.ceil(pct * len(values) / 100) - 1]


def test_summarize_counts():
    samples = [Sample(i, 0, i * 10.0, float(100 + i), "accept" if i % 4 else "reject") for i in range(20)]
    r = summarize("sim", samples, 2.0, {"n0": 20}, {"n0": 1.0})
    assert r.request_count == 20 and r.throughput_rps == 10.0
    assert r.p50_ms == 109 and r.p95_ms == 118 and r.max_ms == 119
    assert r.outcomes == {"accept": 15, "reject": 5}
    empty = summarize("sim", [], 1.0, {}, {})
    assert empty.request_count == 0 and empty.p95_ms == 0


def test_render_sim_json_and_csv():
    report = run_scenario(ScenarioConfig(seed=1, users=2, latency=LatencyModel.uniform(10, 20),
                                         workload=(Action(100, "auth", 0), Action(200, "auth", 1))))
    doc = json.loads(render_report(report, "json"))
    jsonschema.validate(doc, SIM_REPORT_SCHEMA)
    rows = list(csv.DictReader(io.StringIO(render_report(report, "csv"))))
    assert len(rows) == 2 and rows[0]["outcome"] == "accept" and rows[0]["votes"] == "accept accept accept"


def test_render_load_json_and_csv(tmp_path):
    report = run_load(LoadConfig(clients=2, duration_ms=2000, latency=LatencyModel.fixed(50)))
    jsonschema.validate(json.loads(render_report(report)), LATENCY_REPORT_SCHEMA)
    rows = list(csv.DictReader(io.StringIO(render_report(report, "csv"))))
    assert len(rows) == report.request_count and {r["latency_ms"] for r in rows} == {"200"}
    path = emit_report(report, "json", tmp_path / "r.json")
    assert json.loads(path.read_text())["p95_ms"] == 200
    with pytest.raises(IoFailure):
        emit_report(report, "json", tmp_path / "missing" / "r.json")
    with pytest.raises(ConfigError):
        render_report(report, "xml")
