import json

import pytest

from conftest import ROOT, text_doc
from metaquery.harness import MetricReport, collect_traces, evaluate, load_fixtures
from metaquery.llm import MockBackend
from metaquery.model import DocumentRepository, Query, TraceStore
from metaquery.pipeline import Engine, load_config, make_backend, preset
from metaquery.router import StatTable

COLLECT = ROOT / "fixtures" / "collect"


def test_one_subquery_three_capable_adapters_three_lines():
    mock = MockBackend([("judge", "YES"), ("step 1", "{}")], default="Paris")
    engine = Engine(preset("mini"), DocumentRepository([text_doc("t")]), mock)
    store = TraceStore()
    n = collect_traces([Query("q", "capital of France?", ("Paris",))], engine, store, judge=mock)
    traces = store.scan()
    assert n == 3 == len(traces)
    assert [t.adapter_id for t in traces] == ["semantic_aggregation", "programmatic_prompt", "single_model"]
    assert all(t.scores == {"f1": 1.0, "hit": 1.0, "coverage": 1.0, "sem_hit": 1.0} for t in traces)


def test_erroring_adapter_gets_zero_scores_and_collection_continues():
    mock = MockBackend([("judge", "YES"), ("LM program", "!error:provider")], default="Paris")
    engine = Engine(preset("mini"), DocumentRepository([text_doc("t")]), mock)
    store = TraceStore()
    collect_traces([Query("q1", "a?", ("Paris",)), Query("q2", "b?", ("Paris",))], engine, store, judge=mock)
    bad = store.scan(adapter_id="programmatic_prompt")
    assert len(bad) == 2
    assert all(set(t.scores.values()) == {0.0} and not t.valid for t in bad)
    assert len(store.scan(adapter_id="single_model")) == 2


def test_queries_without_golds_are_rejected():
    engine = Engine(preset("mini"), DocumentRepository([text_doc("t")]), MockBackend(default="x"))
    with pytest.raises(ValueError):
        collect_traces([Query("q", "a?")], engine, TraceStore())


def _hand_means(path):
    """Independent per-(kind, adapter) mean of the fixed quality blend, straight from the log file."""
    sums, counts = {}, {}
    for line in path.read_text().splitlines():
        row = json.loads(line)
        s = row["scores"]
        q = 0.35 * s["sem_hit"] + 0.35 * s["f1"] + 0.15 * s["hit"] + 0.15 * s["coverage"]
        key = (row["operator_kind"], row["adapter_id"])
        sums[key] = sums.get(key, 0.0) + q
        counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}, counts


def collect_fixture_log(tmp_path):
    cfg = load_config(COLLECT / "config.json")
    backend = make_backend(cfg.backend)
    items = load_fixtures(COLLECT / "dataset.json")
    engine = Engine(cfg.pipeline, DocumentRepository.from_dict(json.loads((COLLECT / "repository.json").read_text())), backend)
    path = tmp_path / "traces.jsonl"
    n = collect_traces([it.query for it in items], engine, TraceStore(path), judge=backend)
    return path, n


def test_stat_table_from_collected_fixture_matches_hand_means(tmp_path):
    path, n = collect_fixture_log(tmp_path)
    assert n == 30
    table = StatTable.from_traces(TraceStore(path).scan(scored_only=True))
    means, counts = _hand_means(path)
    assert len(means) == 3
    for (kind, adapter), m in means.items():
        key = next(k for k in table.means if k[0].value == kind and k[1] == adapter)
        assert abs(table.means[key] - m) <= 1e-12
        assert table.counts[key] == counts[(kind, adapter)] == 10
    ranking = sorted(means, key=means.get, reverse=True)
    assert [a for _, a in ranking] == ["semantic_aggregation", "programmatic_prompt", "single_model"]


def test_report_means_equal_one_pass_accumulator():
    report = MetricReport("demo")
    rows = [({"f1": 0.5, "hit": 1.0, "sem_hit": 0.0, "coverage": 0.25}, 0.1), ({"f1": 1.0, "hit": 1.0, "sem_hit": 1.0, "coverage": 1.0}, 0.3)]
    acc = {"f1": 0.0, "hit": 0.0, "sem_hit": 0.0, "coverage": 0.0, "elapsed": 0.0}
    for i, (s, t) in enumerate(rows):
        report.add(f"q{i}", "a", s, t)
        for k in s:
            acc[k] += s[k]
        acc["elapsed"] += t
    assert report.means() == pytest.approx({k: v / len(rows) for k, v in acc.items()})
    assert "75.00" in report.table() and "demo" in report.table()
    with pytest.raises(ValueError):
        report.add("bad", "a", {"f1": 2.0, "hit": 1.0, "sem_hit": 0.0, "coverage": 0.0}, 0.0)


def test_evaluate_pred_equals_gold():
    cfg = load_config(COLLECT / "config.json")
    backend = make_backend(cfg.backend)
    report = evaluate(load_fixtures(COLLECT / "dataset.json"), lambda repo: Engine(cfg.pipeline, repo, backend), backend)
    m = report.means()
    assert m["f1"] == m["hit"] == m["sem_hit"] == m["coverage"] == 1.0
    assert len(report.rows) == 10
