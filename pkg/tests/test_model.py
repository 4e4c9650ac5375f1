import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, image_doc, table_doc, text_doc
from metaquery.model import (
    DependencyGraph,
    Document,
    DocumentRepository,
    ExecutionTrace,
    GraphError,
    OperatorKind,
    OperatorResult,
    Query,
    RepositoryError,
    SubQuery,
    TraceStore,
    is_meaningful,
    normalize,
    repo_load,
    trace_append,
    trace_scan,
)


def test_operator_kind_has_exactly_three_members():
    assert {k.value for k in OperatorKind} == {"TextAnalytics", "TableAnalytics", "ImageAnalytics"}
    assert OperatorKind.parse("imageAnalytics") is OperatorKind.IMAGE
    assert OperatorKind.parse("table") is OperatorKind.TABLE
    with pytest.raises(ValueError):
        OperatorKind.parse("audio")


def test_query_rejects_blank_text():
    with pytest.raises(ValueError):
        Query("q", "   ")


def test_subquery_dependencies_must_point_backwards():
    SubQuery(2, "x", {0, 1})
    with pytest.raises(GraphError):
        SubQuery(1, "x", {1})
    with pytest.raises(GraphError):
        SubQuery(1, "x", {3})
    with pytest.raises(ValueError):
        SubQuery(0, "x", refined_text="  ")


def test_empty_repository(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text('{"documents": []}')
    assert len(repo_load(p)) == 0


def test_three_doc_fixture_counts():
    repo = repo_load(DATA / "three_docs.json")
    raw = json.loads((DATA / "three_docs.json").read_text())["documents"]
    assert len(repo) == len(raw) == 3
    for modality in ("text", "table", "image"):
        expected = [d["id"] for d in raw if d["modality"] == modality]
        assert [d.id for d in repo.by_modality(modality)] == expected
        assert len(expected) == 1


def test_duplicate_id_rejected(tmp_path):
    p = tmp_path / "dup.json"
    doc = {"id": "a", "modality": "text", "title": "", "caption": "", "payload": "x"}
    p.write_text(json.dumps({"documents": [doc, doc]}))
    with pytest.raises(RepositoryError):
        repo_load(p)


@pytest.mark.parametrize(
    "modality, payload",
    [
        ("table", {"headers": ["a", "b"], "rows": [["1", "2"], ["3"]]}),
        ("table", {"headers": ["a"]}),
        ("image", "delta.png"),
        ("text", {"body": "x"}),
        ("video", "x"),
    ],
)
def test_bad_payloads_rejected(modality, payload):
    with pytest.raises(RepositoryError):
        Document("d", modality, "t", "c", payload)


def test_malformed_file_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(RepositoryError):
        repo_load(p)
    p.write_text('{"documents": [{"id": "x"}]}')
    with pytest.raises(RepositoryError):
        repo_load(p)


def test_metadata_never_contains_payload():
    repo = repo_load(DATA / "three_docs.json")
    for modality in ("text", "table", "image"):
        for triple in repo.metadata(modality):
            assert "Danube flows" not in " ".join(triple)
            assert "2850" not in " ".join(triple)


_cell = st.text(alphabet="abcxyz019 ", max_size=6)


@st.composite
def repositories(draw):
    docs = []
    n = draw(st.integers(0, 6))
    for i in range(n):
        kind = draw(st.sampled_from(["text", "table", "image"]))
        title, caption = draw(_cell), draw(_cell)
        if kind == "text":
            docs.append(text_doc(f"d{i}", title, draw(_cell), caption))
        elif kind == "table":
            width = draw(st.integers(1, 3))
            rows = draw(st.lists(st.lists(_cell, min_size=width, max_size=width), max_size=4))
            docs.append(table_doc(f"d{i}", [f"h{j}" for j in range(width)], rows, title, caption))
        else:
            docs.append(image_doc(f"d{i}", title, caption, f"img{i}.png"))
    return DocumentRepository(docs)


@settings(max_examples=50, deadline=None)
@given(repositories())
def test_repository_round_trip(tmp_path_factory, repo):
    path = tmp_path_factory.mktemp("repo") / "r.json"
    repo.dump(path)
    again = repo_load(path)
    assert again == repo
    assert {d.id for d in again} == {d.id for d in repo}


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 7), st.data())
def test_cyclic_edge_sets_rejected(n, data):
    # a random back edge added to a forward chain always closes a cycle
    nodes = [SubQuery(i, f"s{i}") for i in range(n)]
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, a))
    edges = {(i, i + 1) for i in range(n - 1)} | {(a, b)}
    with pytest.raises(GraphError):
        DependencyGraph(nodes, frozenset(edges))


def test_graph_edges_must_match_depends_on():
    nodes = [SubQuery(0, "a"), SubQuery(1, "b", {0})]
    DependencyGraph(nodes, frozenset({(0, 1)}))
    with pytest.raises(GraphError):
        DependencyGraph(nodes, frozenset())
    with pytest.raises(GraphError):
        DependencyGraph([SubQuery(0, "a"), SubQuery(0, "b")])


def test_operator_result_empty_answer_is_invalid():
    assert OperatorResult("  ?! ", True, "a").valid is False
    assert OperatorResult("2006", True, "a").valid is True


@pytest.mark.parametrize(
    "answer, ok",
    [("2006", True), ("", False), ("Unknown.", False), ("I cannot determine this.", False), ("N/A", False),
     ("no evidence", False), ("Known facts", True), ("nature", True)],
)
def test_validity_rule(answer, ok):
    assert is_meaningful(answer) is ok


@given(st.text())
def test_normalize_is_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)


def _trace(kind="TextAnalytics", adapter="a", f1=0.5, **kw):
    return ExecutionTrace("q", "sq", kind, adapter, "ans", {"f1": f1, "hit": 1.0, "coverage": 0.5, "sem_hit": 0.0}, 0.1, True, **kw)


def test_trace_append_then_scan(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")
    t = _trace()
    trace_append(store, t)
    assert trace_scan(store) == [t]


def test_trace_scan_filters_in_insertion_order():
    store = TraceStore(DATA / "mixed_traces.jsonl")
    raw = [json.loads(line) for line in (DATA / "mixed_traces.jsonl").read_text().splitlines()]
    expected = [r["answer"] for r in raw if r["operator_kind"] == "TableAnalytics"]
    got = store.scan(operator_kind=OperatorKind.TABLE)
    assert [t.answer for t in got] == expected
    assert all(t.operator_kind is OperatorKind.TABLE for t in got)
    both = store.scan(operator_kind="TableAnalytics", adapter_id="table_structured")
    assert [t.query_id for t in both] == ["q1", "q3"]


def test_trace_scores_out_of_range_rejected():
    with pytest.raises(ValueError):
        _trace(f1=1.2)


def test_unscored_traces_excluded_when_requested():
    store = TraceStore()
    store.append(_trace())
    store.append(ExecutionTrace("q", "sq", "TextAnalytics", "a", "x"))
    assert len(store.scan()) == 2
    assert len(store.scan(scored_only=True)) == 1


def test_trace_store_concurrent_appends(tmp_path):
    from concurrent.futures import ThreadPoolExecutor

    store = TraceStore(tmp_path / "t.jsonl")
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda i: store.append(_trace(adapter=f"a{i}")), range(64)))
    assert sorted(t.adapter_id for t in store.scan()) == sorted(f"a{i}" for i in range(64))
