import json

import pytest

from conftest import FIG4_CITIES, image_doc, table_doc, text_doc
from metaquery.adapters import (
    DEFAULT_ADAPTERS,
    CapabilityError,
    ProgrammaticPromptAdapter,
    RemoteAdapter,
    SemanticAggregationAdapter,
    SingleModelAdapter,
    TableStructuredAdapter,
    build_registry,
    default_registry,
)
from metaquery.llm import ConfigError, MockBackend
from metaquery.model import KIND_ORDER, OperatorResult

TEXT, TABLE, IMAGE = KIND_ORDER


def test_fig4_third_subquery_single_model(fig4_repo, fig4_backend):
    doc = fig4_repo.get("txt-cp-ca")
    assert doc.title == "Capital punishment in California"
    res = SingleModelAdapter(fig4_backend).execute(TEXT, "When was the last time capital punishment took place in California?", [doc])
    assert res.answer == "2006" and res.valid
    assert res.adapter_id == "single_model"


def test_wrong_modality_rejected():
    with pytest.raises(ValueError):
        SingleModelAdapter(MockBackend(default="x")).execute(TEXT, "q", [image_doc("i")])


def test_refusal_reply_is_invalid():
    res = SingleModelAdapter(MockBackend(default="I cannot determine this.")).execute(TEXT, "q", [text_doc("t")])
    assert res.valid is False
    assert res.answer == "I cannot determine this."


def test_capability_checked_before_any_backend_call():
    mock = MockBackend(default="x")
    with pytest.raises(CapabilityError):
        TableStructuredAdapter(mock).execute(TEXT, "q", [text_doc("t")])
    assert mock.calls == []


def test_backend_error_becomes_invalid_result():
    res = SingleModelAdapter(MockBackend(default="!error:provider")).execute(TEXT, "q", [text_doc("t")])
    assert not res.valid and "ProviderError" in res.error


def test_semantic_aggregation_single_prompt_for_one_doc():
    mock = MockBackend(default="ok")
    SemanticAggregationAdapter(mock).execute(TEXT, "q", [text_doc("t")])
    assert len(mock.calls) == 1 and mock.count("partial batch") == 0


def test_semantic_aggregation_fold_counts():
    mock = MockBackend(default="ok")
    docs = [text_doc(f"t{i}") for i in range(5)]
    res = SemanticAggregationAdapter(mock, batch_size=2).execute(TEXT, "q", docs)
    assert res.valid
    assert mock.count("partial batch") == 3
    assert mock.count("combine partial findings") == 1
    assert len(mock.calls) == 4


def test_zero_docs_is_no_evidence():
    mock = MockBackend(default="ok")
    res = SemanticAggregationAdapter(mock).execute(TEXT, "q", [])
    assert res.answer == "no evidence" and not res.valid and mock.calls == []


def test_table_adapter_fig4_city_rows(fig4_repo, fig4_backend):
    doc = fig4_repo.get("tbl-sunbelt")
    q = "Does California have a major city located in the Sun Belt region?"
    res = TableStructuredAdapter(fig4_backend).execute(TABLE, q, [doc])
    assert res.answer == FIG4_CITIES and res.valid
    phases = json.loads(res.raw)["phases"][0]
    ca_rows = [i for i, row in enumerate(doc.rows) if row[1] == "California"]
    assert phases["rows"] == ca_rows
    answer_prompt = [c.request.prompt for c in fig4_backend.calls if "Answer extraction" in c.request.prompt][0]
    assert all(doc.rows[i][0] in answer_prompt for i in ca_rows)
    others = [row[0] for row in doc.rows if row[1] != "California"]
    assert others and not any(city in answer_prompt for city in others)


def test_table_adapter_single_cell_collapses_phases():
    mock = MockBackend(default="42")
    res = TableStructuredAdapter(mock).execute(TABLE, "q", [table_doc("t", ["n"], [["42"]])])
    assert res.answer == "42"
    assert len(mock.calls) == 1 and mock.count("Answer extraction") == 1


def test_table_adapter_ignores_unknown_columns():
    mock = MockBackend([("Schema grounding", '["salary"]'), ("Row filtering", "[0]")], default="alice")
    doc = table_doc("t", ["name", "age"], [["alice", "30"], ["bob", "40"]])
    res = TableStructuredAdapter(mock).execute(TABLE, "q", [doc])
    assert json.loads(res.raw)["phases"][0]["columns"] == ["name", "age"]
    mock2 = MockBackend([("Schema grounding", '["age", "salary"]'), ("Row filtering", "[1]")], default="40")
    res2 = TableStructuredAdapter(mock2).execute(TABLE, "q", [doc])
    assert json.loads(res2.raw)["phases"][0]["columns"] == ["age"]


def test_table_adapter_chunks_rows_and_reports_no_candidates():
    mock = MockBackend([("Schema grounding", '["a"]'), ("Row filtering", "[]")])
    doc = table_doc("t", ["a", "b"], [[str(i), "x"] for i in range(45)])
    res = TableStructuredAdapter(mock, chunk_size=20).execute(TABLE, "q", [doc])
    assert mock.count("Row filtering") == 3
    assert res.answer == "no evidence" and not res.valid


def test_single_model_one_call_for_three_docs():
    mock = MockBackend(default="x")
    SingleModelAdapter(mock).execute(TEXT, "q", [text_doc(f"t{i}") for i in range(3)])
    assert len(mock.calls) == 1


def test_programmatic_adapter_two_calls():
    mock = MockBackend([("step 1", '{"draft_answer": "x"}')], default="x")
    res = ProgrammaticPromptAdapter(mock).execute(TEXT, "q", [text_doc("t")])
    assert len(mock.calls) == 2 and res.answer == "x"


def test_images_attached_only_for_pixel_capable_backends():
    doc = image_doc("i", caption="a bear on a flag", path="flag.png")
    pixels = MockBackend(default="bear", supports_images=True)
    SingleModelAdapter(pixels).execute(IMAGE, "q", [doc])
    assert pixels.calls[0].request.images == ("flag.png",)
    text_only = MockBackend(default="bear")
    SingleModelAdapter(text_only).execute(IMAGE, "q", [doc])
    assert text_only.calls[0].request.images == ()
    assert "a bear on a flag" in text_only.calls[0].request.prompt


def test_every_adapter_returns_an_operator_result():
    mock = MockBackend(default="[0]")
    for adapter in default_registry(mock):
        kind = TABLE
        res = adapter.execute(kind, "q", [table_doc("t", ["a"], [["1"], ["2"]])])
        assert type(res) is OperatorResult


def test_registry_order_and_capabilities():
    reg = default_registry(MockBackend())
    assert reg.ids == list(DEFAULT_ADAPTERS)
    assert reg.capable(TEXT) == ["semantic_aggregation", "programmatic_prompt", "single_model"]
    assert reg.capable(TABLE) == list(DEFAULT_ADAPTERS)
    with pytest.raises(ConfigError):
        reg.register(SingleModelAdapter(MockBackend()))


def test_build_registry_from_config_entries():
    reg = build_registry([{"type": "semantic_aggregation", "id": "sa2", "batch_size": 2}, "single_model"], MockBackend())
    assert reg.ids == ["sa2", "single_model"]
    assert reg.get("sa2").batch_size == 2
    with pytest.raises(ConfigError):
        build_registry(["nonexistent"], MockBackend())
    with pytest.raises(ConfigError):
        build_registry([{"type": "single_model", "bogus": 1}], MockBackend())
    with pytest.raises(ConfigError):
        build_registry([], MockBackend())


def test_remote_adapter_unreachable_endpoint_is_an_error_result():
    adapter = RemoteAdapter(MockBackend(), "r", endpoint="http://127.0.0.1:9/run", supported=["text"], timeout=2.0)
    assert adapter.supports(TEXT) and not adapter.supports(TABLE)
    res = adapter.execute(TEXT, "q", [text_doc("t")])
    assert not res.valid and "TransportError" in res.error
