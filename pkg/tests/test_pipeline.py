import json

import pytest

from conftest import FIG4, FIG4_QUESTION, text_doc
from metaquery.llm import ConfigError, MockBackend
from metaquery.model import DocumentRepository, Query
from metaquery.pipeline import ABLATIONS, PRESETS, Engine, PipelineConfig, load_config, make_backend, preset


def test_presets():
    assert preset("full").decomposer and preset("full").aggregator
    partial = preset("partial")
    assert not partial.decomposer and not partial.aggregator and partial.planner
    mini = preset("mini")
    assert not (mini.decomposer or mini.planner or mini.aggregator) and mini.ops == ["text"]
    with pytest.raises(ConfigError):
        preset("huge")


def test_invalid_pipeline_options():
    with pytest.raises(ConfigError):
        PipelineConfig(router="random")
    with pytest.raises(ConfigError):
        PipelineConfig(router="fixed")
    with pytest.raises(ConfigError):
        PipelineConfig(ops=["audio"])
    with pytest.raises(ConfigError):
        PipelineConfig(max_out=0)


def test_full_pipeline_fig4(fig4_repo, fig4_backend):
    run = Engine(preset("full"), fig4_repo, fig4_backend).query(Query("fig4", FIG4_QUESTION))
    assert run.answer == "2006 in California."
    assert run.graph.edges == {(0, 1), (0, 2), (1, 2)}
    assert run.to_dict()["subqueries"][2]["answer"] == "2006"


def test_disabled_aggregator_returns_last_answer_without_prompting(fig4_repo, fig4_backend):
    run = Engine(preset("full", aggregator=False), fig4_repo, fig4_backend).query(FIG4_QUESTION)
    assert run.answer == "2006"
    assert fig4_backend.count("final answer aggregator") == 0


def test_prepared_subqueries_skip_the_decomposer(fig4_repo, fig4_backend):
    subqueries = [
        ("Which state has a flag that features a bear?", "image", []),
        ("Does this state have a major city located in the Sun Belt region?", "table", [0]),
    ]
    run = Engine(preset("partial"), fig4_repo, fig4_backend).query(FIG4_QUESTION, subqueries=subqueries)
    assert fig4_backend.count("database query decomposer") == 0
    assert run.answers[0] == "California" and run.answer.startswith("Anaheim")


def test_mini_pipeline_runs_one_operator():
    mock = MockBackend(default="forty two")
    engine = Engine(preset("mini", adapters=["single_model"]), DocumentRepository([text_doc("t")]), mock)
    run = engine.query("what is the answer?")
    assert run.answer == "forty two"
    assert len(mock.calls) == 1


def test_single_adapter_registry_uses_fixed_router():
    engine = Engine(preset("full", adapters=["semantic_aggregation"]), DocumentRepository([text_doc("t")]), MockBackend())
    assert type(engine.router).__name__ == "FixedRouter"


def test_every_ablation_is_expressible_as_config():
    for name, overrides in ABLATIONS.items():
        cfg = preset("full", **overrides)
        assert isinstance(cfg, PipelineConfig), name
    assert set(ABLATIONS) >= {"no_checker", "no_decomposer", "no_aggregator", "single_adapter"}
    assert set(PRESETS) == {"full", "partial", "mini"}


def test_load_config_nested_sections_and_relative_paths(tmp_path):
    (tmp_path / "s.json").write_text("[]")
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({
        "backend": {"type": "mock", "script": "s.json"},
        "repository": "repo.json",
        "pipeline": {
            "checker": False,
            "decomposer": {"enabled": True, "max_out": 4, "max_it": 1},
            "planner": {"enabled": True, "ops": ["table", "text"], "top_k": 3},
            "router": {"strategy": "stat", "stats": "stats.json"},
            "executor": {"par": False},
            "aggregator": {"enabled": False},
        },
        "train": {"epochs": 5, "blend": {"sem_hit": 0.25, "f1": 0.25, "hit": 0.25, "coverage": 0.25}},
    }))
    cfg = load_config(cfg_path)
    p = cfg.pipeline
    assert (p.checker, p.max_out, p.max_it, p.top_k, p.par, p.aggregator) == (False, 4, 1, 3, False, False)
    assert p.ops == ["table", "text"]
    assert p.router_stats == str(tmp_path / "stats.json")
    assert cfg.repository == str(tmp_path / "repo.json")
    assert cfg.backend["script"] == str(tmp_path / "s.json")
    assert cfg.train.epochs == 5 and cfg.train.blend.hit == 0.25
    assert load_config(cfg_path, {"par": True}).pipeline.par is True
    assert load_config(cfg_path, preset_name="mini").pipeline.planner is False


@pytest.mark.parametrize(
    "content",
    ["{broken", json.dumps({"pipeline": {"warp_drive": True}}), json.dumps({"pipeline": {"preset": "huge"}}),
     json.dumps({"train": {"w_min": 2, "w_max": 1}})],
)
def test_bad_config_files(tmp_path, content):
    p = tmp_path / "c.json"
    p.write_text(content)
    with pytest.raises(ConfigError):
        load_config(p)


def test_make_backend_specs(tmp_path):
    assert isinstance(make_backend("mock"), MockBackend)
    assert isinstance(make_backend(f"mock:{FIG4 / 'script.json'}"), MockBackend)
    with pytest.raises(ConfigError):
        make_backend("mock:/nonexistent.json")
    with pytest.raises(ConfigError):
        make_backend({"type": "carrier-pigeon"})


def test_ml_router_requires_model():
    with pytest.raises(ConfigError):
        Engine(preset("full", router="ml"), DocumentRepository([text_doc("t")]), MockBackend())
