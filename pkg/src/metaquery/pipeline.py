"""Pipeline configuration, presets, and the engine exposing the end-to-end and building-block APIs."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

from .adapters import DEFAULT_ADAPTERS, AdapterRegistry, build_registry
from .aggregator import agg_results
from .decomposer import DecomposeConfig, decompose, parse_dependencies
from .executor import UNRESOLVED, Executor, SubQueryOutcome
from .llm import Backend, ConfigError, HashingEmbedder, MockBackend, RemoteBackend
from .model import KIND_ORDER, DependencyGraph, DocumentRepository, OperatorKind, Query, SubQuery, TraceStore, repo_load
from .planner import RankedOperator, select_op
from .router import FixedRouter, MLRouter, MlpRouterModel, RouteDecision, RouterTrainConfig, StatRouter, StatTable

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    decomposer: bool = True
    checker: bool = True
    max_out: int = 3
    max_it: int = 2
    planner: bool = True
    ops: list[str] = field(default_factory=lambda: [k.modality for k in KIND_ORDER])
    top_k: int = 8
    router: str = "stat"  # stat | ml | fixed
    router_model: str | None = None
    router_stats: str | None = None
    router_embedder: str = "hash"  # hash | backend
    fixed_adapter: str | None = None
    adapters: list[Any] = field(default_factory=lambda: list(DEFAULT_ADAPTERS))
    par: bool = True
    parallelism: int | None = None
    refine: bool = True
    refine_mode: str = "llm"
    validity: str = "rule"
    aggregator: bool = True

    def __post_init__(self):
        if self.router not in ("stat", "ml", "fixed"):
            raise ConfigError(f"unknown router strategy {self.router!r}")
        if self.validity not in ("rule", "llm"):
            raise ConfigError(f"unknown validity mode {self.validity!r}")
        if self.refine_mode not in ("llm", "substitute"):
            raise ConfigError(f"unknown refine mode {self.refine_mode!r}")
        if self.router == "fixed" and not self.fixed_adapter:
            raise ConfigError("router 'fixed' needs fixed_adapter")
        try:
            self.ops = [OperatorKind.parse(o).modality for o in self.ops]
            DecomposeConfig(self.checker, self.max_out, self.max_it)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.ops:
            raise ConfigError("ops must be non-empty")

    @property
    def decompose_config(self) -> DecomposeConfig:
        return DecomposeConfig(check=self.checker, max_out=self.max_out, max_it=self.max_it)

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


PRESETS: dict[str, dict[str, Any]] = {
    # everything from decomposer to aggregator
    "full": {},
    # prepared subqueries or the whole query; no pre/post processing
    "partial": {"decomposer": False, "aggregator": False},
    # execution only: operator fixed by the caller, no planning
    "mini": {"decomposer": False, "planner": False, "aggregator": False, "ops": ["text"]},
}

ABLATIONS: dict[str, dict[str, Any]] = {
    "full": {},
    "no_checker": {"checker": False},
    "no_decomposer": {"decomposer": False},
    "no_aggregator": {"aggregator": False},
    "single_adapter": {"adapters": ["semantic_aggregation"]},
}


def preset(name: str, **overrides) -> PipelineConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown pipeline preset {name!r}; choose from {sorted(PRESETS)}")
    return PipelineConfig(**{**PRESETS[name], **overrides})


@dataclass
class RunResult:
    query: Query
    answer: str
    graph: DependencyGraph
    outcomes: dict[int, SubQueryOutcome]
    elapsed: float
    aggregated: bool

    @property
    def answers(self) -> dict[int, str]:
        return {i: o.result.answer for i, o in sorted(self.outcomes.items())}

    def to_dict(self) -> dict:
        return {
            "query": {"id": self.query.id, "text": self.query.text},
            "answer": self.answer,
            "aggregated": self.aggregated,
            "elapsed": self.elapsed,
            "graph": self.graph.to_dict(),
            "subqueries": [self.outcomes[i].to_dict() for i in sorted(self.outcomes)],
        }


class Engine:
    """Composable pipeline over one repository, one backend and an adapter registry."""

    def __init__(
        self,
        cfg: PipelineConfig,
        repo: DocumentRepository,
        backend: Backend,
        registry: AdapterRegistry | None = None,
        router=None,
        trace_store: TraceStore | None = None,
    ):
        self.cfg = cfg
        self.repo = repo
        self.backend = backend
        self.registry = registry or build_registry(cfg.adapters, backend)
        self.router = router or self._build_router()
        self.trace_store = trace_store

    def _build_router(self):
        cfg = self.cfg
        if len(self.registry) == 1:
            return FixedRouter(self.registry.ids[0])
        if cfg.router == "fixed":
            if cfg.fixed_adapter not in self.registry:
                raise ConfigError(f"fixed adapter {cfg.fixed_adapter!r} is not registered")
            return FixedRouter(cfg.fixed_adapter)
        if cfg.router == "stat":
            return StatRouter(StatTable.load(cfg.router_stats) if cfg.router_stats else StatTable())
        if not cfg.router_model:
            raise ConfigError("router 'ml' needs router_model")
        model = MlpRouterModel.load(cfg.router_model)
        router = MLRouter(model, self.embedder())
        router.check_registry(self.registry)
        return router

    def embedder(self):
        if self.cfg.router_embedder == "backend":
            return self.backend
        return HashingEmbedder()

    def executor(self, query_id: str = "") -> Executor:
        cfg = self.cfg
        return Executor(
            registry=self.registry,
            router=self.router,
            repo=self.repo,
            backend=self.backend,
            planner=cfg.planner,
            ops=[OperatorKind.parse(o) for o in cfg.ops],
            refine=cfg.refine,
            refine_mode=cfg.refine_mode,
            validity=cfg.validity,
            parallelism=cfg.parallelism,
            top_k=cfg.top_k,
            trace_store=self.trace_store,
            query_id=query_id,
        )

    # -- building-block APIs --

    def decompose(self, q: Query | str, check: bool | None = None, max_out: int | None = None) -> DependencyGraph:
        dc = self.cfg.decompose_config
        if check is not None:
            dc.check = check
        if max_out is not None:
            dc = DecomposeConfig(dc.check, max_out, dc.max_it)
        return decompose(q, dc, self.backend)

    def select_op(self, sq: SubQuery | str, ops: Sequence[OperatorKind | str] | None = None) -> list[RankedOperator]:
        if isinstance(sq, str):
            sq = SubQuery(0, sq)
        return select_op(sq, ops or self.cfg.ops, self.repo, self.backend, k=self.cfg.top_k)

    def route(self, ops: Sequence[RankedOperator], subquery_text: str = "") -> list[RouteDecision]:
        return [self.router.route(op.kind, subquery_text, self.registry) for op in ops]

    def exec_op(self, ops: Sequence[RankedOperator], subquery_text: str) -> SubQueryOutcome:
        return self.executor().exec_op(ops, subquery_text)

    def exec_subq(self, graph: DependencyGraph, par: bool | None = None, query_id: str = "") -> dict[int, SubQueryOutcome]:
        return self.executor(query_id).exec_subq(graph, self.cfg.par if par is None else par)

    def agg_results(self, res: Sequence[tuple[str, str]], q: Query | str) -> str:
        return agg_results(res, q, self.backend)

    # -- end to end --

    def query(self, q: Query | str, subqueries: Sequence[tuple[str, Any, Any]] | None = None) -> RunResult:
        """Run the configured pipeline. `subqueries` supplies a prepared decomposition."""
        if isinstance(q, str):
            q = Query(id="q0", text=q)
        start = time.perf_counter()
        if subqueries is not None:
            graph = parse_dependencies(subqueries)
        elif self.cfg.decomposer:
            graph = self.decompose(q)
        else:
            graph = DependencyGraph.single(q.text)
        outcomes = self.exec_subq(graph, query_id=q.id)
        res = [
            (graph.node(i).effective_text, o.result.answer if o.result.valid else UNRESOLVED)
            for i, o in sorted(outcomes.items())
        ]
        if self.cfg.aggregator:
            answer = self.agg_results(res, q)
        else:
            answer = outcomes[max(outcomes)].result.answer
        return RunResult(q, answer, graph, outcomes, time.perf_counter() - start, self.cfg.aggregator)


# --- configuration files ---------------------------------------------------------


@dataclass
class AppConfig:
    backend: dict[str, Any]
    repository: str | None
    pipeline: PipelineConfig
    train: RouterTrainConfig
    trace_log: str | None = None
    base_dir: Path = Path(".")


_PIPELINE_FIELDS = {f.name for f in fields(PipelineConfig)}


def _flatten_pipeline(section: dict[str, Any]) -> dict[str, Any]:
    """Accept nested sections (decomposer{...}, router{...}, ...) or flat keys."""
    flat: dict[str, Any] = {}
    for key, value in section.items():
        if key == "preset":
            continue
        if key == "decomposer" and isinstance(value, dict):
            flat["decomposer"] = value.get("enabled", True)
            for k in ("max_out", "max_it"):
                if k in value:
                    flat[k] = value[k]
        elif key == "planner" and isinstance(value, dict):
            flat["planner"] = value.get("enabled", True)
            for k in ("ops", "top_k"):
                if k in value:
                    flat[k] = value[k]
        elif key == "router" and isinstance(value, dict):
            mapping = {"strategy": "router", "model": "router_model", "stats": "router_stats", "embedder": "router_embedder", "adapter": "fixed_adapter"}
            flat.update({mapping[k]: v for k, v in value.items() if k in mapping})
        elif key == "executor" and isinstance(value, dict):
            flat.update({k: v for k, v in value.items() if k in _PIPELINE_FIELDS})
        elif key == "aggregator" and isinstance(value, dict):
            flat["aggregator"] = value.get("enabled", True)
        elif key in _PIPELINE_FIELDS:
            flat[key] = value
        else:
            raise ConfigError(f"unknown pipeline option {key!r}")
    return flat


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    path = Path(p)
    return str(path if path.is_absolute() else base / path)


def load_config(path: "str | os.PathLike", overrides: dict[str, Any] | None = None, preset_name: str | None = None) -> AppConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent
    section = dict(data.get("pipeline", {}))
    name = preset_name or section.get("preset", "full")
    if name not in PRESETS:
        raise ConfigError(f"unknown pipeline preset {name!r}")
    merged = {**PRESETS[name], **_flatten_pipeline(section)} if not preset_name else {**_flatten_pipeline(section), **PRESETS[name]}
    merged.update(overrides or {})
    for key in ("router_model", "router_stats"):
        merged[key] = _resolve(base, merged.get(key))
    try:
        pipeline = PipelineConfig(**merged)
        train = RouterTrainConfig(**data.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    backend = dict(data.get("backend", {"type": "mock"}))
    if "script" in backend:
        backend["script"] = _resolve(base, backend["script"])
    return AppConfig(
        backend=backend,
        repository=_resolve(base, data.get("repository")),
        pipeline=pipeline,
        train=train,
        trace_log=_resolve(base, data.get("trace_log")),
        base_dir=base,
    )


def make_backend(spec: dict[str, Any] | str) -> Backend:
    """`mock:script.json`, `remote`, or a config mapping with a `type` key."""
    if isinstance(spec, str):
        if spec.startswith("mock:"):
            spec = {"type": "mock", "script": spec[5:]}
        elif spec == "mock":
            spec = {"type": "mock"}
        elif spec == "remote":
            spec = {"type": "remote"}
        else:
            raise ConfigError(f"unknown backend {spec!r}")
    opts = dict(spec)
    kind = opts.pop("type", "mock")
    if kind == "mock":
        script = opts.pop("script", None)
        if script:
            if not Path(script).exists():
                raise ConfigError(f"mock script not found: {script}")
            return MockBackend.from_file(script, **opts)
        return MockBackend(**opts)
    if kind == "remote":
        return RemoteBackend.from_env(**opts)
    raise ConfigError(f"unknown backend type {kind!r}")


def load_repository(path: str | None) -> DocumentRepository:
    if not path:
        raise ConfigError("no repository configured")
    if not Path(path).exists():
        raise ConfigError(f"repository not found: {path}")
    return repo_load(path)
