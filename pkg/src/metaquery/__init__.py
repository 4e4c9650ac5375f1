"""metaquery: route decomposed multimodal questions across pluggable semantic query backends."""

from .adapters import AdapterRegistry, build_registry, default_registry
from .decomposer import DecomposeConfig, check_complexity, decompose, parse_dependencies
from .executor import Executor, refine_subquery, stage_split
from .llm import ChatRequest, ChatResponse, HashingEmbedder, MockBackend, RemoteBackend
from .model import (
    DependencyGraph,
    Document,
    DocumentRepository,
    ExecutionTrace,
    OperatorKind,
    Query,
    SubQuery,
    TraceStore,
    repo_load,
)
from .pipeline import Engine, PipelineConfig, preset
from .planner import RankedOperator, select_op
from .router import MLRouter, RouterTrainConfig, StatRouter, StatTable, quality_score, sample_weight, train_mlrouter

__all__ = [
    "AdapterRegistry", "build_registry", "default_registry",
    "DecomposeConfig", "check_complexity", "decompose", "parse_dependencies",
    "Executor", "refine_subquery", "stage_split",
    "ChatRequest", "ChatResponse", "HashingEmbedder", "MockBackend", "RemoteBackend",
    "DependencyGraph", "Document", "DocumentRepository", "ExecutionTrace", "OperatorKind",
    "Query", "SubQuery", "TraceStore", "repo_load",
    "Engine", "PipelineConfig", "preset",
    "RankedOperator", "select_op",
    "MLRouter", "RouterTrainConfig", "StatRouter", "StatTable", "quality_score", "sample_weight", "train_mlrouter",
]
