"""Physical planning: statistics router, learned encoder+MLP router, and its offline trainer."""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .adapters import AdapterRegistry
from .model import KIND_ORDER, SCORE_NAMES, ExecutionTrace, OperatorKind

log = logging.getLogger(__name__)


class RoutingError(ValueError):
    pass


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class QualityBlend:
    sem_hit: float = 0.35
    f1: float = 0.35
    hit: float = 0.15
    coverage: float = 0.15

    def __post_init__(self):
        weights = asdict(self).values()
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"blend weights must be non-negative and sum to 1: {asdict(self)}")


def quality_score(scores: dict[str, float], blend: QualityBlend = QualityBlend()) -> float:
    for name in SCORE_NAMES:
        if not 0.0 <= scores[name] <= 1.0:
            raise ValueError(f"{name}={scores[name]} outside [0, 1]")
    q = blend.sem_hit * scores["sem_hit"] + blend.f1 * scores["f1"] + blend.hit * scores["hit"] + blend.coverage * scores["coverage"]
    return min(1.0, max(0.0, q))


@dataclass
class RouterTrainConfig:
    alpha: float = 0.1
    beta: float = 0.9
    gamma: float = 0.2
    w_min: float = 0.1
    w_max: float = 1.5
    blend: QualityBlend = field(default_factory=QualityBlend)
    hidden: int = 64
    layers: int = 1
    lr: float = 0.5
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.w_min > self.w_max:
            raise ValueError("w_min must be <= w_max")
        if self.epochs < 0 or self.layers < 0 or self.hidden < 1:
            raise ValueError("epochs/layers must be >= 0 and hidden >= 1")
        if isinstance(self.blend, dict):
            self.blend = QualityBlend(**self.blend)


def sample_weight(s1: float, s2: float, cfg: RouterTrainConfig = RouterTrainConfig()) -> float:
    """Confidence-aware weight: best score plus best-vs-runner-up margin, clamped."""
    if not 1.0 >= s1 >= s2 >= 0.0:
        raise ValueError(f"need 1 >= S1 >= S2 >= 0, got S1={s1}, S2={s2}")
    raw = cfg.alpha + cfg.beta * s1 + cfg.gamma * (s1 - s2)
    return min(cfg.w_max, max(cfg.w_min, raw))


@dataclass
class RouterTrainingRecord:
    """Per-adapter quality scores for one (subquery, operator). Ties go to the earlier adapter."""

    subquery_text: str
    operator_kind: OperatorKind
    scores: dict[str, float]

    def __post_init__(self):
        self.operator_kind = OperatorKind.parse(self.operator_kind)
        if not self.scores:
            raise ValueError("record needs at least one adapter score")
        for k, v in self.scores.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"score for {k} = {v} outside [0, 1]")

    @property
    def best(self) -> str:
        return max(self.scores, key=lambda k: (self.scores[k], -list(self.scores).index(k)))

    @property
    def s1(self) -> float:
        return max(self.scores.values())

    @property
    def s2(self) -> float:
        # a lone adapter has no runner-up; use a zero margin
        ordered = sorted(self.scores.values(), reverse=True)
        return ordered[1] if len(ordered) > 1 else ordered[0]

    def weight(self, cfg: RouterTrainConfig) -> float:
        return sample_weight(self.s1, self.s2, cfg)


def records_from_traces(traces: Iterable[ExecutionTrace], blend: QualityBlend = QualityBlend()) -> list[RouterTrainingRecord]:
    """Group scored traces by (query, subquery, operator); repeated adapters are averaged."""
    groups: dict[tuple, dict[str, list[float]]] = {}
    for t in traces:
        if t.scores is None:
            continue
        key = (t.query_id, t.subquery_text, t.operator_kind)
        groups.setdefault(key, {}).setdefault(t.adapter_id, []).append(quality_score(t.scores, blend))
    return [
        RouterTrainingRecord(text, kind, {a: sum(v) / len(v) for a, v in per.items()})
        for (_, text, kind), per in groups.items()
    ]


@dataclass
class RouteDecision:
    operator_kind: OperatorKind
    subquery_text: str
    adapter_id: str
    score: float

    def to_dict(self) -> dict:
        return {"operator_kind": self.operator_kind.value, "subquery_text": self.subquery_text, "adapter_id": self.adapter_id, "score": self.score}


def _capable(kind: OperatorKind, registry: AdapterRegistry) -> list[str]:
    ids = registry.capable(kind)
    if not ids:
        raise RoutingError(f"no registered adapter supports {kind.value}")
    return ids


# --- statistics router ----------------------------------------------------------


@dataclass
class StatTable:
    """Mean quality per (operator kind, adapter) with sample counts."""

    means: dict[tuple[OperatorKind, str], float] = field(default_factory=dict)
    counts: dict[tuple[OperatorKind, str], int] = field(default_factory=dict)

    @classmethod
    def from_traces(cls, traces: Iterable[ExecutionTrace], blend: QualityBlend = QualityBlend()) -> "StatTable":
        sums: dict[tuple[OperatorKind, str], float] = defaultdict(float)
        counts: dict[tuple[OperatorKind, str], int] = defaultdict(int)
        for t in traces:
            if t.scores is None:
                continue
            key = (t.operator_kind, t.adapter_id)
            sums[key] += quality_score(t.scores, blend)
            counts[key] += 1
        return cls({k: sums[k] / counts[k] for k in sums}, dict(counts))

    def mean(self, kind: OperatorKind, adapter_id: str) -> float:
        return self.means.get((kind, adapter_id), 0.0)

    def to_dict(self) -> dict:
        rows = sorted(self.means, key=lambda k: (KIND_ORDER.index(k[0]), k[1]))
        return {
            "entries": [
                {"operator_kind": k.value, "adapter_id": a, "mean": self.means[(k, a)], "count": self.counts.get((k, a), 0)}
                for k, a in rows
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StatTable":
        means, counts = {}, {}
        for e in data.get("entries", []):
            key = (OperatorKind.parse(e["operator_kind"]), e["adapter_id"])
            mean, count = float(e["mean"]), int(e.get("count", 0))
            if not 0.0 <= mean <= 1.0 or count < 0:
                raise ValueError(f"invalid stat entry {e}")
            means[key], counts[key] = mean, count
        return cls(means, counts)

    def save(self, path: "str | os.PathLike") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: "str | os.PathLike") -> "StatTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


class StatRouter:
    """Subquery-agnostic: best historical mean per operator kind, ties by registration order."""

    def __init__(self, table: StatTable | None = None):
        self.table = table or StatTable()

    def route(self, kind: OperatorKind | str, subquery_text: str, registry: AdapterRegistry) -> RouteDecision:
        kind = OperatorKind.parse(kind)
        ids = _capable(kind, registry)
        best = max(ids, key=lambda a: (self.table.mean(kind, a), -ids.index(a)))
        return RouteDecision(kind, subquery_text, best, self.table.mean(kind, best))


class FixedRouter:
    """Send every operator to one adapter (router disabled)."""

    def __init__(self, adapter_id: str):
        self.adapter_id = adapter_id

    def route(self, kind: OperatorKind | str, subquery_text: str, registry: AdapterRegistry) -> RouteDecision:
        kind = OperatorKind.parse(kind)
        if self.adapter_id not in registry.capable(kind):
            raise RoutingError(f"adapter {self.adapter_id!r} cannot execute {kind.value}")
        return RouteDecision(kind, subquery_text, self.adapter_id, 1.0)


# --- learned router -------------------------------------------------------------


def featurize(text: str, kind: OperatorKind | str, embedder: Embedder) -> np.ndarray:
    """Subquery embedding followed by a one-hot operator indicator."""
    kind = OperatorKind.parse(kind)
    onehot = np.zeros(len(KIND_ORDER))
    onehot[KIND_ORDER.index(kind)] = 1.0
    return np.concatenate([np.asarray(embedder.embed(text), dtype=float), onehot])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


Params = list[tuple[np.ndarray, np.ndarray]]


def init_params(sizes: Sequence[int], seed: int) -> Params:
    rng = np.random.default_rng(seed)
    return [(rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, n)), np.zeros(n)) for m, n in zip(sizes[:-1], sizes[1:])]


def forward(params: Params, X: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns (activations per layer input, class probabilities); hidden layers use tanh."""
    acts = [X]
    h = X
    for W, b in params[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = params[-1]
    return acts, softmax(h @ W + b)


def weighted_ce(params: Params, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    _, P = forward(params, X)
    nll = -np.log(P[np.arange(len(y)), y])
    return float(np.sum(w * nll) / np.sum(w))


def weighted_ce_grad(params: Params, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, Params]:
    acts, P = forward(params, X)
    n = len(y)
    total = np.sum(w)
    loss = float(np.sum(w * -np.log(P[np.arange(n), y])) / total)
    delta = P.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= (w / total)[:, None]
    grads: Params = []
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        a = acts[layer]
        grads.append((a.T @ delta, delta.sum(axis=0)))
        if layer:
            delta = (delta @ W.T) * (1.0 - a**2)
    return loss, grads[::-1]


@dataclass
class MlpRouterModel:
    embedder_id: str
    embed_dim: int
    labels: list[str]
    params: Params
    losses: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        out = self.params[-1][0].shape[1]
        if out != len(self.labels):
            raise ValueError(f"output dimension {out} != {len(self.labels)} labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate adapter labels")

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return forward(self.params, np.atleast_2d(X))[1]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "encoder": {"id": self.embedder_id, "dim": self.embed_dim},
            "operator_kinds": [k.value for k in KIND_ORDER],
            "activation": "tanh",
            "labels": list(self.labels),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpRouterModel":
        if data.get("format") != 1:
            raise ValueError(f"unsupported router model format {data.get('format')!r}")
        params = [(np.asarray(layer["W"], dtype=float), np.asarray(layer["b"], dtype=float)) for layer in data["layers"]]
        return cls(data["encoder"]["id"], int(data["encoder"]["dim"]), list(data["labels"]), params)

    def save(self, path: "str | os.PathLike") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: "str | os.PathLike") -> "MlpRouterModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def training_arrays(
    records: Sequence[RouterTrainingRecord], labels: Sequence[str], embedder: Embedder, cfg: RouterTrainConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    index = {a: i for i, a in enumerate(labels)}
    missing = {r.best for r in records} - set(index)
    if missing:
        raise ValueError(f"records name adapters outside the label list: {sorted(missing)}")
    X = np.stack([featurize(r.subquery_text, r.operator_kind, embedder) for r in records])
    y = np.array([index[r.best] for r in records])
    w = np.array([r.weight(cfg) for r in records])
    return X, y, w


def train_mlrouter(
    records: Sequence[RouterTrainingRecord],
    cfg: RouterTrainConfig,
    embedder: Embedder,
    labels: Sequence[str] | None = None,
) -> MlpRouterModel:
    """Full-batch gradient descent on the weighted cross-entropy; only the MLP is trained."""
    if not records:
        raise ValueError("no training records")
    if labels is None:
        labels = list(dict.fromkeys(a for r in records for a in r.scores))
    labels = list(labels)
    X, y, w = training_arrays(records, labels, embedder, cfg)
    unseen = [a for i, a in enumerate(labels) if not np.any(y == i)]
    if len(set(y.tolist())) < 2:
        log.warning("degenerate router training data: every record has the same best adapter")
    elif unseen:
        log.warning("adapters never best in training data: %s", unseen)

    embed_dim = X.shape[1] - len(KIND_ORDER)
    sizes = [X.shape[1]] + [cfg.hidden] * cfg.layers + [len(labels)]
    params = init_params(sizes, cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        loss, grads = weighted_ce_grad(params, X, y, w)
        losses.append(loss)
        params = [(W - cfg.lr * gW, b - cfg.lr * gb) for (W, b), (gW, gb) in zip(params, grads)]
    losses.append(weighted_ce(params, X, y, w))
    embedder_id = getattr(embedder, "embedder_id", type(embedder).__name__)
    return MlpRouterModel(embedder_id, embed_dim, labels, params, losses)


class MLRouter:
    """Subquery-dependent router: argmax of the MLP restricted to capable adapters."""

    def __init__(self, model: MlpRouterModel, embedder: Embedder):
        self.model = model
        self.embedder = embedder
        enc = getattr(embedder, "embedder_id", None)
        if enc is not None and enc != model.embedder_id:
            raise RoutingError(f"model was trained with encoder {model.embedder_id!r}, got {enc!r}")

    def check_registry(self, registry: AdapterRegistry) -> None:
        if set(self.model.labels) != set(registry.ids):
            raise RoutingError(
                f"router labels {self.model.labels} do not match registered adapters {registry.ids}; retrain the router"
            )

    def route(self, kind: OperatorKind | str, subquery_text: str, registry: AdapterRegistry) -> RouteDecision:
        kind = OperatorKind.parse(kind)
        ids = _capable(kind, registry)
        if len(ids) == 1:
            return RouteDecision(kind, subquery_text, ids[0], 1.0)
        self.check_registry(registry)
        probs = self.model.predict_proba(featurize(subquery_text, kind, self.embedder))[0]
        capable = set(ids)
        masked = np.array([p if a in capable else -np.inf for a, p in zip(self.model.labels, probs)])
        best = int(np.argmax(masked))
        return RouteDecision(kind, subquery_text, self.model.labels[best], float(probs[best]))


def route(op, registry: AdapterRegistry, strategy: str, state=None, embedder: Embedder | None = None, subquery_text: str = "") -> RouteDecision:
    """Route one operator with a named strategy: "S" (statistics) or "L" (learned)."""
    kind = op.kind if hasattr(op, "kind") else OperatorKind.parse(op)
    s = strategy.upper()
    if s in ("S", "STAT"):
        router = StatRouter(state)
    elif s in ("L", "ML"):
        if state is None or embedder is None:
            raise RoutingError("learned routing needs a trained model and an embedder")
        router = MLRouter(state, embedder)
    else:
        raise RoutingError(f"unknown routing strategy {strategy!r}")
    return router.route(kind, subquery_text, registry)
