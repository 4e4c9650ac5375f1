"""Shared domain types, the multimodal document repository and the trace store."""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import asdict, dataclass
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Any, Iterable, Iterator


class OperatorKind(str, Enum):
    TEXT = "TextAnalytics"
    TABLE = "TableAnalytics"
    IMAGE = "ImageAnalytics"

    @property
    def modality(self) -> str:
        return _KIND_TO_MODALITY[self]

    @classmethod
    def parse(cls, value: "str | OperatorKind") -> "OperatorKind":
        """Accept 'text', 'textAnalytics', 'TextAnalytics', ... ."""
        if isinstance(value, OperatorKind):
            return value
        key = str(value).strip().lower().replace("_", "").replace(" ", "")
        key = key.removesuffix("analytics")
        try:
            return _MODALITY_TO_KIND[key]
        except KeyError:
            raise ValueError(f"unknown operator kind: {value!r}") from None


# fixed kind order; used for stable tie-breaking everywhere
KIND_ORDER: tuple[OperatorKind, ...] = (OperatorKind.TEXT, OperatorKind.TABLE, OperatorKind.IMAGE)
_KIND_TO_MODALITY = {OperatorKind.TEXT: "text", OperatorKind.TABLE: "table", OperatorKind.IMAGE: "image"}
_MODALITY_TO_KIND = {v: k for k, v in _KIND_TO_MODALITY.items()}
MODALITIES = ("text", "table", "image")


class RepositoryError(ValueError):
    """Malformed repository file or violated repository invariant."""


class GraphError(ValueError):
    """Cyclic or otherwise malformed dependency graph."""


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answers: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("query text must be non-empty")
        if self.gold_answers is not None:
            object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


@dataclass
class SubQuery:
    index: int
    text: str
    depends_on: frozenset[int] = frozenset()
    modality: OperatorKind | None = None
    refined_text: str | None = None

    def __post_init__(self):
        self.depends_on = frozenset(self.depends_on)
        if self.index < 0:
            raise GraphError(f"negative subquery index {self.index}")
        bad = [d for d in self.depends_on if not 0 <= d < self.index]
        if bad:
            raise GraphError(f"subquery {self.index} depends on non-earlier subqueries {sorted(bad)}")
        if self.refined_text is not None and not self.refined_text.strip():
            raise ValueError("refined_text must be non-empty when set")

    @property
    def effective_text(self) -> str:
        return self.refined_text or self.text


@dataclass
class DependencyGraph:
    """Subqueries plus `(from, to)` edges, where `to` depends on `from`.

    Construction validates acyclicity and edge/`depends_on` consistency.
    `retries` and `oversized` carry decomposition metadata.
    """

    nodes: list[SubQuery]
    edges: frozenset[tuple[int, int]] = frozenset()
    retries: int = 0
    oversized: bool = False

    def __post_init__(self):
        self.edges = frozenset((int(a), int(b)) for a, b in self.edges)
        indices = [n.index for n in self.nodes]
        if len(set(indices)) != len(indices):
            raise GraphError(f"duplicate subquery indices: {indices}")
        known = set(indices)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise GraphError(f"edge ({a}, {b}) references an unknown node")
        implied = {(d, n.index) for n in self.nodes for d in n.depends_on}
        if implied != set(self.edges):
            raise GraphError("edges are inconsistent with SubQuery.depends_on")
        try:
            tuple(TopologicalSorter(self.predecessors()).static_order())
        except CycleError as exc:
            raise GraphError(f"dependency cycle: {exc.args[1]}") from None

    @classmethod
    def from_nodes(cls, nodes: list[SubQuery], **meta) -> "DependencyGraph":
        edges = {(d, n.index) for n in nodes for d in n.depends_on}
        return cls(nodes=list(nodes), edges=frozenset(edges), **meta)

    @classmethod
    def single(cls, text: str) -> "DependencyGraph":
        return cls.from_nodes([SubQuery(0, text)])

    def predecessors(self) -> dict[int, set[int]]:
        preds: dict[int, set[int]] = {n.index: set() for n in self.nodes}
        for a, b in self.edges:
            preds[b].add(a)
        return preds

    def node(self, index: int) -> SubQuery:
        for n in self.nodes:
            if n.index == index:
                return n
        raise KeyError(index)

    def __len__(self) -> int:
        return len(self.nodes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [
                {
                    "index": n.index,
                    "text": n.text,
                    "modality": n.modality.modality if n.modality else None,
                    "depends_on": sorted(n.depends_on),
                    "refined_text": n.refined_text,
                }
                for n in self.nodes
            ],
            "edges": sorted(self.edges),
            "retries": self.retries,
            "oversized": self.oversized,
        }


@dataclass(frozen=True)
class Document:
    id: str
    modality: str
    title: str
    caption: str
    payload: Any

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise RepositoryError(f"document {self.id!r}: unknown modality {self.modality!r}")
        p = self.payload
        if self.modality == "text":
            if not isinstance(p, str):
                raise RepositoryError(f"document {self.id!r}: text payload must be a string")
        elif self.modality == "table":
            if not isinstance(p, dict) or not isinstance(p.get("headers"), list) or not isinstance(p.get("rows"), list):
                raise RepositoryError(f"document {self.id!r}: table payload needs headers and rows")
            width = len(p["headers"])
            for i, row in enumerate(p["rows"]):
                if not isinstance(row, list) or len(row) != width:
                    raise RepositoryError(f"document {self.id!r}: row {i} has wrong number of cells")
        else:
            if not isinstance(p, dict) or not isinstance(p.get("path"), str):
                raise RepositoryError(f"document {self.id!r}: image payload needs a path")

    @property
    def kind(self) -> OperatorKind:
        return OperatorKind.parse(self.modality)

    @property
    def headers(self) -> list[str]:
        return list(self.payload["headers"])

    @property
    def rows(self) -> list[list[str]]:
        return [list(r) for r in self.payload["rows"]]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class DocumentRepository:
    """Immutable collection of documents indexed by id and modality."""

    def __init__(self, documents: Iterable[Document] = ()):
        self._by_id: dict[str, Document] = {}
        for doc in documents:
            if doc.id in self._by_id:
                raise RepositoryError(f"duplicate document id {doc.id!r}")
            self._by_id[doc.id] = doc
        self._by_modality = {m: tuple(d for d in self._by_id.values() if d.modality == m) for m in MODALITIES}

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._by_id.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def __eq__(self, other) -> bool:
        if not isinstance(other, DocumentRepository):
            return NotImplemented
        return self._by_id == other._by_id

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def by_modality(self, modality: "str | OperatorKind") -> tuple[Document, ...]:
        if isinstance(modality, OperatorKind):
            modality = modality.modality
        return self._by_modality[modality]

    def metadata(self, modality: "str | OperatorKind") -> list[tuple[str, str, str]]:
        """(id, title, caption) triples; never payloads."""
        return [(d.id, d.title, d.caption) for d in self.by_modality(modality)]

    def to_dict(self) -> dict[str, Any]:
        return {"documents": [d.to_dict() for d in self]}

    def dump(self, path: "str | os.PathLike") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False))

    @classmethod
    def from_dict(cls, data: Any) -> "DocumentRepository":
        if not isinstance(data, dict) or not isinstance(data.get("documents"), list):
            raise RepositoryError("repository must be an object with a 'documents' list")
        docs = []
        for i, raw in enumerate(data["documents"]):
            try:
                docs.append(
                    Document(
                        id=str(raw["id"]),
                        modality=raw["modality"],
                        title=raw.get("title", ""),
                        caption=raw.get("caption", ""),
                        payload=raw["payload"],
                    )
                )
            except (KeyError, TypeError) as exc:
                raise RepositoryError(f"document #{i} is malformed: {exc}") from None
        return cls(docs)


def repo_load(path: "str | os.PathLike") -> DocumentRepository:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RepositoryError(f"{path}: not valid JSON ({exc})") from None
    return DocumentRepository.from_dict(data)


# --- answers and validity ---------------------------------------------------

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def normalize(text: str) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace."""
    return " ".join(_NON_ALNUM.sub(" ", (text or "").lower()).split())


REFUSALS = ("unknown", "cannot determine", "can not determine", "no evidence", "n a")


def is_meaningful(answer: str) -> bool:
    """Rule-based validity: non-empty and free of refusal phrases."""
    norm = normalize(answer)
    if not norm:
        return False
    padded = f" {norm} "
    return not any(f" {phrase} " in padded for phrase in REFUSALS)


@dataclass
class OperatorResult:
    answer: str
    valid: bool
    adapter_id: str
    raw: str = ""
    elapsed: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if not normalize(self.answer):
            self.valid = False


# --- execution traces ---------------------------------------------------------

SCORE_NAMES = ("f1", "hit", "coverage", "sem_hit")


@dataclass
class ExecutionTrace:
    """One (subquery, operator, adapter) execution.

    `scores` is None for unscored runtime attempts; trace collection fills it.
    """

    query_id: str
    subquery_text: str
    operator_kind: OperatorKind
    adapter_id: str
    answer: str
    scores: dict[str, float] | None = None
    elapsed: float = 0.0
    valid: bool = True

    def __post_init__(self):
        self.operator_kind = OperatorKind.parse(self.operator_kind)
        if self.scores is not None:
            missing = set(SCORE_NAMES) - set(self.scores)
            if missing:
                raise ValueError(f"trace is missing scores {sorted(missing)}")
            for name in SCORE_NAMES:
                v = float(self.scores[name])
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"score {name}={v} outside [0, 1]")
            self.scores = {name: float(self.scores[name]) for name in SCORE_NAMES}

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["operator_kind"] = self.operator_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecutionTrace":
        return cls(**d)


class TraceStore:
    """Append-only JSON-lines trace log; in memory when `path` is None."""

    def __init__(self, path: "str | os.PathLike | None" = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._memory: list[ExecutionTrace] = []

    def append(self, trace: ExecutionTrace) -> None:
        with self._lock:
            if self.path is None:
                self._memory.append(trace)
                return
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def scan(
        self,
        operator_kind: "OperatorKind | str | None" = None,
        adapter_id: str | None = None,
        scored_only: bool = False,
    ) -> list[ExecutionTrace]:
        kind = OperatorKind.parse(operator_kind) if operator_kind is not None else None
        with self._lock:
            if self.path is None:
                traces = list(self._memory)
            elif not self.path.exists():
                traces = []
            else:
                with self.path.open(encoding="utf-8") as fh:
                    traces = [ExecutionTrace.from_dict(json.loads(line)) for line in fh if line.strip()]
        return [
            t
            for t in traces
            if (kind is None or t.operator_kind == kind)
            and (adapter_id is None or t.adapter_id == adapter_id)
            and (not scored_only or t.scores is not None)
        ]


def trace_append(store: TraceStore, trace: ExecutionTrace) -> None:
    store.append(trace)


def trace_scan(store: TraceStore, **filters) -> list[ExecutionTrace]:
    return store.scan(**filters)
