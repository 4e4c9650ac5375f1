"""Backend adapters behind one `execute(kind, subquery, docs)` interface, plus the registry."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

from .llm import Backend, BackendError, ConfigError, ProviderError, TransportError, ask, parse_json_reply
from .model import KIND_ORDER, Document, OperatorKind, OperatorResult, is_meaningful

log = logging.getLogger(__name__)

NO_EVIDENCE = "no evidence"

ANSWER_RULES = (
    "Use ONLY the evidence provided. Reply with a short factual answer (a phrase, a list, "
    "a number or yes/no), no explanation. If the evidence does not contain the answer, reply: unknown"
)


class CapabilityError(ValueError):
    """Operator kind not supported by the adapter."""


@dataclass(frozen=True)
class AdapterCapability:
    adapter_id: str
    supported: frozenset[OperatorKind]

    def __post_init__(self):
        if not self.supported:
            raise ValueError(f"adapter {self.adapter_id!r} must support at least one operator kind")


def render_document(doc: Document, rows: Sequence[int] | None = None, columns: Sequence[str] | None = None) -> str:
    if doc.modality == "text":
        return f"[{doc.id}] {doc.title}\n{doc.payload}"
    if doc.modality == "image":
        return f"[{doc.id}] image '{doc.title}': {doc.caption}"
    headers = doc.headers
    cols = [headers.index(c) for c in columns] if columns else list(range(len(headers)))
    row_ids = rows if rows is not None else range(len(doc.rows))
    all_rows = doc.rows
    lines = [f"[{doc.id}] table '{doc.title}'", "columns: " + " | ".join(headers[c] for c in cols)]
    lines += [f"row {i}: " + " | ".join(str(all_rows[i][c]) for c in cols) for i in row_ids]
    return "\n".join(lines)


def render_evidence(docs: Sequence[Document]) -> str:
    return "\n\n".join(render_document(d) for d in docs)


class Adapter:
    """Base adapter: capability and modality checks, timing, error capture.

    Subclasses implement `_run` and return `(answer, raw)`. Backend errors
    become invalid results tagged with the error; `ConfigError` propagates.
    """

    adapter_id = "adapter"
    supported: frozenset[OperatorKind] = frozenset(KIND_ORDER)

    def __init__(self, backend: Backend, adapter_id: str | None = None):
        self.backend = backend
        if adapter_id:
            self.adapter_id = adapter_id

    @property
    def capability(self) -> AdapterCapability:
        return AdapterCapability(self.adapter_id, frozenset(self.supported))

    def supports(self, kind: OperatorKind | str) -> bool:
        return OperatorKind.parse(kind) in self.supported

    def execute(self, kind: OperatorKind | str, subquery_text: str, docs: Sequence[Document]) -> OperatorResult:
        kind = OperatorKind.parse(kind)
        if kind not in self.supported:
            raise CapabilityError(f"adapter {self.adapter_id!r} does not support {kind.value}")
        wrong = [d.id for d in docs if d.modality != kind.modality]
        if wrong:
            raise ValueError(f"{kind.value} got documents of another modality: {wrong}")
        start = time.perf_counter()
        if not docs:
            return OperatorResult(NO_EVIDENCE, False, self.adapter_id, elapsed=time.perf_counter() - start)
        try:
            answer, raw = self._run(kind, subquery_text, list(docs))
        except BackendError as exc:
            log.info("adapter %s failed: %s", self.adapter_id, exc)
            return OperatorResult(
                "", False, self.adapter_id, elapsed=time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}"
            )
        answer = answer.strip()
        return OperatorResult(answer, is_meaningful(answer), self.adapter_id, raw=raw, elapsed=time.perf_counter() - start)

    def _run(self, kind: OperatorKind, text: str, docs: list[Document]) -> tuple[str, str]:
        raise NotImplementedError

    def _images(self, docs: Sequence[Document]) -> list[str]:
        if not getattr(self.backend, "supports_images", False):
            return []
        return [d.payload["path"] for d in docs if d.modality == "image"]


class SemanticAggregationAdapter(Adapter):
    """Fold over documents: one partial finding per batch, then one combining prompt."""

    adapter_id = "semantic_aggregation"

    def __init__(self, backend: Backend, adapter_id: str | None = None, batch_size: int = 4):
        super().__init__(backend, adapter_id)
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.batch_size = batch_size

    SYSTEM = f"You perform semantic aggregation over a set of documents to answer a question. {ANSWER_RULES}"
    PARTIAL = (
        "You perform semantic aggregation over a set of documents. This is partial batch {i} of {n}. "
        "Extract every fact from these documents that helps answer the question, as a short note. "
        "If nothing is relevant, reply: no evidence"
    )
    COMBINE = f"You perform semantic aggregation: combine partial findings into one answer. {ANSWER_RULES}"

    def _run(self, kind, text, docs):
        b = self.batch_size
        if len(docs) <= b:
            reply = ask(self.backend, self.SYSTEM, f"Question: {text}\n\nDocuments:\n{render_evidence(docs)}", self._images(docs))
            return reply, reply
        batches = [docs[i : i + b] for i in range(0, len(docs), b)]
        partials = []
        for i, batch in enumerate(batches, 1):
            system = self.PARTIAL.format(i=i, n=len(batches))
            partials.append(ask(self.backend, system, f"Question: {text}\n\nDocuments:\n{render_evidence(batch)}", self._images(batch)))
        notes = "\n".join(f"- partial {i}: {p.strip()}" for i, p in enumerate(partials, 1))
        reply = ask(self.backend, self.COMBINE, f"Question: {text}\n\nPartial findings:\n{notes}")
        return reply, json.dumps({"partials": partials, "combined": reply})


class ProgrammaticPromptAdapter(Adapter):
    """Two-step program: constrained reasoning fields, then answer extraction."""

    adapter_id = "programmatic_prompt"

    REASON = (
        "LM program step 1 (reasoning). Read the evidence and fill these fields as JSON: "
        '{"relevant_evidence": "<quoted facts>", "reasoning": "<short chain>", "draft_answer": "<answer>"}'
    )
    EXTRACT = f"LM program step 2 (answer extraction). Given the reasoning record, output the final answer. {ANSWER_RULES}"

    def _run(self, kind, text, docs):
        record = ask(self.backend, self.REASON, f"Question: {text}\n\nEvidence:\n{render_evidence(docs)}", self._images(docs))
        try:
            fields = parse_json_reply(record)
            record_text = json.dumps(fields, ensure_ascii=False) if isinstance(fields, dict) else record
        except ValueError:
            record_text = record
        reply = ask(self.backend, self.EXTRACT, f"Question: {text}\n\nReasoning record:\n{record_text}")
        return reply, json.dumps({"record": record, "answer": reply})


class SingleModelAdapter(Adapter):
    """All evidence of the modality in one prompt; pixels attached when the backend takes them."""

    adapter_id = "single_model"
    SYSTEM = f"You are a multimodal question answering model. {ANSWER_RULES}"

    def _run(self, kind, text, docs):
        reply = ask(self.backend, self.SYSTEM, f"Question: {text}\n\nEvidence:\n{render_evidence(docs)}", self._images(docs))
        return reply, reply


class TableStructuredAdapter(Adapter):
    """Schema grounding, chunked row filtering, then answer extraction over candidate records."""

    adapter_id = "table_structured"
    supported = frozenset({OperatorKind.TABLE})

    GROUND = (
        "Schema grounding: choose the table columns needed to answer the question. "
        'Reply with a JSON list of column names, e.g. ["col a", "col b"].'
    )
    FILTER = (
        "Row filtering: given table rows, return the row numbers that may contain the answer "
        "as a JSON list of integers, e.g. [0, 3]. Return [] if none."
    )
    ANSWER = f"Answer extraction from candidate table records. {ANSWER_RULES}"

    def __init__(self, backend: Backend, adapter_id: str | None = None, chunk_size: int = 20):
        super().__init__(backend, adapter_id)
        if chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        self.chunk_size = chunk_size

    def ground(self, text: str, doc: Document) -> list[str]:
        headers = doc.headers
        if len(headers) <= 1:
            return headers
        reply = ask(self.backend, self.GROUND, f"Question: {text}\n\nTable '{doc.title}' columns: {json.dumps(headers)}")
        try:
            chosen = parse_json_reply(reply)
        except ValueError:
            chosen = []
        # unknown names are dropped; an empty selection falls back to the full schema
        cols = [h for h in headers if isinstance(chosen, list) and h in chosen]
        return cols or headers

    def filter_rows(self, text: str, doc: Document, columns: list[str]) -> list[int]:
        n = len(doc.rows)
        if n <= 1:
            return list(range(n))
        keep: list[int] = []
        for start in range(0, n, self.chunk_size):
            chunk = list(range(start, min(n, start + self.chunk_size)))
            reply = ask(self.backend, self.FILTER, f"Question: {text}\n\n{render_document(doc, chunk, columns)}")
            try:
                picked = parse_json_reply(reply)
            except ValueError:
                continue
            if isinstance(picked, list):
                keep += [i for i in picked if isinstance(i, int) and i in chunk and i not in keep]
        return sorted(keep)

    def _run(self, kind, text, docs):
        blocks = []
        trace = []
        for doc in docs:
            cols = self.ground(text, doc)
            rows = self.filter_rows(text, doc, cols)
            trace.append({"doc": doc.id, "columns": cols, "rows": rows})
            if rows:
                blocks.append(render_document(doc, rows, cols))
        if not blocks:
            return NO_EVIDENCE, json.dumps(trace)
        reply = ask(self.backend, self.ANSWER, f"Question: {text}\n\nCandidate records:\n" + "\n\n".join(blocks))
        return reply, json.dumps({"phases": trace, "answer": reply})


class RemoteAdapter(Adapter):
    """Generic HTTP adapter: POSTs the operator call, expects ``{"answer": str}``."""

    adapter_id = "remote"

    def __init__(self, backend: Backend, adapter_id: str | None = None, endpoint: str = "", supported=None, timeout: float = 120.0):
        super().__init__(backend, adapter_id)
        if not endpoint:
            raise ConfigError("remote adapter needs an endpoint")
        self.endpoint = endpoint
        self.timeout = timeout
        if supported is not None:
            self.supported = frozenset(OperatorKind.parse(k) for k in supported)

    def _run(self, kind, text, docs):
        import httpx

        body = {"operator_kind": kind.value, "subquery": text, "documents": [d.to_dict() for d in docs]}
        try:
            resp = httpx.post(self.endpoint, json=body, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from None
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}")
        try:
            answer = resp.json()["answer"]
        except (ValueError, KeyError, TypeError):
            raise ProviderError("remote adapter reply lacks 'answer'") from None
        return str(answer), resp.text


ADAPTER_TYPES: dict[str, type[Adapter]] = {
    "semantic_aggregation": SemanticAggregationAdapter,
    "programmatic_prompt": ProgrammaticPromptAdapter,
    "single_model": SingleModelAdapter,
    "table_structured": TableStructuredAdapter,
    "remote": RemoteAdapter,
}

DEFAULT_ADAPTERS = ("semantic_aggregation", "programmatic_prompt", "single_model", "table_structured")


class AdapterRegistry:
    """Adapters in registration order (which is also the tie-break order)."""

    def __init__(self, adapters: Sequence[Adapter] = ()):
        self._adapters: dict[str, Adapter] = {}
        for a in adapters:
            self.register(a)

    def register(self, adapter: Adapter) -> None:
        if adapter.adapter_id in self._adapters:
            raise ConfigError(f"duplicate adapter id {adapter.adapter_id!r}")
        adapter.capability  # validates non-empty support
        self._adapters[adapter.adapter_id] = adapter

    def __iter__(self) -> Iterator[Adapter]:
        return iter(self._adapters.values())

    def __len__(self) -> int:
        return len(self._adapters)

    def __contains__(self, adapter_id: str) -> bool:
        return adapter_id in self._adapters

    def get(self, adapter_id: str) -> Adapter:
        try:
            return self._adapters[adapter_id]
        except KeyError:
            raise ConfigError(f"unknown adapter {adapter_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return list(self._adapters)

    def capable(self, kind: OperatorKind | str) -> list[str]:
        kind = OperatorKind.parse(kind)
        return [a.adapter_id for a in self if kind in a.supported]

    def capabilities(self) -> list[AdapterCapability]:
        return [a.capability for a in self]


def build_registry(specs: Sequence[str | dict[str, Any]], backend: Backend) -> AdapterRegistry:
    """Build adapters from config entries: a type name or ``{"type": ..., "id": ..., **options}``."""
    reg = AdapterRegistry()
    for spec in specs:
        if isinstance(spec, str):
            spec = {"type": spec}
        opts = dict(spec)
        type_name = opts.pop("type", None) or opts.get("id")
        cls = ADAPTER_TYPES.get(type_name)
        if cls is None:
            raise ConfigError(f"unknown adapter type {type_name!r}")
        adapter_id = opts.pop("id", None)
        try:
            reg.register(cls(backend, adapter_id, **opts))
        except TypeError as exc:
            raise ConfigError(f"bad options for adapter {type_name!r}: {exc}") from None
    if not len(reg):
        raise ConfigError("at least one adapter is required")
    return reg


def default_registry(backend: Backend) -> AdapterRegistry:
    return build_registry(DEFAULT_ADAPTERS, backend)
