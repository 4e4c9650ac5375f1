"""Logical planning: rank candidate data operators for a subquery from document metadata."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .llm import Backend, ask, parse_json_reply
from .model import KIND_ORDER, DocumentRepository, OperatorKind, SubQuery

DEFAULT_K = 8


class PlanningError(ValueError):
    pass


@dataclass
class RankedOperator:
    kind: OperatorKind
    subquery_index: int
    confidence: float
    candidate_doc_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.kind = OperatorKind.parse(self.kind)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "subquery_index": self.subquery_index,
            "confidence": self.confidence,
            "candidate_doc_ids": list(self.candidate_doc_ids),
        }


def rank(ops: Iterable[RankedOperator]) -> list[RankedOperator]:
    """Descending confidence; ties broken by the fixed Text, Table, Image order."""
    return sorted(ops, key=lambda o: (-o.confidence, KIND_ORDER.index(o.kind)))


PLANNER_SYSTEM = """You are an operator planner for multimodal analytics.
Operator types: textAnalytics, tableAnalytics, imageAnalytics.
Score EVERY allowed operator type with a confidence between 0 and 1 for how
suitable it is to answer the question, and list the ids of up to {k} data sources
of that operator's modality whose title or caption looks relevant.

RANKING RUBRIC:
1. Direct mention or implication of a modality: a question that mentions a
   picture, flag, logo, or appearance favours imageAnalytics; one that mentions a
   table, list, or statistics favours tableAnalytics; one that asks for narrative
   facts favours textAnalytics.
2. Nature of the requested information: quantitative comparison favours
   tableAnalytics; historical events and descriptions favour textAnalytics;
   appearance, colours, and shapes favour imageAnalytics.
3. If several operator types could answer, give them close scores.

Output strictly valid JSON:
{{"operators": [{{"type": "<operator type>", "confidence": <0..1>, "docs": ["<id>", ...]}}]}}"""


def _metadata_block(repo: DocumentRepository, kinds: Sequence[OperatorKind]) -> str:
    lines = []
    for kind in kinds:
        for doc_id, title, caption in repo.metadata(kind):
            lines.append(f"[{kind.modality}] id={doc_id} | title={title} | caption={caption}")
    return "\n".join(lines) if lines else "(no data sources)"


def _resolve_docs(names, kind: OperatorKind, repo: DocumentRepository, k: int) -> list[str]:
    if not isinstance(names, list):
        return []
    pool = repo.by_modality(kind)
    by_id = {d.id: d.id for d in pool}
    by_title = {d.title.strip().lower(): d.id for d in pool}
    out: list[str] = []
    for name in names:
        if not isinstance(name, str):
            continue
        doc_id = by_id.get(name) or by_title.get(name.strip().lower())
        if doc_id and doc_id not in out:
            out.append(doc_id)
    return out[:k]


def _parse_plan(raw: str, sq_index: int, ops: Sequence[OperatorKind], repo: DocumentRepository, k: int) -> list[RankedOperator]:
    data = parse_json_reply(raw)
    if isinstance(data, dict):
        data = data.get("operators")
    if not isinstance(data, list):
        raise ValueError("expected an 'operators' list")
    found: dict[OperatorKind, RankedOperator] = {}
    for entry in data:
        if not isinstance(entry, dict):
            raise ValueError(f"operator entry is not an object: {entry!r}")
        kind = OperatorKind.parse(entry.get("type") or entry.get("kind") or entry.get("operator") or "")
        conf = entry.get("confidence")
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or math.isnan(conf):
            raise ValueError(f"bad confidence {conf!r}")
        if kind not in ops or kind in found:
            continue
        docs = _resolve_docs(entry.get("docs", entry.get("data_sources")), kind, repo, k)
        found[kind] = RankedOperator(kind, sq_index, min(1.0, max(0.0, float(conf))), docs)
    for kind in ops:
        found.setdefault(kind, RankedOperator(kind, sq_index, 0.0, []))
    return rank(found.values())


def select_op(
    subquery: SubQuery,
    ops: Sequence[OperatorKind | str],
    repo: DocumentRepository,
    backend: Backend,
    k: int = DEFAULT_K,
) -> list[RankedOperator]:
    """Rank the requested operator kinds for `subquery`, most confident first.

    The prompt carries only titles and captions. A malformed reply is
    re-prompted once before raising `PlanningError`. With a single requested
    kind the ranking is forced (confidence 1.0) and the model only picks documents.
    """
    kinds = [OperatorKind.parse(o) for o in ops]
    if not kinds:
        raise PlanningError("ops must be non-empty")
    if len(set(kinds)) != len(kinds):
        raise PlanningError(f"duplicate operator kinds: {kinds}")
    kinds = [k_ for k_ in KIND_ORDER if k_ in kinds]

    system = PLANNER_SYSTEM.format(k=k)
    user = (
        f"Question: {subquery.effective_text}\n\n"
        f"Allowed operator types: {', '.join(kd.value for kd in kinds)}\n\n"
        f"Data sources (metadata only):\n{_metadata_block(repo, kinds)}"
    )
    raw = ask(backend, system, user)
    try:
        ranked = _parse_plan(raw, subquery.index, kinds, repo, k)
    except ValueError as exc:
        raw = ask(backend, system, f"{user}\n\nYour previous reply was invalid ({exc}). Reply with the JSON object only.")
        try:
            ranked = _parse_plan(raw, subquery.index, kinds, repo, k)
        except ValueError as exc2:
            raise PlanningError(f"malformed planner output after re-prompt: {exc2}") from None
    if len(ranked) == 1:
        ranked[0].confidence = 1.0
    return ranked


def fixed_plan(subquery: SubQuery, ops: Sequence[OperatorKind | str]) -> list[RankedOperator]:
    """Operators chosen by the caller, in the given order, without planning."""
    n = len(ops)
    return [RankedOperator(OperatorKind.parse(o), subquery.index, 1.0 - i / (n + 1)) for i, o in enumerate(ops)]
