"""Complexity checking and bounded dynamic decomposition into a dependency graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .llm import Backend, ask, parse_json_reply
from .model import DependencyGraph, GraphError, OperatorKind, Query, SubQuery, normalize

log = logging.getLogger(__name__)


class Complexity(str, Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"


class DecompositionError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; raw model output: {raw[:300]!r}")
        self.raw = raw


@dataclass
class DecomposeConfig:
    check: bool = True
    max_out: int = 3
    max_it: int = 2

    def __post_init__(self):
        if self.max_out < 1:
            raise ValueError("max_out must be >= 1")
        if self.max_it < 0:
            raise ValueError("max_it must be >= 0")


CHECKER_SYSTEM = """You are a query complexity checker.
Decide whether the user question is SIMPLE or COMPLEX.

COMPLEX signals:
1. Multi-part question: several tasks, explicit "and/or/for each".
2. Multi-step reasoning: combines at least two distinct facts or sub-results.
3. Aggregation or grouped analysis (sum, average, count, trend, per-year, per-category).
4. Complex filtering (nontrivial constraints, conditions, temporal scopes).
5. Multi-entity comparison or ranking.
6. Pipeline-style tasks (first find X, then use X to find Y).

SIMPLE signals:
1. One clear intent.
2. Asks for one entity or one fact.
3. One operator over one data modality can answer it directly.
4. Decomposition would not make it clearer.

If you are unsure, answer COMPLEX.
Reply with exactly one word: SIMPLE or COMPLEX."""

DECOMPOSER_SYSTEM = """You are a database query decomposer.
Decompose a complex question into simpler subqueries that can each be answered
from exactly one kind of data source: table, image, or text.

Data sources:
1. Table: headers and rows.
2. Image: pictures that show the entity or relate to it.
3. Text: descriptions or other relevant passages about the entity.

Rules:
1. Emit at least one and at most {max_out} subqueries.
2. Each subquery is a short, clear, self-contained QUESTION answerable from one modality.
3. Order subqueries basic-to-advanced: grounding facts first, final inference last.
4. "deps" lists the 0-based indices of EARLIER subqueries whose answers this one needs.

Output strictly valid JSON, no prose:
[{{"q": "<subquery>", "modality": "text|table|image", "deps": [<int>, ...]}}]"""


def check_complexity(q: Query | str, backend: Backend) -> Complexity:
    text = q.text if isinstance(q, Query) else q
    verdict = ask(backend, CHECKER_SYSTEM, f"Question: {text}")
    tokens = normalize(verdict).split()
    # anything but an unambiguous SIMPLE counts as complex
    if tokens and tokens[0] == "simple" and "complex" not in tokens:
        return Complexity.SIMPLE
    return Complexity.COMPLEX


def parse_decomposition(raw: str) -> list[tuple[str, OperatorKind, list[int] | None]]:
    data = parse_json_reply(raw)
    if isinstance(data, dict):
        data = data.get("subqueries", data.get("sub_queries"))
    if not isinstance(data, list) or not data:
        raise ValueError("decomposition must be a non-empty JSON list")
    items = []
    for entry in data:
        if not isinstance(entry, dict):
            raise ValueError(f"subquery entry is not an object: {entry!r}")
        text = entry.get("q") or entry.get("question") or entry.get("subquery")
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"subquery entry has no question: {entry!r}")
        kind = OperatorKind.parse(entry.get("modality", ""))
        deps = entry.get("deps")
        if deps is not None:
            if not isinstance(deps, list) or not all(isinstance(d, int) and not isinstance(d, bool) for d in deps):
                raise ValueError(f"deps must be a list of integers: {deps!r}")
        items.append((text.strip(), kind, deps))
    return items


def parse_dependencies(
    subqueries: Sequence[tuple[str, OperatorKind | str | None, Sequence[int] | None]],
    **meta: Any,
) -> DependencyGraph:
    """Build the dependency graph from (text, modality hint, declared deps) triples.

    Undeclared deps (None) default to a chain edge from the previous subquery.
    Forward, self or out-of-range references raise `GraphError`.
    """
    nodes = []
    for i, (text, hint, deps) in enumerate(subqueries):
        if deps is None:
            deps = [i - 1] if i > 0 else []
        bad = [d for d in deps if not 0 <= d < i]
        if bad:
            raise GraphError(f"subquery {i} declares non-earlier dependencies {bad}")
        kind = OperatorKind.parse(hint) if hint is not None else None
        nodes.append(SubQuery(index=i, text=text, depends_on=frozenset(deps), modality=kind))
    return DependencyGraph.from_nodes(nodes, **meta)


def _user_prompt(text: str, feedback: str | None) -> str:
    prompt = f"Question: {text}"
    if feedback:
        prompt += f"\n\n{feedback}"
    return prompt


def decompose(q: Query | str, cfg: DecomposeConfig, backend: Backend) -> DependencyGraph:
    """Dynamic decomposition.

    With `cfg.check`, a query judged simple becomes a single node and the
    decomposition prompt is never sent. Otherwise the model is asked for at
    most `cfg.max_out` subqueries, re-prompted with feedback up to
    `cfg.max_it` times. If it never complies, the last decomposition is
    returned untruncated with `oversized=True`.
    """
    text = q.text if isinstance(q, Query) else q
    if cfg.check and check_complexity(text, backend) is Complexity.SIMPLE:
        return DependencyGraph.single(text)

    system = DECOMPOSER_SYSTEM.format(max_out=cfg.max_out)
    feedback = None
    last_items = None
    raw = ""
    for attempt in range(cfg.max_it + 1):
        raw = ask(backend, system, _user_prompt(text, feedback))
        retry_tag = f"Feedback (retry {attempt + 1} of {cfg.max_it})"
        try:
            items = parse_decomposition(raw)
            graph = parse_dependencies(items, retries=attempt)
        except (ValueError, GraphError) as exc:
            log.debug("unusable decomposition on attempt %d: %s", attempt, exc)
            feedback = (
                f"{retry_tag}: your previous output could not be parsed ({exc}). "
                f"Return only the JSON list, with at most {cfg.max_out} subqueries."
            )
            continue
        last_items = items
        if len(items) <= cfg.max_out:
            return graph
        feedback = (
            f"{retry_tag}: your previous decomposition had {len(items)} subqueries. "
            f"The subquery number is limited: produce AT MOST {cfg.max_out} subqueries, "
            "merging overlapping or overly detailed steps."
        )

    if last_items is None:
        raise DecompositionError(f"no parseable decomposition after {cfg.max_it} retries", raw)
    log.warning("decomposition still has %d > %d subqueries after %d retries", len(last_items), cfg.max_out, cfg.max_it)
    return parse_dependencies(last_items, retries=cfg.max_it, oversized=True)
