"""Progressive operator execution, subquery refinement, and stage-parallel DAG execution."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .adapters import AdapterRegistry
from .llm import Backend, BackendError, ask
from .model import (
    KIND_ORDER,
    DependencyGraph,
    ExecutionTrace,
    GraphError,
    OperatorKind,
    OperatorResult,
    SubQuery,
    TraceStore,
    is_meaningful,
    normalize,
)
from .planner import RankedOperator, fixed_plan, select_op
from .router import RouteDecision, RoutingError

log = logging.getLogger(__name__)

UNRESOLVED = "[unresolved]"


def stage_split(graph: DependencyGraph) -> list[list[int]]:
    """Group nodes by longest-path depth; every dependency lands in an earlier stage."""
    preds = graph.predecessors()
    depth: dict[int, int] = {}
    visiting: set[int] = set()

    def level(i: int) -> int:
        if i in depth:
            return depth[i]
        if i in visiting:
            raise GraphError(f"dependency cycle through subquery {i}")
        visiting.add(i)
        depth[i] = 1 + max((level(p) for p in preds[i]), default=-1)
        visiting.discard(i)
        return depth[i]

    for i in preds:
        level(i)
    n_stages = 1 + max(depth.values(), default=-1)
    return [sorted(i for i, d in depth.items() if d == s) for s in range(n_stages)]


REFINE_SYSTEM = (
    "You are a query refiner. Rewrite the question so that references such as "
    "'this state', 'that person' or 'they' are replaced by the concrete entities or "
    "values given in the resolved answers. Keep the question otherwise unchanged. "
    "Reply with the rewritten question only."
)


def refine_subquery(sq: SubQuery, prior: dict[int, str], backend: Backend, mode: str = "llm") -> str:
    """Fill answers of `sq`'s dependencies into its text.

    No dependencies means no backend call. A backend failure keeps the
    unrefined text. `mode="substitute"` appends the resolved answers instead
    of asking the model.
    """
    if set(prior) != set(sq.depends_on):
        raise ValueError(f"prior answers {sorted(prior)} do not match dependencies {sorted(sq.depends_on)}")
    if not sq.depends_on:
        return sq.text
    context = "\n".join(f"- answer to step {j + 1}: {prior[j]}" for j in sorted(prior))
    if mode == "substitute":
        return f"{sq.text} (given: {'; '.join(prior[j] for j in sorted(prior))})"
    try:
        reply = ask(backend, REFINE_SYSTEM, f"Question: {sq.text}\n\nResolved answers:\n{context}").strip()
    except BackendError as exc:
        log.warning("refinement of subquery %d failed, keeping original text: %s", sq.index, exc)
        return sq.text
    return reply.strip().strip('"') or sq.text


VALIDITY_SYSTEM = (
    "You are a validity judge. Decide whether the answer is a meaningful, concrete answer to the "
    "question (not a refusal, not 'unknown', not empty). Reply with exactly one word: YES or NO."
)


@dataclass
class Attempt:
    operator: RankedOperator
    route: RouteDecision | None = None
    result: OperatorResult | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "operator": self.operator.to_dict(),
            "route": self.route.to_dict() if self.route else None,
            "answer": self.result.answer if self.result else None,
            "valid": self.result.valid if self.result else False,
            "elapsed": self.result.elapsed if self.result else 0.0,
            "error": self.error or (self.result.error if self.result else None),
        }


@dataclass
class SubQueryOutcome:
    subquery_index: int
    result: OperatorResult
    attempts: list[Attempt]
    text: str = ""
    started: float = 0.0
    finished: float = 0.0

    @property
    def attempted(self) -> int:
        return sum(a.result is not None for a in self.attempts)

    @property
    def answer(self) -> str:
        return self.result.answer

    def to_dict(self) -> dict:
        return {
            "index": self.subquery_index,
            "text": self.text,
            "answer": self.result.answer,
            "valid": self.result.valid,
            "adapter": self.result.adapter_id,
            "attempted": self.attempted,
            "attempts": [a.to_dict() for a in self.attempts],
            "elapsed": self.finished - self.started,
        }


@dataclass
class Executor:
    """Runs subqueries: refine, plan (or fixed operators), route and execute with early stopping."""

    registry: AdapterRegistry
    router: object  # anything with .route(kind, text, registry)
    repo: object  # DocumentRepository
    backend: Backend
    planner: bool = True
    ops: Sequence[OperatorKind] = KIND_ORDER
    refine: bool = True
    refine_mode: str = "llm"
    validity: str = "rule"
    parallelism: int | None = None
    top_k: int = 8
    trace_store: TraceStore | None = None
    query_id: str = ""
    on_attempt: Callable[[ExecutionTrace], None] | None = field(default=None, repr=False)

    def is_valid(self, text: str, result: OperatorResult) -> bool:
        if not result.valid or result.error:
            return False
        if self.validity == "llm":
            try:
                verdict = ask(self.backend, VALIDITY_SYSTEM, f"Question: {text}\nAnswer: {result.answer}")
            except BackendError:
                return result.valid
            return normalize(verdict).split()[:1] == ["yes"]
        return is_meaningful(result.answer)

    def documents_for(self, op: RankedOperator):
        if op.candidate_doc_ids:
            return [self.repo.get(d) for d in op.candidate_doc_ids]
        return list(self.repo.by_modality(op.kind))

    def exec_op(self, ranked: Sequence[RankedOperator], text: str) -> SubQueryOutcome:
        """Try operators in rank order; stop at the first valid result."""
        if not ranked:
            raise ValueError("no operators to execute")
        attempts: list[Attempt] = []
        chosen: OperatorResult | None = None
        for op in ranked:
            attempt = Attempt(op)
            attempts.append(attempt)
            try:
                attempt.route = self.router.route(op.kind, text, self.registry)
            except RoutingError as exc:
                attempt.error = str(exc)
                continue
            adapter = self.registry.get(attempt.route.adapter_id)
            result = adapter.execute(op.kind, text, self.documents_for(op))
            result.valid = self.is_valid(text, result)
            attempt.result = result
            chosen = result
            self._record(text, op.kind, result)
            if result.valid:
                break
        if chosen is None:
            raise RoutingError("; ".join(a.error or "" for a in attempts))
        index = ranked[0].subquery_index
        return SubQueryOutcome(index, chosen, attempts, text=text)

    def _record(self, text: str, kind: OperatorKind, result: OperatorResult) -> None:
        trace = ExecutionTrace(self.query_id, text, kind, result.adapter_id, result.answer, None, result.elapsed, result.valid)
        if self.trace_store is not None:
            self.trace_store.append(trace)
        if self.on_attempt is not None:
            self.on_attempt(trace)

    def plan(self, sq: SubQuery) -> list[RankedOperator]:
        if self.planner:
            return select_op(sq, self.ops, self.repo, self.backend, k=self.top_k)
        return fixed_plan(sq, self.ops)

    def run_subquery(self, sq: SubQuery, answers: dict[int, str]) -> SubQueryOutcome:
        started = time.perf_counter()
        prior = {j: answers.get(j, UNRESOLVED) for j in sq.depends_on}
        if self.refine and sq.depends_on:
            refined = refine_subquery(sq, prior, self.backend, self.refine_mode)
            if refined != sq.text:
                sq.refined_text = refined
        ranked = self.plan(sq)
        outcome = self.exec_op(ranked, sq.effective_text)
        outcome.subquery_index = sq.index
        outcome.started, outcome.finished = started, time.perf_counter()
        return outcome

    def exec_subq(self, graph: DependencyGraph, par: bool = True) -> dict[int, SubQueryOutcome]:
        """Execute stage by stage; within a stage in parallel when `par`."""
        outcomes: dict[int, SubQueryOutcome] = {}
        answers: dict[int, str] = {}
        workers = self.parallelism or getattr(self.backend, "parallelism", 4)
        for stage in stage_split(graph):
            nodes = [graph.node(i) for i in stage]
            if par and len(nodes) > 1 and workers > 1:
                with ThreadPoolExecutor(max_workers=min(workers, len(nodes))) as pool:
                    results = list(pool.map(lambda n: self.run_subquery(n, answers), nodes))
            else:
                results = [self.run_subquery(n, answers) for n in nodes]
            for out in results:
                outcomes[out.subquery_index] = out
                answers[out.subquery_index] = out.result.answer if out.result.valid else UNRESOLVED
        return outcomes
