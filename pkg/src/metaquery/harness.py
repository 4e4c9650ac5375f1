"""Dataset fixtures, evaluation reports, and trace collection for router training."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .executor import UNRESOLVED, refine_subquery, stage_split
from .llm import Backend
from .metrics import score_answer
from .model import SCORE_NAMES, DependencyGraph, DocumentRepository, ExecutionTrace, Query, TraceStore, repo_load
from .pipeline import Engine

log = logging.getLogger(__name__)

REPORT_METRICS = ("f1", "hit", "sem_hit", "coverage")


@dataclass
class FixtureItem:
    query: Query
    repository: str


def load_fixtures(path: "str | os.PathLike") -> list[FixtureItem]:
    """Read ``[{"query": str, "gold_answers": [str], "repository": path, "id"?: str}]``."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: fixture file must hold a JSON list")
    items = []
    for i, e in enumerate(entries):
        repo = Path(e["repository"])
        if not repo.is_absolute():
            repo = path.parent / repo
        items.append(FixtureItem(Query(str(e.get("id", f"{path.stem}-{i}")), e["query"], tuple(e["gold_answers"])), str(repo)))
    return items


@dataclass
class MetricReport:
    name: str = "dataset"
    rows: list[dict[str, Any]] = field(default_factory=list)

    def add(self, query_id: str, answer: str, scores: dict[str, float], elapsed: float) -> None:
        for k in REPORT_METRICS:
            if not 0.0 <= scores[k] <= 1.0:
                raise ValueError(f"{k}={scores[k]} outside [0, 1]")
        self.rows.append({"id": query_id, "answer": answer, **{k: scores[k] for k in REPORT_METRICS}, "elapsed": elapsed})

    def means(self) -> dict[str, float]:
        if not self.rows:
            return {k: 0.0 for k in (*REPORT_METRICS, "elapsed")}
        return {k: sum(r[k] for r in self.rows) / len(self.rows) for k in (*REPORT_METRICS, "elapsed")}

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "n": len(self.rows), "means": self.means(), "queries": self.rows}

    def table(self) -> str:
        """Aligned plain-text table: scores as percentages, runtime in seconds."""
        header = ("Dataset", "N", "F1", "Hit", "SemHit", "Coverage", "Runtime(s)")
        m = self.means()
        row = (
            self.name,
            str(len(self.rows)),
            *(f"{100 * m[k]:.2f}" for k in REPORT_METRICS),
            f"{m['elapsed']:.3f}",
        )
        widths = [max(len(a), len(b)) for a, b in zip(header, row)]
        fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([fmt(header), fmt(["-" * w for w in widths]), fmt(row)])


def evaluate(
    items: Sequence[FixtureItem],
    make_engine: Callable[[DocumentRepository], Engine],
    judge: Backend | None,
    name: str = "dataset",
) -> MetricReport:
    report = MetricReport(name)
    engines: dict[str, Engine] = {}
    for item in items:
        if item.repository not in engines:
            engines[item.repository] = make_engine(repo_load(item.repository))
        run = engines[item.repository].query(item.query)
        scores = score_answer(run.answer, item.query.gold_answers, item.query.text, judge)
        report.add(item.query.id, run.answer, scores, run.elapsed)
    return report


def _zero_scores() -> dict[str, float]:
    return {k: 0.0 for k in SCORE_NAMES}


def collect_traces(
    queries: Sequence[Query],
    engine: Engine,
    store: TraceStore,
    judge: Backend | None = None,
) -> int:
    """Run every capable adapter on each subquery's top-ranked operator and log scored traces.

    Subqueries are scored against their query's gold answers. The answer
    passed on to dependent subqueries is the first valid one in registry order.
    Returns the number of trace lines written.
    """
    written = 0
    for q in queries:
        if not q.gold_answers:
            raise ValueError(f"query {q.id!r} has no gold answers")
        graph: DependencyGraph = engine.decompose(q) if engine.cfg.decomposer else DependencyGraph.single(q.text)
        ex = engine.executor(q.id)
        answers: dict[int, str] = {}
        for stage in stage_split(graph):
            for idx in stage:
                sq = graph.node(idx)
                prior = {j: answers.get(j, UNRESOLVED) for j in sq.depends_on}
                if engine.cfg.refine and sq.depends_on:
                    refined = refine_subquery(sq, prior, engine.backend, engine.cfg.refine_mode)
                    if refined != sq.text:
                        sq.refined_text = refined
                text = sq.effective_text
                top = ex.plan(sq)[0]
                docs = ex.documents_for(top)
                propagated = UNRESOLVED
                for adapter_id in engine.registry.capable(top.kind):
                    adapter = engine.registry.get(adapter_id)
                    try:
                        result = adapter.execute(top.kind, text, docs)
                        if result.error:
                            scores = _zero_scores()
                        else:
                            scores = score_answer(result.answer, q.gold_answers, q.text, judge)
                        answer, elapsed, valid = result.answer, result.elapsed, result.valid
                    except Exception as exc:  # noqa: BLE001 - any adapter failure is a zero-score trace
                        log.warning("adapter %s failed during collection: %s", adapter_id, exc)
                        scores, answer, elapsed, valid = _zero_scores(), "", 0.0, False
                    store.append(ExecutionTrace(q.id, text, top.kind, adapter_id, answer, scores, elapsed, valid))
                    written += 1
                    if valid and propagated == UNRESOLVED:
                        propagated = answer
                answers[idx] = propagated
    return written
