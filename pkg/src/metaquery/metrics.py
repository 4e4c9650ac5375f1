"""Answer-quality metrics: token F1, Hit, Coverage, and LLM-judged Semantic Hit."""

from __future__ import annotations

import logging
from collections import Counter
from typing import Sequence

from .llm import Backend, BackendError, ask
from .model import normalize

log = logging.getLogger(__name__)


def tokens(text: str) -> list[str]:
    return normalize(text).split()


def overlap(pred: str, gold: str) -> int:
    """Multiset intersection size of the two token bags."""
    return sum((Counter(tokens(pred)) & Counter(tokens(gold))).values())


def _f1_single(pred: str, gold: str) -> float:
    p, g = tokens(pred), tokens(gold)
    if not p or not g:
        return 0.0
    m = overlap(pred, gold)
    if m == 0:
        return 0.0
    precision, recall = m / len(p), m / len(g)
    return 2 * precision * recall / (precision + recall)


def _check(golds: Sequence[str]) -> None:
    if not golds:
        raise ValueError("at least one gold answer is required")


def token_f1(pred: str, golds: Sequence[str]) -> float:
    _check(golds)
    return max(_f1_single(pred, g) for g in golds)


def hit(pred: str, golds: Sequence[str]) -> int:
    _check(golds)
    return int(any(overlap(pred, g) > 0 for g in golds))


def coverage(pred: str, golds: Sequence[str]) -> float:
    """Gold-token recall, maximised over golds."""
    _check(golds)
    best = 0.0
    for g in golds:
        n = len(tokens(g))
        if n:
            best = max(best, overlap(pred, g) / n)
    return best


JUDGE_SYSTEM = (
    "You are a semantic judge. Given a question, a predicted answer and the ground-truth "
    "answers, decide whether the prediction conveys the same factual content as at least one "
    "ground-truth answer, ignoring wording, formatting and surface-form differences. "
    "Reply with exactly one word: YES or NO."
)


def semantic_hit(pred: str, golds: Sequence[str], question: str, judge: Backend) -> int:
    """1 iff the judge replies YES. Judge errors and unparseable replies count as 0."""
    _check(golds)
    if not tokens(pred):
        return 0
    gold_list = "\n".join(f"- {g}" for g in golds)
    try:
        verdict = ask(judge, JUDGE_SYSTEM, f"Question: {question}\nPrediction: {pred}\nGround truth:\n{gold_list}")
    except BackendError as exc:
        log.warning("semantic judge failed, scoring 0: %s", exc)
        return 0
    words = normalize(verdict).split()
    if words[:1] == ["yes"]:
        return 1
    if words[:1] != ["no"]:
        log.warning("unparseable judge verdict %r, scoring 0", verdict[:80])
    return 0


def score_answer(pred: str, golds: Sequence[str], question: str, judge: Backend | None) -> dict[str, float]:
    return {
        "f1": token_f1(pred, golds),
        "hit": float(hit(pred, golds)),
        "coverage": coverage(pred, golds),
        "sem_hit": float(semantic_hit(pred, golds, question, judge)) if judge is not None else 0.0,
    }
