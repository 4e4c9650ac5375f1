"""Final answer synthesis over subquery results."""

from __future__ import annotations

import logging
from typing import Sequence

from .llm import Backend, BackendError, ask
from .model import Query, is_meaningful

log = logging.getLogger(__name__)

MAX_ANSWER_TOKENS = 64

AGGREGATOR_SYSTEM = """You are a final answer aggregator. Read the subqueries and their results,
then produce the best possible answer to the original question using ONLY the
provided evidence. Do NOT invent facts.

Instructions:
1. Analyze all results; drop duplicated or overlapping content.
2. If one result answers the question and another does not, use the one that does.
3. If a later result logically conflicts with an earlier established fact, prefer the
   answer that is coherent with the earlier intermediate facts.
4. If conflicts remain between equally coherent answers, prefer the later subquery.

STRICT brevity rules:
- HARD CAP: at most 10 words.
- If yes/no is possible, answer "Yes." or "No.".
- Reply with the final answer only."""


def truncate_tokens(text: str, limit: int = MAX_ANSWER_TOKENS) -> str:
    words = text.split()
    return text.strip() if len(words) <= limit else " ".join(words[:limit])


def _fallback(res: Sequence[tuple[str, str]]) -> str:
    return res[-1][1]


def agg_results(res: Sequence[tuple[str, str]], q: Query | str, backend: Backend) -> str:
    """Synthesize one concise answer from ordered (subquery text, answer) pairs.

    Backend failures or an empty reply fall back to the last subquery's answer.
    """
    if not res:
        raise ValueError("nothing to aggregate")
    question = q.text if isinstance(q, Query) else q
    lines = "\n".join(f"{i}. Subquery: {t}\n   Result: {a}" for i, (t, a) in enumerate(res, 1))
    try:
        reply = ask(backend, AGGREGATOR_SYSTEM, f"Original question: {question}\n\nSubquery results:\n{lines}")
    except BackendError as exc:
        log.warning("aggregation failed, using the last subquery answer: %s", exc)
        return _fallback(res)
    answer = truncate_tokens(reply.strip())
    if not is_meaningful(answer) and any(is_meaningful(a) for _, a in res):
        valid = [a for _, a in res if is_meaningful(a)]
        log.warning("aggregator returned no usable answer, using the last valid subquery answer")
        return valid[-1]
    return answer
