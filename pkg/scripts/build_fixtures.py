"""Regenerate the scripted fixture corpora under fixtures/.

Each corpus is a repository, a mock script, a dataset and one or more configs.
The scripts are plain JSON so every run is replayable with the mock backend.

    python3 scripts/build_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1] / "fixtures"

CAPITALS = [
    ("France", "Paris"),
    ("Japan", "Tokyo"),
    ("Kenya", "Nairobi"),
    ("Peru", "Lima"),
    ("Egypt", "Cairo"),
    ("Canada", "Ottawa"),
    ("Norway", "Oslo"),
    ("Chile", "Santiago"),
    ("India", "New Delhi"),
    ("Ghana", "Accra"),
]

# system-prompt markers of the built-in adapters
SEMANTIC = "semantic aggregation"
PROGRAM_1 = "LM program step 1"
PROGRAM_2 = "LM program step 2"
SINGLE = "multimodal question answering model"


def rule(contains, reply):
    return {"contains": list(contains) if not isinstance(contains, str) else [contains], "reply": reply}


def dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def text_doc(doc_id, title, caption, body):
    return {"id": doc_id, "modality": "text", "title": title, "caption": caption, "payload": body}


def capitals_repository():
    half = len(CAPITALS) // 2
    bodies = [" ".join(f"The capital of {c} is {k}." for c, k in CAPITALS[s:e]) for s, e in ((0, half), (half, None))]
    return {
        "documents": [
            text_doc("capitals-a", "World capitals A", "Capitals of five countries.", bodies[0]),
            text_doc("capitals-b", "World capitals B", "Capitals of five more countries.", bodies[1]),
        ]
    }


def build_collect():
    """Ten single-subquery questions; three text-capable adapters of different quality."""
    out = ROOT / "collect"
    rules = []
    for country, capital in CAPITALS:
        rules.append(rule(["semantic judge", f"Prediction: {capital}\n"], "YES"))
    rules.append(rule("semantic judge", "NO"))
    for i, (country, capital) in enumerate(CAPITALS):
        q = f"capital of {country}?"
        rules.append(rule([SEMANTIC, q], capital))
        rules.append(rule([PROGRAM_1, q], json.dumps({"relevant_evidence": "", "reasoning": "", "draft_answer": capital})))
        rules.append(rule([PROGRAM_2, q], capital if i % 2 == 0 else "The capital is unclear"))
        rules.append(rule([SINGLE, q], "unknown" if i < 3 else f"{capital} city"))
    dump(out / "repository.json", capitals_repository())
    dump(out / "script.json", {"rules": rules})
    dump(
        out / "dataset.json",
        [
            {"id": f"cap-{i}", "query": f"What is the capital of {c}?", "gold_answers": [k], "repository": "repository.json"}
            for i, (c, k) in enumerate(CAPITALS)
        ],
    )
    dump(
        out / "config.json",
        {
            "backend": {"type": "mock", "script": "script.json"},
            "repository": "repository.json",
            "pipeline": {
                "preset": "partial",
                "planner": {"enabled": False, "ops": ["text"]},
                "router": {"strategy": "fixed", "adapter": "semantic_aggregation"},
                "adapters": ["semantic_aggregation", "programmatic_prompt", "single_model"],
            },
        },
    )


PROGRESSIVE_MISSES = (7,)


def build_progressive():
    """Ten questions planned text > table > image; text fails only for the listed items."""
    out = ROOT / "progressive"
    plan = {
        "operators": [
            {"type": "TextAnalytics", "confidence": 0.9, "docs": []},
            {"type": "TableAnalytics", "confidence": 0.5, "docs": []},
            {"type": "ImageAnalytics", "confidence": 0.2, "docs": []},
        ]
    }
    rules = [rule("semantic judge", "YES"), rule("operator planner", json.dumps(plan))]
    for i in PROGRESSIVE_MISSES:
        rules.append(rule([SEMANTIC, f"item {i}?", "table 'Inventory'"], str(100 + i)))
        rules.append(rule([SEMANTIC, f"item {i}?"], "unknown"))
    rules.append(rule(SEMANTIC, "in stock"))
    repo = {
        "documents": [
            text_doc("notes", "Inventory notes", "Free-text notes about stock levels.", "Most items are in stock."),
            {
                "id": "inventory",
                "modality": "table",
                "title": "Inventory",
                "caption": "Item counts.",
                "payload": {"headers": ["item", "count"], "rows": [[str(i), str(100 + i)] for i in range(10)]},
            },
            {"id": "shelf", "modality": "image", "title": "Shelf photo", "caption": "A photo of a shelf.", "payload": {"path": "shelf.png"}},
        ]
    }
    dump(out / "repository.json", repo)
    dump(out / "script.json", {"rules": rules})
    dump(
        out / "dataset.json",
        [
            {
                "id": f"item-{i}",
                "query": f"What is the stock status of item {i}?",
                "gold_answers": [str(100 + i) if i in PROGRESSIVE_MISSES else "in stock"],
                "repository": "repository.json",
            }
            for i in range(10)
        ],
    )
    dump(
        out / "config.json",
        {
            "backend": {"type": "mock", "script": "script.json"},
            "repository": "repository.json",
            "pipeline": {"preset": "partial", "adapters": ["semantic_aggregation", "single_model"]},
        },
    )


def build_ablation():
    """Two simple questions and one compositional one; configs for each ablation."""
    out = ROOT / "ablation"
    plan = {"operators": [{"type": "TextAnalytics", "confidence": 0.9, "docs": []}]}
    simple_1 = "What is the capital of France?"
    simple_2 = "Who wrote Hamlet?"
    complex_q = "What is the population of the capital of France?"
    decomp = lambda items: json.dumps([{"q": q, "modality": "text", "deps": d} for q, d in items])
    rules = [
        rule("semantic judge", "YES"),
        rule(["query complexity checker", f"Question: {simple_1}"], "SIMPLE"),
        rule(["query complexity checker", f"Question: {simple_2}"], "SIMPLE"),
        rule("query complexity checker", "COMPLEX"),
        # without the checker the model also splits the simple questions
        rule(["database query decomposer", f"Question: {simple_1}"], decomp([("Which country is asked about?", []), ("What is the capital of this country?", [0])])),
        rule(["database query decomposer", f"Question: {simple_2}"], decomp([("Which play is asked about?", []), ("Who wrote this play?", [0])])),
        rule(["database query decomposer", f"Question: {complex_q}"], decomp([(simple_1, []), ("What is the population of this city?", [0])])),
        rule(["query refiner", "capital of this country"], simple_1),
        rule(["query refiner", "wrote this play"], simple_2),
        rule(["query refiner", "population of this city"], "What is the population of Paris?"),
        rule("operator planner", json.dumps(plan)),
        rule(["final answer aggregator", f"Original question: {simple_1}"], "Paris"),
        rule(["final answer aggregator", f"Original question: {simple_2}"], "William Shakespeare"),
        rule(["final answer aggregator", f"Original question: {complex_q}"], "About 2.1 million"),
        rule("Question: Which country is asked about?", "France"),
        rule("Question: Which play is asked about?", "Hamlet"),
        rule(f"Question: {simple_1}", "Paris"),
        rule(f"Question: {simple_2}", "William Shakespeare"),
        rule("Question: What is the population of Paris?", "About 2.1 million"),
        rule("Question: What is the population of the capital of France?", "About 2.1 million"),
    ]
    repo = {
        "documents": [
            text_doc("geo", "Geography facts", "Capitals and populations.", "Paris is the capital of France. About 2.1 million people live in Paris."),
            text_doc("lit", "Literature facts", "Authors of famous plays.", "Hamlet was written by William Shakespeare."),
        ]
    }
    dump(out / "repository.json", repo)
    dump(out / "script.json", {"rules": rules})
    dump(
        out / "dataset.json",
        [
            {"id": "simple-1", "query": simple_1, "gold_answers": ["Paris"], "repository": "repository.json"},
            {"id": "simple-2", "query": simple_2, "gold_answers": ["William Shakespeare"], "repository": "repository.json"},
            {"id": "complex-1", "query": complex_q, "gold_answers": ["2.1 million"], "repository": "repository.json"},
        ],
    )
    base = {"backend": {"type": "mock", "script": "../script.json"}, "repository": "../repository.json"}
    configs = {
        "full": {"preset": "full"},
        "no_checker": {"preset": "full", "checker": False},
        "no_decomposer": {"preset": "full", "decomposer": {"enabled": False}},
        "no_aggregator": {"preset": "full", "aggregator": {"enabled": False}},
        "single_adapter": {"preset": "full", "adapters": ["semantic_aggregation"]},
    }
    for name, pipeline in configs.items():
        dump(out / "configs" / f"{name}.json", {**base, "pipeline": pipeline})


if __name__ == "__main__":
    build_collect()
    build_progressive()
    build_ablation()
    print(f"fixtures written under {ROOT}")
