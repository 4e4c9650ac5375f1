"""Run every ablation config on the scripted corpus and compare cost and quality.

Backend calls stand in for runtime on the mock. An optional per-call delay
makes the wall-clock column meaningful too.

    python3 scripts/compare_ablations.py [--delay 0.02]
"""

import argparse
import json
import time
from pathlib import Path

from metaquery.harness import load_fixtures
from metaquery.metrics import score_answer
from metaquery.pipeline import Engine, load_config, load_repository, make_backend

ABLATION = Path(__file__).resolve().parents[1] / "fixtures" / "ablation"
CONFIGS = ("full", "no_checker", "no_decomposer", "no_aggregator", "single_adapter")


def run(name, delay):
    cfg = load_config(ABLATION / "configs" / f"{name}.json")
    backend = make_backend({**cfg.backend, "delay": delay})
    engine = Engine(cfg.pipeline, load_repository(cfg.repository), backend)
    items = load_fixtures(ABLATION / "dataset.json")
    start = time.perf_counter()
    answers = [engine.query(item.query).answer for item in items]
    elapsed = time.perf_counter() - start
    calls = len(backend.calls)
    f1 = sum(score_answer(a, it.query.gold_answers, it.query.text, None)["f1"] for a, it in zip(answers, items)) / len(items)
    return {"config": name, "calls": calls, "elapsed": elapsed, "f1": f1}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--delay", type=float, default=0.0, help="seconds of latency per mock call")
    parser.add_argument("--json", help="also write the rows to this file")
    args = parser.parse_args()

    rows = [run(name, args.delay) for name in CONFIGS]
    print(f"{'config':<16}{'calls':>7}{'time(s)':>10}{'F1':>8}")
    for r in rows:
        print(f"{r['config']:<16}{r['calls']:>7}{r['elapsed']:>10.3f}{100 * r['f1']:>8.2f}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
