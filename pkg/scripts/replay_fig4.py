"""Replay the bear-flag / Sun Belt / capital punishment query on the scripted mock.

Prints the decomposition, every subquery's refined text, chosen operator and
adapter, and the final answer.

    python3 scripts/replay_fig4.py [--seq]
"""

import argparse
from pathlib import Path

from metaquery.model import Query
from metaquery.pipeline import Engine, load_config, load_repository, make_backend

FIG4 = Path(__file__).resolve().parents[1] / "fixtures" / "fig4"
QUESTION = (
    "When was the last time capital punishment took place in the state whose flag features a bear "
    "and has a major city in the Sun Belt?"
)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seq", action="store_true", help="run stages sequentially")
    parser.add_argument("--question", default=QUESTION)
    args = parser.parse_args()

    cfg = load_config(FIG4 / "config.json", {"par": not args.seq})
    backend = make_backend(cfg.backend)
    engine = Engine(cfg.pipeline, load_repository(cfg.repository), backend)
    run = engine.query(Query("fig4", args.question))

    print(f"question: {args.question}\n")
    for node in run.graph.nodes:
        out = run.outcomes[node.index]
        deps = ", ".join(str(d) for d in sorted(node.depends_on)) or "-"
        chosen = next(a for a in reversed(out.attempts) if a.result is not None)
        print(f"[{node.index}] {node.text}")
        print(f"    depends on: {deps}")
        if node.refined_text:
            print(f"    refined:    {node.refined_text}")
        print(f"    operator:   {chosen.operator.kind.value} via {chosen.route.adapter_id} ({out.attempted} attempt(s))")
        print(f"    answer:     {out.answer}")
    print(f"\nedges: {sorted(run.graph.edges)}")
    print(f"final answer: {run.answer}")
    print(f"backend calls: {len(backend.calls)}, elapsed: {run.elapsed * 1000:.1f} ms")


if __name__ == "__main__":
    main()
