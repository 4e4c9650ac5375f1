"""Learned router on a synthetic keyword corpus.

Two adapters, each clearly better on subqueries carrying its own keywords.
Trains the MLP with the confidence-weighted loss and reports held-out
accuracy against the statistics router (which cannot see the subquery).

    python3 scripts/router_experiment.py [--epochs 200] [--train 200] [--test 50]
"""

import argparse
import time

import numpy as np

from metaquery.llm import HashingEmbedder
from metaquery.model import KIND_ORDER, ExecutionTrace
from metaquery.router import RouterTrainConfig, RouterTrainingRecord, StatTable, featurize, train_mlrouter

FILLER = "the of a which and for in on with from about data report record value item list show find give me please what is are was were".split()
KEYWORDS = {"alpha": ["aggregate", "summarize", "average", "total", "count"], "beta": ["photo", "picture", "logo", "colour", "drawing"]}


def corpus(n, rng):
    records = []
    for _ in range(n):
        label = ["alpha", "beta"][rng.integers(2)]
        words = list(rng.choice(FILLER, size=rng.integers(4, 9)))
        words.insert(rng.integers(len(words) + 1), rng.choice(KEYWORDS[label]))
        hi, lo = rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.5)
        scores = {"alpha": hi, "beta": lo} if label == "alpha" else {"alpha": lo, "beta": hi}
        records.append(RouterTrainingRecord(" ".join(words), KIND_ORDER[rng.integers(3)], scores))
    return records


def stat_table(records):
    # each adapter's quality is the blended score; feed it back as a uniform-metric trace
    traces = [
        ExecutionTrace("q", r.subquery_text, r.operator_kind, a, "", {"f1": s, "hit": s, "coverage": s, "sem_hit": s})
        for r in records
        for a, s in r.scores.items()
    ]
    return StatTable.from_traces(traces)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--train", type=int, default=200)
    parser.add_argument("--test", type=int, default=50)
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    records = corpus(args.train + args.test, rng)
    train, test = records[: args.train], records[args.train :]
    emb = HashingEmbedder()
    cfg = RouterTrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed)

    start = time.perf_counter()
    model = train_mlrouter(train, cfg, emb, labels=["alpha", "beta"])
    elapsed = time.perf_counter() - start

    X = np.stack([featurize(r.subquery_text, r.operator_kind, emb) for r in test])
    pred = [model.labels[i] for i in model.predict_proba(X).argmax(axis=1)]
    ml_acc = np.mean([p == r.best for p, r in zip(pred, test)])

    table = stat_table(train)
    stat_pred = [max(("alpha", "beta"), key=lambda a: table.mean(r.operator_kind, a)) for r in test]
    stat_acc = np.mean([p == r.best for p, r in zip(stat_pred, test)])

    print(f"records: {len(train)} train / {len(test)} held out, epochs {args.epochs}, lr {args.lr}")
    print(f"loss: {model.losses[0]:.4f} -> {model.losses[-1]:.4f} in {elapsed:.2f}s")
    print(f"held-out accuracy  learned router: {100 * ml_acc:.1f}%   statistics router: {100 * stat_acc:.1f}%")


if __name__ == "__main__":
    main()
