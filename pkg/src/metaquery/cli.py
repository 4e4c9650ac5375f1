"""Command line: query, collect, build-stats, train-router, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .harness import collect_traces, evaluate, load_fixtures
from .llm import BackendError, ConfigError, HashingEmbedder
from .model import OperatorKind, Query, RepositoryError, TraceStore
from .pipeline import ABLATIONS, AppConfig, Engine, load_config, load_repository, make_backend
from .router import StatTable, records_from_traces, train_mlrouter

log = logging.getLogger("metaquery")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _pipeline_overrides(args) -> dict[str, Any]:
    o: dict[str, Any] = {}
    if getattr(args, "router", None):
        o["router"] = args.router
    if getattr(args, "par", None) is not None:
        o["par"] = args.par
    if getattr(args, "check", None) is not None:
        o["checker"] = args.check
    if getattr(args, "max_out", None) is not None:
        o["max_out"] = args.max_out
    if getattr(args, "no_agg", False):
        o["aggregator"] = False
    if getattr(args, "op", None):
        o["ops"] = args.op
    if getattr(args, "adapter", None):
        o["router"] = "fixed"
        o["fixed_adapter"] = args.adapter
    if getattr(args, "ablation", None):
        o.update(ABLATIONS[args.ablation])
    return o


def _load(args) -> AppConfig:
    cfg = load_config(args.config, _pipeline_overrides(args), getattr(args, "pipeline", None))
    if getattr(args, "backend", None):
        cfg.backend = {"type": "remote"} if args.backend == "remote" else {"type": "mock", "script": args.backend.removeprefix("mock:")}
    return cfg


def _engine(cfg: AppConfig, repo=None, trace_store: TraceStore | None = None) -> Engine:
    backend = make_backend(cfg.backend)
    repo = repo if repo is not None else load_repository(cfg.repository)
    return Engine(cfg.pipeline, repo, backend, trace_store=trace_store)


def cmd_query(args) -> int:
    cfg = _load(args)
    store = TraceStore(cfg.trace_log) if cfg.trace_log else None
    engine = _engine(cfg, trace_store=store)
    run = engine.query(Query(id=args.id, text=args.question))
    print(run.answer)
    if args.trace:
        trace = json.dumps(run.to_dict(), indent=2, ensure_ascii=False)
        if args.trace == "-":
            print(trace)
        else:
            Path(args.trace).write_text(trace + "\n")
    return 0


def cmd_collect(args) -> int:
    cfg = _load(args)
    store = TraceStore(args.out)
    backend = make_backend(cfg.backend)
    total = 0
    items = load_fixtures(args.fixtures)
    by_repo: dict[str, list[Query]] = {}
    for item in items:
        by_repo.setdefault(item.repository, []).append(item.query)
    for repo_path, queries in by_repo.items():
        engine = Engine(cfg.pipeline, load_repository(repo_path), backend)
        total += collect_traces(queries, engine, store, judge=backend)
    print(f"wrote {total} traces to {args.out}")
    return 0


def cmd_build_stats(args) -> int:
    cfg = _load(args)
    table = StatTable.from_traces(TraceStore(args.traces).scan(scored_only=True), cfg.train.blend)
    table.save(args.out)
    for e in table.to_dict()["entries"]:
        print(f"{e['operator_kind']:<16} {e['adapter_id']:<24} {e['mean']:.4f}  n={e['count']}")
    return 0


def cmd_train_router(args) -> int:
    cfg = _load(args)
    records = records_from_traces(TraceStore(args.traces).scan(scored_only=True), cfg.train.blend)
    if not records:
        raise ConfigError(f"no scored traces in {args.traces}")
    embedder = make_backend(cfg.backend) if cfg.pipeline.router_embedder == "backend" else HashingEmbedder()
    labels = [a if isinstance(a, str) else a.get("id") or a["type"] for a in cfg.pipeline.adapters]
    model = train_mlrouter(records, cfg.train, embedder, labels=labels)
    model.save(args.out)
    print(f"trained on {len(records)} records; loss {model.losses[0]:.4f} -> {model.losses[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    backend = make_backend(cfg.backend)
    items = load_fixtures(args.fixtures)
    name = args.name or Path(args.fixtures).stem
    report = evaluate(items, lambda repo: Engine(cfg.pipeline, repo, backend), judge=backend, name=name)
    print(report.table())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
    return 0


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pipeline", choices=["full", "partial", "mini"])
    p.add_argument("--router", choices=["stat", "ml"])
    p.add_argument("--par", dest="par", action="store_true", default=None)
    p.add_argument("--no-par", dest="par", action="store_false")
    p.add_argument("--check", dest="check", action="store_true", default=None)
    p.add_argument("--no-check", dest="check", action="store_false")
    p.add_argument("--max-out", type=int)
    p.add_argument("--no-agg", action="store_true")
    p.add_argument("--backend", help="mock:script.json or remote")
    p.add_argument("--op", action="append", choices=[k.modality for k in OperatorKind], help="fixed operator(s) when planning is off")
    p.add_argument("--adapter", help="send every operator to this adapter")
    p.add_argument("--ablation", choices=sorted(ABLATIONS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaquery", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="answer one question end to end")
    q.add_argument("question")
    q.add_argument("--config", required=True)
    q.add_argument("--id", default="q0")
    q.add_argument("--trace", nargs="?", const="-", help="dump the run trace as JSON (to stdout or a file)")
    _add_pipeline_flags(q)
    q.set_defaults(func=cmd_query)

    c = sub.add_parser("collect", help="run all capable adapters per subquery and log scored traces")
    c.add_argument("--config", required=True)
    c.add_argument("--fixtures", required=True)
    c.add_argument("--out", required=True)
    _add_pipeline_flags(c)
    c.set_defaults(func=cmd_collect)

    s = sub.add_parser("build-stats", help="build the statistics router table from a trace log")
    s.add_argument("--config", required=True)
    s.add_argument("--traces", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_stats)

    t = sub.add_parser("train-router", help="train the learned router from a trace log")
    t.add_argument("--config", required=True)
    t.add_argument("--traces", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_router)

    e = sub.add_parser("eval", help="evaluate a fixture dataset")
    e.add_argument("--config", required=True)
    e.add_argument("--fixtures", required=True)
    e.add_argument("--json")
    e.add_argument("--name")
    _add_pipeline_flags(e)
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RepositoryError, FileNotFoundError) as exc:
        print(json.dumps({"error": "config", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": "runtime", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
