"""Command-line entry point: ``crowdmatch <command> ...``.

Results go to stdout as JSON (one object per line for lists). Failures
print one ``error: CODE: message`` line to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .bench import QueryMix, bench
from .dispatch import DispatchSession, Verdict
from .errors import CrowdMatchError
from .model import ServiceQuery, encode_event
from .recommender import CarsHyper, RatingRecord, dump_model, load_model, recommend, train
from .scoring import DEFAULT_RECENCY_UNIT_S, ScoringParams
from .store import TurkDB, load_snapshot, replay, restore, write_snapshot
from .topk import QueryStats, top_k
from .workload import WorkloadSpec, generate_workload


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_db(args) -> TurkDB:
    if getattr(args, "snapshot", None):
        if args.log:
            return restore(args.snapshot, args.log)
        return load_snapshot(args.snapshot).db
    if not args.log:
        raise CrowdMatchError("need --log or --snapshot", code="USAGE")
    return replay(args.log)


def _query_from(args, db: TurkDB) -> ServiceQuery:
    at = args.at if args.at is not None else db.last_event_at
    return ServiceQuery(args.kw, args.lat, args.lon, at, k=args.k, alpha=args.alpha,
                        lambda_base=args.lambda_base, max_distance_m=args.dmax)


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_load(args) -> None:
    db = replay(args.log)
    _print({
        "objects": len(db.index),
        "ratings": len(db.ratings),
        "responses": len(db.responses),
        "events": db.events_applied,
        "last_event_at": db.last_event_at,
        "bytes": Path(args.log).stat().st_size,
    })


def cmd_snapshot(args) -> None:
    db = replay(args.log)
    model = load_model(Path(args.model).read_text()) if args.model else None
    write_snapshot(args.file, db, Path(args.log).stat().st_size, model)
    _print({"snapshot": args.file, "objects": len(db.index), "log_offset": Path(args.log).stat().st_size})


def cmd_query(args) -> None:
    db = _load_db(args)
    q = _query_from(args, db)
    stats = QueryStats()
    params = ScoringParams.for_query(q, args.unit)
    for c in top_k(db.index, q, params, stats=stats):
        _print({"rank": c.rank, "object_id": c.object_id, **dataclasses.asdict(c.score)})
    if args.stats:
        print(json.dumps(stats.as_dict(), sort_keys=True), file=sys.stderr)


def cmd_simulate(args) -> None:
    spec = WorkloadSpec.from_json(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    n_events = n_queries = 0
    qfh = open(args.queries, "w", encoding="utf-8") if args.queries else None
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for item in generate_workload(spec):
                if isinstance(item, ServiceQuery):
                    n_queries += 1
                    if qfh:
                        qfh.write(json.dumps(dataclasses.asdict(item), sort_keys=True) + "\n")
                else:
                    n_events += 1
                    fh.write(encode_event(item) + "\n")
    finally:
        if qfh:
            qfh.close()
    _print({"events": n_events, "queries": n_queries, "log": args.out})


def cmd_bench(args) -> None:
    spec = WorkloadSpec.from_json(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    report = bench(spec, QueryMix(oracle_every=args.oracle_every, max_queries=args.max_queries))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_train(args) -> None:
    ratings = [RatingRecord.from_record(r) for r in _read_jsonl(args.ratings)]
    hyper = CarsHyper(args.factors, args.lr, args.reg, args.epochs)
    model = train(ratings, hyper, seed=args.seed or 0)
    Path(args.out).write_text(dump_model(model) + "\n")
    _print({"model": args.out, "ratings": len(ratings), "final_loss": model.loss_history[-1]})


def cmd_recommend(args) -> None:
    model = load_model(Path(args.model).read_text())
    if args.pool:
        pool = [p for p in args.pool.split(",") if p]
        at = args.at or 0
    else:
        db = _load_db(args)
        pool = list(db.index.objects)
        at = args.at if args.at is not None else db.last_event_at
    q = ServiceQuery(args.kw, args.lat, args.lon, at)
    exclude = [x for x in (args.exclude or "").split(",") if x]
    for turk_id, rating in recommend(model, args.user, q, pool, exclude, args.m):
        _print({"turk_id": turk_id, "predicted_rating": rating})


def cmd_dispatch(args) -> None:
    db = _load_db(args)
    q = _query_from(args, db)
    model = load_model(Path(args.model).read_text()) if args.model else None
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout

    def sink(row: dict) -> None:
        out.write(json.dumps(row, sort_keys=True) + "\n")

    try:
        session = DispatchSession(
            db.index, q, args.km, args.kr, args.timeout,
            params=ScoringParams.for_query(q, args.unit), model=model, user_id=args.user or "", sink=sink,
        )
        for step in _read_jsonl(args.script):
            at = int(step.get("at", session.clock))
            if step.get("verdict"):
                session.respond(step["turk_id"], Verdict(step["verdict"].upper()), at)
            else:
                session.tick(at)
    finally:
        if args.out:
            out.close()
    summary = {
        "session_id": session.session_id,
        "accepted": sorted(e.turk_id for e in session.accepted()),
        "notified": [e.turk_id for e in session.active()],
        "settled": session.settled,
    }
    print(json.dumps(summary, sort_keys=True), file=sys.stderr if not args.out else sys.stdout)


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log", help="TurkDB event log (JSON lines)")
    p.add_argument("--snapshot", help="snapshot to start from; --log then replays the suffix")


def _add_query(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--kw", required=True, help="comma-separated keywords")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--lambda", dest="lambda_base", type=float, default=2.0)
    p.add_argument("--dmax", type=float, default=10_000.0, help="distance normalization bound (m)")
    p.add_argument("--at", type=int, help="query time (default: last event time)")
    p.add_argument("--unit", type=float, default=DEFAULT_RECENCY_UNIT_S, help="seconds per recency decay unit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdmatch", description="Mobile crowd service search engine")
    parser.add_argument("--seed", type=int, help="64-bit seed for every random choice")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("load", help="replay a log and summarize it")
    p.add_argument("log")
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("snapshot", help="replay a log and write a snapshot")
    p.add_argument("file")
    p.add_argument("--log", required=True)
    p.add_argument("--model", help="recommender model dump to embed")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("query", help="top-k search")
    _add_source(p)
    _add_query(p)
    p.add_argument("--stats", action="store_true", help="print search counters to stderr")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("simulate", help="write a synthetic workload as an event log")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.add_argument("--queries", help="also write generated queries here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a workload and report latency, throughput, pruning")
    p.add_argument("spec")
    p.add_argument("--out")
    p.add_argument("--oracle-every", type=int, default=1)
    p.add_argument("--max-queries", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-cars", help="fit the context-aware recommender")
    p.add_argument("ratings")
    p.add_argument("--out", required=True)
    defaults = CarsHyper()
    p.add_argument("--factors", type=int, default=defaults.factors)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--reg", type=float, default=defaults.regularization)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recommend", help="rank turks by predicted rating")
    _add_source(p)
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--kw", required=True)
    p.add_argument("--at", type=int)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--pool", help="comma-separated turk ids (default: every indexed turk)")
    p.add_argument("--exclude", help="comma-separated turk ids")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("dispatch", help="drive a dispatch session from scripted responses")
    _add_source(p)
    _add_query(p)
    p.add_argument("--script", required=True, help='JSON lines: {"at", "turk_id", "verdict"} or {"at"} to tick')
    p.add_argument("--km", type=int, default=3)
    p.add_argument("--kr", type=int, default=0)
    p.add_argument("--timeout", type=int, default=120)
    p.add_argument("--model")
    p.add_argument("--user")
    p.add_argument("--out", help="write session rows here instead of stdout")
    p.set_defaults(func=cmd_dispatch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CrowdMatchError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
