"""Replay a synthetic workload against the index and measure it."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .index import BigTree
from .model import EventKind, ServiceQuery, SpatialTextualObject, TurkEvent
from .scoring import DEFAULT_RECENCY_UNIT_S, ScoringParams
from .topk import QueryStats, top_k, top_k_oracle
from .workload import WorkloadSpec, generate_workload


@dataclass(frozen=True)
class QueryMix:
    """Overrides for the generated queries plus how much to cross-check.

    ``oracle_every`` = n checks every n-th query against the brute-force
    ranking (1 = all, 0 = none).
    """

    k: int | None = None
    alpha: float | None = None
    lambda_base: float | None = None
    max_distance_m: float | None = None
    recency_unit_s: float = DEFAULT_RECENCY_UNIT_S
    oracle_every: int = 1
    max_queries: int | None = None


def _apply_mix(q: ServiceQuery, mix: QueryMix) -> ServiceQuery:
    return ServiceQuery(
        q.keywords, q.lat, q.lon, q.issued_at,
        k=mix.k or q.k,
        alpha=q.alpha if mix.alpha is None else mix.alpha,
        lambda_base=mix.lambda_base or q.lambda_base,
        max_distance_m=mix.max_distance_m or q.max_distance_m,
    )


def bench(spec: WorkloadSpec, mix: QueryMix | None = None) -> dict:
    mix = mix or QueryMix()
    stream = generate_workload(spec)
    initial: list[SpatialTextualObject] = []
    pending = None
    for item in stream:
        if isinstance(item, TurkEvent) and item.kind is EventKind.REGISTER:
            p = item.payload
            initial.append(SpatialTextualObject(item.object_id, frozenset(p["skills"]), p["lat"], p["lon"], item.at))
        else:
            pending = item
            break
    index = BigTree.bulk_load(initial)

    latencies: list[float] = []
    pruning: list[float] = []
    update_time = 0.0
    n_updates = 0
    checked = agreed = 0

    def handle(item) -> None:
        nonlocal update_time, n_updates, checked, agreed
        if isinstance(item, TurkEvent):
            p = item.payload
            t = time.perf_counter()
            index.update_location(item.object_id, p["lat"], p["lon"], item.at)
            update_time += time.perf_counter() - t
            n_updates += 1
            return
        if mix.max_queries is not None and len(latencies) >= mix.max_queries:
            return
        q = _apply_mix(item, mix)
        params = ScoringParams.for_query(q, mix.recency_unit_s)
        stats = QueryStats()
        t = time.perf_counter()
        got = top_k(index, q, params, stats=stats)
        latencies.append(time.perf_counter() - t)
        pruning.append(1.0 - stats.postings_scanned / len(index))
        if mix.oracle_every and (len(latencies) - 1) % mix.oracle_every == 0:
            want = top_k_oracle(index.objects.values(), q, params)
            checked += 1
            agreed += [(c.object_id, c.score) for c in got] == [(c.object_id, c.score) for c in want]

    if pending is not None:
        handle(pending)
    for item in stream:
        handle(item)

    lat_us = np.array(latencies) * 1e6 if latencies else np.zeros(1)
    return {
        "latency_p50_us": float(np.percentile(lat_us, 50)),
        "latency_p95_us": float(np.percentile(lat_us, 95)),
        "latency_p99_us": float(np.percentile(lat_us, 99)),
        "updates_per_s": n_updates / update_time if update_time > 0 else 0.0,
        "pruning_ratio": float(np.mean(pruning)) if pruning else 1.0,
        "oracle_agreement": agreed / checked if checked else 1.0,
        "n_objects": len(index),
        "n_updates": n_updates,
        "n_queries": len(latencies),
        "n_oracle_checks": checked,
    }
