"""Top-k temporal spatial-keyword search over a :class:`BigTree`.

The search is best-first over one priority queue holding four kinds of
items, each keyed by an upper bound on the scores it can still produce:

* a tree node, keyed by :func:`node_upper_bound`;
* a leaf stream, walking one of the leaf's newest-first lists and keyed by
  the bound of the next entry, which shrinks as timestamps get older;
* a scanned entry whose textual and recency parts are exact but whose
  spatial part is still the leaf's optimistic value (distance not yet
  computed);
* a fully scored object.

A scored object popped from the queue outranks everything still queued, so
it is emitted right away. The haversine distance of an entry is only
computed once its optimistic score reaches the head of the queue, and the
queue is never drained further than the caller asks. At equal keys bounds
are expanded before scored objects and scored objects leave in id order,
which reproduces the ``(-total, object_id)`` ordering of the brute-force
ranking exactly.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import CursorInvalidatedError
from .index import BigTree, BigTreeNode, PostingEntry, node_spatial_max, node_upper_bound
from .model import ScoreBreakdown, ServiceQuery, SpatialTextualObject
from .scoring import ScoringParams, combine, recency_score, resolve_params, score_parts

_NODE, _STREAM, _PARTIAL, _EXACT = range(4)


@dataclass(frozen=True)
class RankedCandidate:
    object_id: str
    score: ScoreBreakdown
    rank: int

    @property
    def total(self) -> float:
        return self.score.total


@dataclass
class QueryStats:
    nodes_visited: int = 0
    postings_scanned: int = 0
    distance_computations: int = 0
    emitted: int = 0
    theta: float | None = None

    def as_dict(self) -> dict:
        return {
            "nodes_visited": self.nodes_visited,
            "postings_scanned": self.postings_scanned,
            "distance_computations": self.distance_computations,
        }


def _merged_postings(leaf: BigTreeNode, keywords: Iterable[str]) -> Iterator[PostingEntry]:
    lists = [leaf.postings[kw] for kw in keywords if kw in leaf.postings]
    if len(lists) == 1:
        yield from lists[0]
        return
    last = None
    for e in heapq.merge(*lists, key=lambda e: (-e.positioned_at, e.object_id)):
        if e.object_id != last:
            last = e.object_id
            yield e


class _LeafStream:
    """Newest-first walk over one leaf list; ``head`` is the next entry."""

    __slots__ = ("entries", "factor", "spatial_max", "cap", "head")

    def __init__(self, entries: Iterator[PostingEntry], factor: float, spatial_max: float, cap: float):
        self.entries = entries
        self.factor = factor
        self.spatial_max = spatial_max
        self.cap = cap
        self.head: PostingEntry | None = None


class QueryCursor:
    """Resumable ranking: iterating yields candidates best-first, forever exact.

    ``theta`` is the score of the last emitted candidate, i.e. the current
    k-th best for k = number emitted. Any mutation of the index after the
    cursor was opened makes the next draw raise ``CursorInvalidatedError``.
    """

    def __init__(self, index: BigTree, query: ServiceQuery, params: ScoringParams | None = None, prefetch: int = 16):
        self.index = index
        self.query = query
        self.params = resolve_params(query, params)
        self.prefetch = max(1, prefetch)
        self.stats = QueryStats()
        self.version = index.version
        self.exhausted = False
        self._kw = query.keyword_set
        self._heap: list[tuple] = []
        self._seq = itertools.count()
        self._buffer: deque[RankedCandidate] = deque()
        self._emitted = 0
        with index.lock.read():
            root = index.root
            if root.count:
                self._push_node(root, 1.0)

    @property
    def theta(self) -> float | None:
        return self.stats.theta

    def __iter__(self) -> QueryCursor:
        return self

    def __next__(self) -> RankedCandidate:
        if self.index.version != self.version:
            raise CursorInvalidatedError("index changed since the cursor was opened")
        if not self._buffer:
            if self.exhausted:
                raise StopIteration
            with self.index.lock.read():
                if self.index.version != self.version:
                    raise CursorInvalidatedError("index changed since the cursor was opened")
                self._fill(self.prefetch)
            if not self._buffer:
                self.exhausted = True
                raise StopIteration
        return self._buffer.popleft()

    def take(self, n: int) -> list[RankedCandidate]:
        return list(itertools.islice(self, n))

    def _push(self, key: float, kind: int, payload, oid: str = "") -> None:
        heapq.heappush(self._heap, (-key, kind == _EXACT, oid, next(self._seq), kind, payload))

    def _push_node(self, node: BigTreeNode, cap: float) -> None:
        bound = min(node_upper_bound(node, self.query, self.params), cap)
        if bound > 0.0:
            self._push(bound, _NODE, node)

    def _fill(self, n: int) -> None:
        heap = self._heap
        stats = self.stats
        p = self.params
        q = self.query
        while n > 0 and heap:
            negkey, _, _, _, kind, payload = heapq.heappop(heap)
            key = -negkey
            if kind == _EXACT:
                obj, parts = payload
                self._emitted += 1
                stats.emitted = self._emitted
                stats.theta = parts.total
                self._buffer.append(RankedCandidate(obj.id, parts, self._emitted))
                n -= 1
            elif kind == _PARTIAL:
                stats.distance_computations += 1
                parts = score_parts(q.lat, q.lon, q.issued_at, self._kw, payload, p)
                if parts[3] > 0.0:
                    self._push(parts[3], _EXACT, (payload, ScoreBreakdown(*parts)), payload.id)
            elif kind == _STREAM:
                self._advance_stream(payload)
            else:
                node = payload
                stats.nodes_visited += 1
                if node.children is None:
                    self._open_leaf(node, key)
                else:
                    for child in node.children:
                        if child.count:
                            self._push_node(child, key)

    def _open_leaf(self, leaf: BigTreeNode, cap: float) -> None:
        p = self.params
        sl_max = node_spatial_max(leaf, self.query.lat, self.query.lon, p.max_distance_m)
        summary = leaf.keyword_summary
        present = [kw for kw in self.query.keywords if kw in summary]
        if p.alpha > 0.0 and sl_max > 0.0:
            entries: Iterator[PostingEntry] = iter(leaf.recency)
        elif present:
            # non-matching entries cannot score above zero here
            entries = _merged_postings(leaf, present)
        else:
            return
        factor = p.alpha * sl_max + (1.0 - p.alpha) * (len(present) / len(self._kw))
        self._queue_stream(_LeafStream(entries, factor, sl_max, cap))

    def _queue_stream(self, stream: _LeafStream) -> None:
        e = next(stream.entries, None)
        if e is None:
            return
        stream.head = e
        p = self.params
        bound = min(stream.cap, stream.factor * recency_score(self.query.issued_at, e.positioned_at,
                                                              p.lambda_base, p.recency_unit_s))
        if bound > 0.0:
            self._push(bound, _STREAM, stream)

    def _advance_stream(self, stream: _LeafStream) -> None:
        e = stream.head
        self.stats.postings_scanned += 1
        obj = self.index.objects[e.object_id]
        p = self.params
        textual = len(self._kw & obj.skills) / len(self._kw)
        recency = recency_score(self.query.issued_at, obj.positioned_at, p.lambda_base, p.recency_unit_s)
        optimistic = combine(p.alpha, stream.spatial_max, textual, recency)
        if optimistic > 0.0:
            self._push(optimistic, _PARTIAL, obj)
        self._queue_stream(stream)


def open_cursor(
    index: BigTree, query: ServiceQuery, params: ScoringParams | None = None, prefetch: int | None = None
) -> QueryCursor:
    """Cursor for incremental next-best draws; prefetches ``max(2k, 16)`` by default."""
    if prefetch is None:
        prefetch = max(2 * query.k, 16)
    return QueryCursor(index, query, params, prefetch)


def top_k(
    index: BigTree,
    query: ServiceQuery,
    params: ScoringParams | None = None,
    *,
    k: int | None = None,
    stats: QueryStats | None = None,
) -> list[RankedCandidate]:
    """Best ``k`` (default ``query.k``) objects with positive score, best first."""
    k = query.k if k is None else k
    cursor = QueryCursor(index, query, params, prefetch=k)
    out = cursor.take(k)
    if stats is not None:
        stats.__dict__.update(cursor.stats.__dict__)
    return out


def top_k_oracle(
    objects: Iterable[SpatialTextualObject],
    query: ServiceQuery,
    params: ScoringParams | None = None,
    *,
    k: int | None = None,
    stats: QueryStats | None = None,
) -> list[RankedCandidate]:
    """Score everything, sort by (-total, id), drop zeros, truncate.

    ``k=None`` means ``query.k``; pass ``k=-1`` for the full ranking.
    """
    p = resolve_params(query, params)
    kw = query.keyword_set
    scored = []
    n = 0
    for obj in objects:
        n += 1
        parts = score_parts(query.lat, query.lon, query.issued_at, kw, obj, p)
        if parts[3] > 0.0:
            scored.append((-parts[3], obj.id, parts))
    scored.sort(key=lambda s: (s[0], s[1]))
    k = query.k if k is None else k
    if k >= 0:
        scored = scored[:k]
    if stats is not None:
        stats.nodes_visited = 0
        stats.postings_scanned = n
        stats.distance_computations = n
        stats.emitted = len(scored)
        stats.theta = -scored[-1][0] if scored else None
    return [RankedCandidate(oid, ScoreBreakdown(*parts), i + 1) for i, (_, oid, parts) in enumerate(scored)]


class QueryEngine:
    """Query handle that remembers the counters of its last query."""

    def __init__(self, index: BigTree, params: ScoringParams | None = None):
        self.index = index
        self.params = params
        self.last_stats: QueryStats | None = None

    def top_k(self, query: ServiceQuery, k: int | None = None) -> list[RankedCandidate]:
        stats = QueryStats()
        out = top_k(self.index, query, self.params, k=k, stats=stats)
        self.last_stats = stats
        return out

    def oracle(self, query: ServiceQuery, k: int | None = None) -> list[RankedCandidate]:
        stats = QueryStats()
        with self.index.lock.read():
            objs = list(self.index.objects.values())
        out = top_k_oracle(objs, query, self.params, k=k, stats=stats)
        self.last_stats = stats
        return out

    def open_cursor(self, query: ServiceQuery, prefetch: int | None = None) -> QueryCursor:
        cursor = open_cursor(self.index, query, self.params, prefetch)
        self.last_stats = cursor.stats
        return cursor

    def query_stats(self) -> dict:
        if self.last_stats is None:
            raise LookupError("no query has run on this handle")
        return self.last_stats.as_dict()
