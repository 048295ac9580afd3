"""Hybrid quadtree / inverted-list index over mobile spatial-textual objects.

Leaves keep every entry in two views, both sorted newest-first: one list
per skill keyword and one list over all entries. Every node keeps exact
subtree summaries (object count, newest timestamp, and per keyword the
count and newest timestamp), so a query can bound the best score hidden
in a subtree without opening it.

The tree covers a fixed region (the whole globe by default) and never
rebalances. Leaves split past ``capacity`` entries until ``max_depth``,
where they are allowed to overflow; a subtree whose count falls to
``capacity // 2`` is collapsed back into one leaf.
"""

from __future__ import annotations

import bisect
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import DuplicateIdError, NotFoundError, StaleUpdateError, ValidationError
from .geo import box_distance_lower_bound_m
from .model import ServiceQuery, SpatialTextualObject, check_coord, check_timestamp
from .scoring import ScoringParams, combine, recency_score, resolve_params, spatial_score_from_distance

WORLD = (-90.0, 90.0, -180.0, 180.0)
DEFAULT_CAPACITY = 64
DEFAULT_MAX_DEPTH = 16
COMPACT_THRESHOLD = 1e-4


@dataclass(frozen=True, slots=True)
class PostingEntry:
    object_id: str
    positioned_at: int
    lat: float
    lon: float


def _order(e: PostingEntry) -> tuple[int, str]:
    return (-e.positioned_at, e.object_id)


def _insort(lst: list[PostingEntry], e: PostingEntry) -> None:
    bisect.insort(lst, e, key=_order)


def _discard(lst: list[PostingEntry], e: PostingEntry) -> None:
    i = bisect.bisect_left(lst, _order(e), key=_order)
    if i >= len(lst) or lst[i].object_id != e.object_id:
        raise AssertionError(f"posting for {e.object_id!r} missing")
    del lst[i]


class BigTreeNode:
    __slots__ = (
        "lat_min", "lat_max", "lon_min", "lon_max", "depth", "parent", "children",
        "count", "max_positioned_at", "keyword_summary",
        "entries", "postings", "recency",
    )

    def __init__(self, bounds: tuple[float, float, float, float], depth: int, parent: BigTreeNode | None):
        self.lat_min, self.lat_max, self.lon_min, self.lon_max = bounds
        self.depth = depth
        self.parent = parent
        self.children: list[BigTreeNode] | None = None
        self.count = 0
        self.max_positioned_at = -1
        # keyword -> [count, newest timestamp]
        self.keyword_summary: dict[str, list[int]] = {}
        self.entries: dict[str, PostingEntry] = {}
        self.postings: dict[str, list[PostingEntry]] = {}
        self.recency: list[PostingEntry] = []

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.lat_min, self.lat_max, self.lon_min, self.lon_max)

    def quadrant(self, lat: float, lon: float) -> int:
        mid_lat = (self.lat_min + self.lat_max) * 0.5
        mid_lon = (self.lon_min + self.lon_max) * 0.5
        return (2 if lat >= mid_lat else 0) + (1 if lon >= mid_lon else 0)

    def child_bounds(self, q: int) -> tuple[float, float, float, float]:
        mid_lat = (self.lat_min + self.lat_max) * 0.5
        mid_lon = (self.lon_min + self.lon_max) * 0.5
        lat = (mid_lat, self.lat_max) if q & 2 else (self.lat_min, mid_lat)
        lon = (mid_lon, self.lon_max) if q & 1 else (self.lon_min, mid_lon)
        return (lat[0], lat[1], lon[0], lon[1])

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def iter_leaves(self) -> Iterator[BigTreeNode]:
        stack = [self]
        while stack:
            n = stack.pop()
            if n.children is None:
                yield n
            else:
                stack.extend(n.children)

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "node"
        return f"<{kind} depth={self.depth} count={self.count} bounds={self.bounds}>"


class _RWLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class BigTree:
    """The index. Single writer, many readers.

    ``version`` increases on every mutation; query cursors use it to detect
    that the data changed under them.
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        max_depth: int = DEFAULT_MAX_DEPTH,
        region: tuple[float, float, float, float] = WORLD,
    ):
        if capacity < 1 or max_depth < 0:
            raise ValidationError("capacity must be >= 1 and max_depth >= 0", code="BAD_INDEX_PARAMS")
        lat_min, lat_max, lon_min, lon_max = region
        check_coord(lat_min, lon_min)
        check_coord(lat_max, lon_max)
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ValidationError(f"degenerate region {region}", code="BAD_INDEX_PARAMS")
        self.capacity = capacity
        self.max_depth = max_depth
        self.region = tuple(float(x) for x in region)
        self.root = BigTreeNode(self.region, 0, None)
        self.objects: dict[str, SpatialTextualObject] = {}
        self._leaf_of: dict[str, BigTreeNode] = {}
        self.version = 0
        self.lock = _RWLock()

    def __len__(self) -> int:
        return len(self.objects)

    def __contains__(self, object_id: str) -> bool:
        return object_id in self.objects

    def get(self, object_id: str) -> SpatialTextualObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise NotFoundError(f"object {object_id!r} not indexed") from None

    @classmethod
    def bulk_load(cls, objects: Iterable[SpatialTextualObject], **kwargs) -> BigTree:
        """Build top-down in one pass instead of inserting one by one."""
        tree = cls(**kwargs)
        objs = list(objects)
        for o in objs:
            if o.id in tree.objects:
                raise DuplicateIdError(f"object {o.id!r} already indexed")
            tree._check_region(o.lat, o.lon)
            tree.objects[o.id] = o
        tree._build(tree.root, [_entry(o) for o in objs])
        tree.version += 1
        return tree

    def _build(self, node: BigTreeNode, entries: list[PostingEntry]) -> None:
        if len(entries) <= self.capacity or node.depth >= self.max_depth:
            for e in entries:
                self._leaf_add(node, e)
            return
        parts: list[list[PostingEntry]] = [[], [], [], []]
        for e in entries:
            parts[node.quadrant(e.lat, e.lon)].append(e)
        node.children = [BigTreeNode(node.child_bounds(q), node.depth + 1, node) for q in range(4)]
        for child, part in zip(node.children, parts):
            self._build(child, part)
        _recompute_summary(node)

    # -- mutation -----------------------------------------------------------

    def insert(self, obj: SpatialTextualObject) -> None:
        with self.lock.write():
            if obj.id in self.objects:
                raise DuplicateIdError(f"object {obj.id!r} already indexed")
            self._check_region(obj.lat, obj.lon)
            self._insert(obj)
            self.version += 1

    def remove(self, object_id: str) -> SpatialTextualObject:
        with self.lock.write():
            obj = self.get(object_id)
            self._remove(obj)
            self.version += 1
            return obj

    def update_location(self, object_id: str, lat: float, lon: float, positioned_at: int) -> None:
        """Move an object. Timestamps may not go backwards (``StaleUpdateError``)."""
        lat, lon = check_coord(lat, lon)
        positioned_at = check_timestamp(positioned_at)
        with self.lock.write():
            old = self.get(object_id)
            if positioned_at < old.positioned_at:
                raise StaleUpdateError(
                    f"update for {object_id!r} at t={positioned_at} precedes t={old.positioned_at}"
                )
            self._check_region(lat, lon)
            new = old.moved(lat, lon, positioned_at)
            leaf = self._leaf_of[object_id]
            if self._descend(lat, lon) is leaf:
                self._move_in_leaf(leaf, old, new)
            else:
                self._remove(old)
                self._insert(new)
            self.version += 1

    def update_skills(self, object_id: str, skills: Iterable[str]) -> None:
        skills = frozenset(skills)
        if not skills:
            raise ValidationError(f"object {object_id!r} would have no skills", code="EMPTY_SKILLS")
        with self.lock.write():
            old = self.get(object_id)
            self._remove(old)
            self._insert(SpatialTextualObject(old.id, skills, old.lat, old.lon, old.positioned_at))
            self.version += 1

    def compact(self, now: int, lambda_base: float, recency_unit_s: float, threshold: float = COMPACT_THRESHOLD) -> list[str]:
        """Drop objects whose recency at ``now`` fell below ``threshold``."""
        with self.lock.write():
            dead = [
                o for o in self.objects.values()
                if recency_score(now, o.positioned_at, lambda_base, recency_unit_s) < threshold
            ]
            for o in dead:
                self._remove(o)
            if dead:
                self.version += 1
            return sorted(o.id for o in dead)

    def _check_region(self, lat: float, lon: float) -> None:
        if not self.root.contains(lat, lon):
            raise ValidationError(f"({lat}, {lon}) outside index region {self.region}", code="OUT_OF_RANGE_COORD")

    def _descend(self, lat: float, lon: float) -> BigTreeNode:
        node = self.root
        while node.children is not None:
            node = node.children[node.quadrant(lat, lon)]
        return node

    def _insert(self, obj: SpatialTextualObject) -> None:
        e = _entry(obj)
        self.objects[obj.id] = obj
        node = self.root
        while True:
            _summary_add(node, e.positioned_at, obj.skills)
            if node.children is None:
                break
            node = node.children[node.quadrant(e.lat, e.lon)]
        self._leaf_store(node, e, obj.skills)
        if len(node.entries) > self.capacity and node.depth < self.max_depth:
            self._split(node)

    def _leaf_add(self, leaf: BigTreeNode, e: PostingEntry) -> None:
        skills = self.objects[e.object_id].skills
        _summary_add(leaf, e.positioned_at, skills)
        self._leaf_store(leaf, e, skills)

    def _leaf_store(self, leaf: BigTreeNode, e: PostingEntry, skills: frozenset[str]) -> None:
        leaf.entries[e.object_id] = e
        _insort(leaf.recency, e)
        for kw in skills:
            lst = leaf.postings.get(kw)
            if lst is None:
                leaf.postings[kw] = [e]
            else:
                _insort(lst, e)
        self._leaf_of[e.object_id] = leaf

    def _split(self, leaf: BigTreeNode) -> None:
        entries = list(leaf.entries.values())
        leaf.entries, leaf.postings, leaf.recency = {}, {}, []
        leaf.children = [BigTreeNode(leaf.child_bounds(q), leaf.depth + 1, leaf) for q in range(4)]
        for e in entries:
            self._leaf_add(leaf.children[leaf.quadrant(e.lat, e.lon)], e)
        for child in leaf.children:
            if len(child.entries) > self.capacity and child.depth < self.max_depth:
                self._split(child)

    def _remove(self, obj: SpatialTextualObject) -> None:
        leaf = self._leaf_of.pop(obj.id)
        e = leaf.entries.pop(obj.id)
        _discard(leaf.recency, e)
        for kw in obj.skills:
            lst = leaf.postings[kw]
            _discard(lst, e)
            if not lst:
                del leaf.postings[kw]
        del self.objects[obj.id]
        node = leaf
        while node is not None:
            _summary_remove(node, e.positioned_at, obj.skills)
            node = node.parent
        # collapse the highest ancestor that has become small enough
        target = None
        node = leaf.parent
        while node is not None and node.count <= self.capacity // 2:
            target = node
            node = node.parent
        if target is not None:
            self._collapse(target)

    def _collapse(self, node: BigTreeNode) -> None:
        entries = [e for leaf in node.iter_leaves() for e in leaf.entries.values()]
        node.children = None
        node.count, node.max_positioned_at, node.keyword_summary = 0, -1, {}
        for e in entries:
            self._leaf_add(node, e)

    def _move_in_leaf(self, leaf: BigTreeNode, old: SpatialTextualObject, new: SpatialTextualObject) -> None:
        e_old = leaf.entries[old.id]
        e_new = _entry(new)
        leaf.entries[new.id] = e_new
        _discard(leaf.recency, e_old)
        _insort(leaf.recency, e_new)
        for kw in old.skills:
            lst = leaf.postings[kw]
            _discard(lst, e_old)
            _insort(lst, e_new)
        self.objects[new.id] = new
        t = new.positioned_at
        node = leaf
        while node is not None:
            # timestamps only move forward, so maxima can only grow
            if t > node.max_positioned_at:
                node.max_positioned_at = t
            for kw in new.skills:
                s = node.keyword_summary[kw]
                if t > s[1]:
                    s[1] = t
            node = node.parent

    # -- inspection ---------------------------------------------------------

    def leaf_of(self, object_id: str) -> BigTreeNode:
        return self._leaf_of[object_id]

    def iter_nodes(self) -> Iterator[BigTreeNode]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            if n.children is not None:
                stack.extend(n.children)

    def audit(self) -> list[str]:
        """Recompute every summary from scratch and report disagreements."""
        problems: list[str] = []
        seen: set[str] = set()

        def walk(node: BigTreeNode) -> tuple[int, int, dict[str, list[int]]]:
            where = f"node{node.bounds}@{node.depth}"
            if node.children is None:
                if node.depth < self.max_depth and len(node.entries) > self.capacity:
                    problems.append(f"{where}: leaf over capacity above max depth")
                count, max_t, kws = 0, -1, {}
                for oid, e in node.entries.items():
                    obj = self.objects.get(oid)
                    if obj is None:
                        problems.append(f"{where}: dangling entry {oid!r}")
                        continue
                    seen.add(oid)
                    if self._leaf_of.get(oid) is not node:
                        problems.append(f"{where}: leaf map disagrees for {oid!r}")
                    if (e.positioned_at, e.lat, e.lon) != (obj.positioned_at, obj.lat, obj.lon):
                        problems.append(f"{where}: stale posting for {oid!r}")
                    if not node.contains(e.lat, e.lon):
                        problems.append(f"{where}: {oid!r} outside bounds")
                    count += 1
                    max_t = max(max_t, e.positioned_at)
                    for kw in obj.skills:
                        s = kws.setdefault(kw, [0, -1])
                        s[0] += 1
                        s[1] = max(s[1], e.positioned_at)
                if sorted(node.recency, key=_order) != node.recency or len(node.recency) != count:
                    problems.append(f"{where}: recency list unsorted or wrong size")
                for kw, lst in node.postings.items():
                    if sorted(lst, key=_order) != lst:
                        problems.append(f"{where}: posting list {kw!r} unsorted")
                    if len(lst) != kws.get(kw, [0])[0]:
                        problems.append(f"{where}: posting list {kw!r} has {len(lst)} entries")
                    if any(kw not in self.objects[p.object_id].skills for p in lst if p.object_id in self.objects):
                        problems.append(f"{where}: posting list {kw!r} holds non-matching object")
                if set(node.postings) != set(kws):
                    problems.append(f"{where}: posting keywords differ from object skills")
            else:
                if node.entries or node.postings or node.recency:
                    problems.append(f"{where}: internal node stores entries")
                count, max_t, kws = 0, -1, {}
                for q, child in enumerate(node.children):
                    if child.parent is not node or child.bounds != node.child_bounds(q):
                        problems.append(f"{where}: child {q} misplaced")
                    c_count, c_max, c_kws = walk(child)
                    count += c_count
                    max_t = max(max_t, c_max)
                    for kw, (n, t) in c_kws.items():
                        s = kws.setdefault(kw, [0, -1])
                        s[0] += n
                        s[1] = max(s[1], t)
            if node.count != count:
                problems.append(f"{where}: count {node.count} != {count}")
            if node.max_positioned_at != max_t:
                problems.append(f"{where}: max_positioned_at {node.max_positioned_at} != {max_t}")
            if node.keyword_summary != kws:
                problems.append(f"{where}: keyword summary mismatch")
            return count, max_t, kws

        walk(self.root)
        if seen != set(self.objects):
            problems.append(f"{len(set(self.objects) - seen)} objects unreachable from the root")
        return problems


def _entry(obj: SpatialTextualObject) -> PostingEntry:
    return PostingEntry(obj.id, obj.positioned_at, obj.lat, obj.lon)


def _summary_add(node: BigTreeNode, t: int, skills: Iterable[str]) -> None:
    node.count += 1
    if t > node.max_positioned_at:
        node.max_positioned_at = t
    summary = node.keyword_summary
    for kw in skills:
        s = summary.get(kw)
        if s is None:
            summary[kw] = [1, t]
        else:
            s[0] += 1
            if t > s[1]:
                s[1] = t


def _summary_remove(node: BigTreeNode, t: int, skills: Iterable[str]) -> None:
    node.count -= 1
    summary = node.keyword_summary
    for kw in skills:
        s = summary[kw]
        s[0] -= 1
        if s[0] == 0:
            del summary[kw]
        elif s[1] == t:
            s[1] = _keyword_max(node, kw)
    if node.count == 0:
        node.max_positioned_at = -1
    elif node.max_positioned_at == t:
        if node.children is None:
            node.max_positioned_at = node.recency[0].positioned_at
        else:
            node.max_positioned_at = max(c.max_positioned_at for c in node.children)


def _keyword_max(node: BigTreeNode, kw: str) -> int:
    if node.children is None:
        return node.postings[kw][0].positioned_at
    return max((c.keyword_summary[kw][1] for c in node.children if kw in c.keyword_summary), default=-1)


def _recompute_summary(node: BigTreeNode) -> None:
    node.count = sum(c.count for c in node.children)
    node.max_positioned_at = max(c.max_positioned_at for c in node.children)
    kws: dict[str, list[int]] = {}
    for c in node.children:
        for kw, (n, t) in c.keyword_summary.items():
            s = kws.get(kw)
            if s is None:
                kws[kw] = [n, t]
            else:
                s[0] += n
                if t > s[1]:
                    s[1] = t
    node.keyword_summary = kws


def node_spatial_max(node: BigTreeNode, lat: float, lon: float, max_distance_m: float) -> float:
    d = box_distance_lower_bound_m(lat, lon, node.lat_min, node.lat_max, node.lon_min, node.lon_max)
    return spatial_score_from_distance(d, max_distance_m)


def node_upper_bound(node: BigTreeNode, query: ServiceQuery, params: ScoringParams | None = None) -> float:
    """Score no object under ``node`` can exceed; 0.0 for an empty node."""
    if node.count == 0:
        return 0.0
    p = resolve_params(query, params)
    kws = query.keyword_set
    summary = node.keyword_summary
    textual = sum(1 for kw in kws if kw in summary) / len(kws)
    spatial = node_spatial_max(node, query.lat, query.lon, p.max_distance_m)
    recency = recency_score(query.issued_at, node.max_positioned_at, p.lambda_base, p.recency_unit_s)
    return combine(p.alpha, spatial, textual, recency)
