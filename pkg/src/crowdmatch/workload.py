"""Synthetic mobile-crowd workloads.

Objects register at ``start_time`` and then report positions while moving
by random waypoint inside the bounding box: pick a waypoint and a speed,
walk there in a straight line, repeat. Skills and query keywords follow a
Zipf law over a ``skill0001 ...`` vocabulary. With ``clusters > 0``, both
start points and waypoints are drawn around per-cluster centers, and
queries are issued near those centers too.

All randomness comes from one numpy generator seeded with ``seed``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Mapping

import numpy as np

from .errors import ValidationError
from .geo import EARTH_RADIUS_M
from .model import EventKind, ServiceQuery, TurkEvent

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class WorkloadSpec:
    n_objects: int = 1000
    bbox: tuple[float, float, float, float] = (30.0, 31.0, 120.0, 121.0)  # lat_min, lat_max, lon_min, lon_max
    vocab_size: int = 200
    zipf_s: float = 1.0
    skills_per_object: tuple[int, int] = (1, 4)
    speed_range: tuple[float, float] = (0.5, 15.0)  # m/s
    update_interval: str = "fixed"  # or "exponential"
    update_interval_s: float = 30.0
    query_rate: float = 1.0  # queries per second
    query_keywords: tuple[int, int] = (1, 3)
    duration_s: int = 300
    seed: int = 0
    start_time: int = 1_700_000_000
    clusters: int = 0
    cluster_spread: float = 0.02  # gaussian sigma as a fraction of bbox width
    query_k: int = 10
    query_alpha: float = 0.5
    query_lambda: float = 2.0
    query_dmax_m: float | None = None  # default: 1% of the bbox width

    def __post_init__(self):
        lat_min, lat_max, lon_min, lon_max = self.bbox
        problems = []
        if self.n_objects < 1:
            problems.append("n_objects must be positive")
        if not (-90 <= lat_min < lat_max <= 90 and -180 <= lon_min < lon_max <= 180):
            problems.append(f"bad bbox {self.bbox}")
        if self.vocab_size < 1 or self.zipf_s < 0:
            problems.append("vocab_size must be positive and zipf_s non-negative")
        lo, hi = self.skills_per_object
        if not (1 <= lo <= hi <= self.vocab_size):
            problems.append(f"bad skills_per_object {self.skills_per_object}")
        lo, hi = self.query_keywords
        if not (1 <= lo <= hi <= self.vocab_size):
            problems.append(f"bad query_keywords {self.query_keywords}")
        if not (0 <= self.speed_range[0] <= self.speed_range[1]):
            problems.append(f"bad speed_range {self.speed_range}")
        if self.update_interval not in ("fixed", "exponential") or not self.update_interval_s > 0:
            problems.append("update_interval must be fixed|exponential with a positive mean")
        if self.query_rate < 0 or self.duration_s < 0 or self.start_time < 0:
            problems.append("query_rate, duration_s and start_time must be non-negative")
        if self.clusters < 0 or self.cluster_spread <= 0:
            problems.append("clusters must be >= 0 and cluster_spread positive")
        if not (0 <= self.query_alpha <= 1) or self.query_lambda <= 1 or self.query_k < 1:
            problems.append("bad query parameters")
        if self.query_dmax_m is not None and not self.query_dmax_m > 0:
            problems.append("query_dmax_m must be positive")
        if not (0 <= self.seed < 2**64):
            problems.append("seed must fit in 64 bits")
        if problems:
            raise ValidationError("; ".join(problems), code="BAD_SPEC")

    @property
    def width_m(self) -> float:
        lat_min, lat_max, lon_min, lon_max = self.bbox
        mid = (lat_min + lat_max) * 0.5 * _DEG
        return (lon_max - lon_min) * _DEG * EARTH_RADIUS_M * math.cos(mid)

    @property
    def dmax_m(self) -> float:
        return self.query_dmax_m if self.query_dmax_m is not None else 0.01 * self.width_m

    @classmethod
    def from_dict(cls, raw: Mapping) -> WorkloadSpec:
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ValidationError(f"unknown workload fields {sorted(extra)}", code="BAD_SPEC")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc), code="BAD_SPEC") from None

    @classmethod
    def from_json(cls, path) -> WorkloadSpec:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


class _Mover:
    __slots__ = ("lat", "lon", "wlat", "wlon", "speed", "t")

    def __init__(self, lat, lon, wlat, wlon, speed, t):
        self.lat, self.lon, self.wlat, self.wlon, self.speed, self.t = lat, lon, wlat, wlon, speed, t


class _Generator:
    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        ranks = np.arange(1, spec.vocab_size + 1, dtype=float)
        w = ranks ** -spec.zipf_s
        self.zipf = w / w.sum()
        self.vocab = [f"skill{i:04d}" for i in range(1, spec.vocab_size + 1)]
        lat_min, lat_max, lon_min, lon_max = spec.bbox
        if spec.clusters:
            self.centers = np.column_stack([
                self.rng.uniform(lat_min, lat_max, spec.clusters),
                self.rng.uniform(lon_min, lon_max, spec.clusters),
            ])
            self.sigma = spec.cluster_spread * (lon_max - lon_min)
        else:
            self.centers = None

    def point(self, cluster: int) -> tuple[float, float]:
        lat_min, lat_max, lon_min, lon_max = self.spec.bbox
        if self.centers is None:
            return float(self.rng.uniform(lat_min, lat_max)), float(self.rng.uniform(lon_min, lon_max))
        c = self.centers[cluster]
        lat = float(np.clip(self.rng.normal(c[0], self.sigma), lat_min, lat_max))
        lon = float(np.clip(self.rng.normal(c[1], self.sigma), lon_min, lon_max))
        return lat, lon

    def keywords(self, lo: int, hi: int) -> list[str]:
        n = int(self.rng.integers(lo, hi + 1))
        picks = self.rng.choice(self.spec.vocab_size, size=n, replace=False, p=self.zipf)
        return [self.vocab[i] for i in picks]

    def speed(self) -> float:
        lo, hi = self.spec.speed_range
        return float(self.rng.uniform(lo, hi)) if hi > lo else float(lo)

    def interval(self) -> int:
        s = self.spec
        if s.update_interval == "fixed":
            return max(1, int(round(s.update_interval_s)))
        return max(1, int(math.ceil(self.rng.exponential(s.update_interval_s))))

    def move(self, m: _Mover, cluster: int, t: int) -> None:
        """Advance ``m`` along its waypoint path up to time ``t``."""
        remaining = float(t - m.t)
        m.t = t
        if m.speed <= 0.0:
            return
        while remaining > 0.0:
            coslat = max(math.cos(m.lat * _DEG), 1e-6)
            dy = (m.wlat - m.lat) * _DEG * EARTH_RADIUS_M
            dx = (m.wlon - m.lon) * _DEG * EARTH_RADIUS_M * coslat
            dist = math.hypot(dx, dy)
            step = m.speed * remaining
            if step < dist:
                f = step / dist
                m.lat += (m.wlat - m.lat) * f
                m.lon += (m.wlon - m.lon) * f
                return
            m.lat, m.lon = m.wlat, m.wlon
            remaining -= dist / m.speed
            m.wlat, m.wlon = self.point(cluster)
            m.speed = self.speed()
            if m.speed <= 0.0:
                return

    def run(self) -> Iterator[TurkEvent | ServiceQuery]:
        spec = self.spec
        t0 = spec.start_time
        movers: list[_Mover] = []
        cluster_of: list[int] = []
        for i in range(spec.n_objects):
            cluster = int(self.rng.integers(spec.clusters)) if spec.clusters else 0
            lat, lon = self.point(cluster)
            wlat, wlon = self.point(cluster)
            skills = self.keywords(*spec.skills_per_object)
            movers.append(_Mover(lat, lon, wlat, wlon, self.speed(), t0))
            cluster_of.append(cluster)
            yield TurkEvent(EventKind.REGISTER, _oid(i), t0, {"skills": skills, "lat": lat, "lon": lon})

        end = t0 + spec.duration_s
        heap: list[tuple[int, int, int]] = []  # (time, 0=update / 1=query, object index or query seq)
        for i in range(spec.n_objects):
            if spec.update_interval == "fixed":
                first = t0 + int(self.rng.integers(1, self.interval() + 1))
            else:
                first = t0 + self.interval()
            if first <= end:
                heap.append((first, 0, i))
        heapq.heapify(heap)
        if spec.query_rate > 0:
            qt = t0 + self._query_gap()
            if qt <= end:
                heapq.heappush(heap, (qt, 1, 0))

        while heap:
            t, kind, i = heapq.heappop(heap)
            if kind == 0:
                m = movers[i]
                self.move(m, cluster_of[i], t)
                yield TurkEvent(EventKind.LOCATION_UPDATE, _oid(i), t, {"lat": m.lat, "lon": m.lon})
                nxt = t + self.interval()
                if nxt <= end:
                    heapq.heappush(heap, (nxt, 0, i))
            else:
                yield self._query(t)
                nxt = t + self._query_gap()
                if nxt <= end:
                    heapq.heappush(heap, (nxt, 1, i + 1))

    def _query_gap(self) -> int:
        return max(1, int(math.ceil(self.rng.exponential(1.0 / self.spec.query_rate))))

    def _query(self, t: int) -> ServiceQuery:
        spec = self.spec
        cluster = int(self.rng.integers(spec.clusters)) if spec.clusters else 0
        lat, lon = self.point(cluster)
        return ServiceQuery(
            tuple(self.keywords(*spec.query_keywords)), lat, lon, t,
            k=spec.query_k, alpha=spec.query_alpha, lambda_base=spec.query_lambda, max_distance_m=spec.dmax_m,
        )


def _oid(i: int) -> str:
    return f"t{i:07d}"


def generate_workload(spec: WorkloadSpec) -> Iterator[TurkEvent | ServiceQuery]:
    """Time-ordered stream of turk events interleaved with service queries."""
    return _Generator(spec).run()
