"""Temporal spatial-keyword scoring.

The combined score of an object for a query is::

    total = (alpha * spatial + (1 - alpha) * textual) * recency

with ``spatial`` a linear distance decay clamped at ``max_distance_m``,
``textual`` the fraction of query keywords the object covers, and
``recency = lambda_base ** -(age / recency_unit_s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet

from .errors import ValidationError
from .geo import haversine_m
from .model import ScoreBreakdown, ServiceQuery, SpatialTextualObject

DEFAULT_RECENCY_UNIT_S = 3600.0


@dataclass(frozen=True)
class ScoringParams:
    alpha: float = 0.5
    lambda_base: float = 2.0
    max_distance_m: float = 10_000.0
    recency_unit_s: float = DEFAULT_RECENCY_UNIT_S

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha {self.alpha} not in [0, 1]", code="BAD_ALPHA")
        if not (self.lambda_base > 1.0) or not math.isfinite(self.lambda_base):
            raise ValidationError(f"lambda_base {self.lambda_base} must exceed 1", code="BAD_LAMBDA")
        if not (self.max_distance_m > 0.0) or not math.isfinite(self.max_distance_m):
            raise ValidationError(f"max_distance_m {self.max_distance_m} must be positive", code="BAD_DMAX")
        if not (self.recency_unit_s > 0.0) or not math.isfinite(self.recency_unit_s):
            raise ValidationError(f"recency_unit_s {self.recency_unit_s} must be positive", code="BAD_UNIT")

    @classmethod
    def for_query(cls, query: ServiceQuery, recency_unit_s: float = DEFAULT_RECENCY_UNIT_S) -> ScoringParams:
        return cls(query.alpha, query.lambda_base, query.max_distance_m, recency_unit_s)


def resolve_params(query: ServiceQuery, params: ScoringParams | None) -> ScoringParams:
    return ScoringParams.for_query(query) if params is None else params


def spatial_score_from_distance(dist_m: float, max_distance_m: float) -> float:
    s = 1.0 - dist_m / max_distance_m
    return s if s > 0.0 else 0.0


def spatial_score(query_loc: tuple[float, float], obj_loc: tuple[float, float], max_distance_m: float) -> float:
    if not max_distance_m > 0.0:
        raise ValidationError(f"max_distance_m {max_distance_m} must be positive", code="BAD_DMAX")
    d = haversine_m(query_loc[0], query_loc[1], obj_loc[0], obj_loc[1])
    return spatial_score_from_distance(d, max_distance_m)


def textual_score(query_kw: AbstractSet[str], obj_skills: AbstractSet[str]) -> float:
    """Share of query keywords present in the object's skills."""
    if not query_kw:
        raise ValidationError("query has no keywords", code="EMPTY_QUERY")
    return len(query_kw & obj_skills) / len(query_kw)


def recency_score(query_t: float, obj_t: float, lambda_base: float, recency_unit_s: float = DEFAULT_RECENCY_UNIT_S) -> float:
    """``lambda_base ** -age`` with age in units; future timestamps count as fresh."""
    if not lambda_base > 1.0:
        raise ValidationError(f"lambda_base {lambda_base} must exceed 1", code="BAD_LAMBDA")
    age = query_t - obj_t
    if age <= 0:
        return 1.0
    return lambda_base ** -(age / recency_unit_s)


def combine(alpha: float, spatial: float, textual: float, recency: float) -> float:
    return (alpha * spatial + (1.0 - alpha) * textual) * recency


def score_parts(
    qlat: float,
    qlon: float,
    qt: int,
    qkw: frozenset[str],
    obj: SpatialTextualObject,
    p: ScoringParams,
) -> tuple[float, float, float, float]:
    """(spatial, textual, recency, total). The one scalar path every ranker shares."""
    sl = spatial_score_from_distance(haversine_m(qlat, qlon, obj.lat, obj.lon), p.max_distance_m)
    sk = len(qkw & obj.skills) / len(qkw)
    st = recency_score(qt, obj.positioned_at, p.lambda_base, p.recency_unit_s)
    return sl, sk, st, combine(p.alpha, sl, sk, st)


def combined_score(
    query: ServiceQuery, obj: SpatialTextualObject, params: ScoringParams | None = None
) -> ScoreBreakdown:
    """Score ``obj`` for ``query``. ``params`` defaults to the query's own knobs."""
    p = resolve_params(query, params)
    return ScoreBreakdown(*score_parts(query.lat, query.lon, query.issued_at, query.keyword_set, obj, p))
