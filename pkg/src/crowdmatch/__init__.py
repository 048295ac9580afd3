"""Spatial-keyword search, recommendation and dispatch for mobile crowd services."""

from .errors import CrowdMatchError
from .index import BigTree, node_upper_bound
from .model import ScoreBreakdown, ServiceQuery, SpatialTextualObject, TurkEvent, validate_object
from .scoring import ScoringParams, combined_score, recency_score, spatial_score, textual_score
from .topk import QueryCursor, QueryEngine, RankedCandidate, open_cursor, top_k, top_k_oracle

__version__ = "0.1.0"

__all__ = [
    "BigTree",
    "CrowdMatchError",
    "QueryCursor",
    "QueryEngine",
    "RankedCandidate",
    "ScoreBreakdown",
    "ScoringParams",
    "ServiceQuery",
    "SpatialTextualObject",
    "TurkEvent",
    "combined_score",
    "node_upper_bound",
    "open_cursor",
    "recency_score",
    "spatial_score",
    "textual_score",
    "top_k",
    "top_k_oracle",
    "validate_object",
]
