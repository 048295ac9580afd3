"""Domain value types shared across the engine.

Objects, queries and events are frozen dataclasses. ``validate_*`` functions
turn loosely typed records (decoded JSON, CLI input) into canonical values
and are idempotent on their own output.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import ValidationError

LAT_RANGE = (-90.0, 90.0)
LON_RANGE = (-180.0, 180.0)


def canonical_tokens(tokens: Iterable[str]) -> tuple[str, ...]:
    """Lowercase, trim and dedupe tokens, keeping first-seen order."""
    if isinstance(tokens, str):
        tokens = tokens.split(",")
    out: dict[str, None] = {}
    for tok in tokens:
        if not isinstance(tok, str):
            raise ValidationError(f"token {tok!r} is not a string", code="EMPTY_SKILLS")
        tok = tok.strip().lower()
        if tok:
            out.setdefault(tok, None)
    return tuple(out)


def check_coord(lat: Any, lon: Any) -> tuple[float, float]:
    try:
        lat_f, lon_f = float(lat), float(lon)
    except (TypeError, ValueError):
        raise ValidationError(f"bad coordinate ({lat!r}, {lon!r})", code="OUT_OF_RANGE_COORD") from None
    if not (LAT_RANGE[0] <= lat_f <= LAT_RANGE[1]) or not (LON_RANGE[0] <= lon_f <= LON_RANGE[1]):
        raise ValidationError(f"coordinate ({lat_f}, {lon_f}) out of range", code="OUT_OF_RANGE_COORD")
    return lat_f, lon_f


def check_timestamp(t: Any) -> int:
    """Timestamps are non-negative integer seconds since epoch."""
    if isinstance(t, bool) or not isinstance(t, (int, float)):
        raise ValidationError(f"timestamp {t!r} is not a number", code="BAD_TIMESTAMP")
    if isinstance(t, float):
        if not math.isfinite(t) or t != int(t):
            raise ValidationError(f"timestamp {t!r} is not integral", code="BAD_TIMESTAMP")
        t = int(t)
    if t < 0:
        raise ValidationError(f"timestamp {t} is negative", code="BAD_TIMESTAMP")
    return t


@dataclass(frozen=True)
class SpatialTextualObject:
    """A turk: skill tokens, last known position and when it was sensed."""

    id: str
    skills: frozenset[str]
    lat: float
    lon: float
    positioned_at: int

    @property
    def position(self) -> tuple[float, float]:
        return (self.lat, self.lon)

    def moved(self, lat: float, lon: float, positioned_at: int) -> SpatialTextualObject:
        return SpatialTextualObject(self.id, self.skills, lat, lon, positioned_at)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "skills": sorted(self.skills),
            "lat": self.lat,
            "lon": self.lon,
            "t": self.positioned_at,
        }


def validate_object(raw: Mapping[str, Any] | SpatialTextualObject) -> SpatialTextualObject:
    """Build a canonical object from a record with keys id, skills, lat, lon, t."""
    if isinstance(raw, SpatialTextualObject):
        raw = raw.to_record()
    missing = [k for k in ("id", "skills", "lat", "lon", "t") if k not in raw]
    if missing:
        raise ValidationError(f"record missing fields {missing}", code="MISSING_FIELD")
    oid = raw["id"]
    if not isinstance(oid, str) or not oid:
        raise ValidationError(f"bad object id {oid!r}", code="BAD_ID")
    skills = canonical_tokens(raw["skills"])
    if not skills:
        raise ValidationError(f"object {oid!r} has no skills", code="EMPTY_SKILLS")
    lat, lon = check_coord(raw["lat"], raw["lon"])
    t = check_timestamp(raw["t"])
    return SpatialTextualObject(oid, frozenset(skills), lat, lon, t)


def encode_object(obj: SpatialTextualObject) -> str:
    return json.dumps(obj.to_record(), separators=(",", ":"), sort_keys=True)


def decode_object(line: str) -> SpatialTextualObject:
    return validate_object(json.loads(line))


@dataclass(frozen=True)
class ServiceQuery:
    """A service request: keywords, where, when, and ranking knobs.

    ``keywords`` keeps the caller's order (the first one picks the skill
    domain for recommendation); matching treats it as a set.
    """

    keywords: tuple[str, ...]
    lat: float
    lon: float
    issued_at: int
    k: int = 10
    alpha: float = 0.5
    lambda_base: float = 2.0
    max_distance_m: float = 10_000.0

    def __post_init__(self):
        kws = canonical_tokens(self.keywords)
        if not kws:
            raise ValidationError("query has no keywords", code="EMPTY_QUERY")
        object.__setattr__(self, "keywords", kws)
        lat, lon = check_coord(self.lat, self.lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "issued_at", check_timestamp(self.issued_at))
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k!r}", code="BAD_K")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha {self.alpha} not in [0, 1]", code="BAD_ALPHA")
        if not (self.lambda_base > 1.0) or not math.isfinite(self.lambda_base):
            raise ValidationError(f"lambda_base {self.lambda_base} must exceed 1", code="BAD_LAMBDA")
        if not (self.max_distance_m > 0.0) or not math.isfinite(self.max_distance_m):
            raise ValidationError(f"max_distance_m {self.max_distance_m} must be positive", code="BAD_DMAX")

    @property
    def keyword_set(self) -> frozenset[str]:
        return frozenset(self.keywords)

    @property
    def location(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class ScoreBreakdown:
    spatial: float
    textual: float
    recency: float
    total: float


class EventKind(str, enum.Enum):
    REGISTER = "REGISTER"
    PROFILE_UPDATE = "PROFILE_UPDATE"
    LOCATION_UPDATE = "LOCATION_UPDATE"
    RATING = "RATING"
    RESPONSE = "RESPONSE"


@dataclass(frozen=True)
class TurkEvent:
    """One entry of the turk action log.

    Payloads by kind:

    * REGISTER: ``skills``, ``lat``, ``lon``
    * PROFILE_UPDATE: ``add`` and/or ``remove`` skill lists, or ``skills``
      to replace the set outright
    * LOCATION_UPDATE: ``lat``, ``lon``
    * RATING: ``user_id``, ``rating``, ``context`` (see recommender)
    * RESPONSE: ``session_id``, ``verdict``
    """

    kind: EventKind
    object_id: str
    at: int
    payload: Mapping[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"kind": self.kind.value, "object_id": self.object_id, "at": self.at, "payload": dict(self.payload)}


def validate_event(raw: Mapping[str, Any] | TurkEvent) -> TurkEvent:
    if isinstance(raw, TurkEvent):
        raw = raw.to_record()
    try:
        kind = EventKind(raw["kind"])
    except (KeyError, ValueError):
        raise ValidationError(f"bad event kind in {raw!r}", code="BAD_EVENT") from None
    oid = raw.get("object_id")
    if not isinstance(oid, str) or not oid:
        raise ValidationError(f"bad event object_id {oid!r}", code="BAD_EVENT")
    at = check_timestamp(raw.get("at"))
    payload = raw.get("payload") or {}
    if not isinstance(payload, Mapping):
        raise ValidationError("event payload must be an object", code="BAD_EVENT")
    payload = dict(payload)
    if kind is EventKind.REGISTER:
        skills = canonical_tokens(payload.get("skills", ()))
        if not skills:
            raise ValidationError(f"REGISTER for {oid!r} has no skills", code="EMPTY_SKILLS")
        lat, lon = check_coord(payload.get("lat"), payload.get("lon"))
        payload = {"skills": list(skills), "lat": lat, "lon": lon}
    elif kind is EventKind.LOCATION_UPDATE:
        lat, lon = check_coord(payload.get("lat"), payload.get("lon"))
        payload = {"lat": lat, "lon": lon}
    elif kind is EventKind.PROFILE_UPDATE:
        clean = {}
        for key in ("skills", "add", "remove"):
            if key in payload:
                clean[key] = list(canonical_tokens(payload[key]))
        if not clean:
            raise ValidationError("PROFILE_UPDATE carries no skill change", code="BAD_EVENT")
        payload = clean
    return TurkEvent(kind, oid, at, payload)


def encode_event(event: TurkEvent) -> str:
    return json.dumps(event.to_record(), separators=(",", ":"), sort_keys=True)


def decode_event(line: str) -> TurkEvent:
    return validate_event(json.loads(line))
