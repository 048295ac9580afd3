"""Context-aware rating prediction from explicit ratings.

The model is biased matrix factorization with additive context biases::

    r_hat(u, v, c) = mu + b_u + b_v + sum_j b[c_j] + p_u . q_v

where ``c`` is a (time bucket, location cell, skill domain) triple. It is
fit by plain SGD on squared error, with L2 regularization applied per
rating occurrence, so the objective is::

    sum over ratings of  0.5 * e**2 + 0.5 * gamma * (b_u**2 + b_v**2
                          + sum_j b[c_j]**2 + |p_u|**2 + |q_v|**2)

``mu`` is the training mean and is not learned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .index import WORLD
from .model import ServiceQuery, check_coord, check_timestamp

RATING_MIN, RATING_MAX = 1.0, 5.0
TIME_BUCKETS = ("night", "morning", "afternoon", "evening")
CELL_DEPTH = 8
MODEL_FORMAT = "cars-model"
MODEL_VERSION = 1


def time_bucket(ts: int, utc_offset_s: int = 0) -> str:
    """night 0-5, morning 6-11, afternoon 12-17, evening 18-23 (local hour)."""
    hour = ((ts + utc_offset_s) // 3600) % 24
    return TIME_BUCKETS[hour // 6]


def location_cell(lat: float, lon: float, depth: int = CELL_DEPTH) -> str:
    """Id of the depth-``depth`` world quadtree cell holding the point.

    One quadrant digit per level, using the index's split rule.
    """
    lat_min, lat_max, lon_min, lon_max = WORLD
    digits = []
    for _ in range(depth):
        mid_lat = (lat_min + lat_max) * 0.5
        mid_lon = (lon_min + lon_max) * 0.5
        q = 0
        if lat >= mid_lat:
            q += 2
            lat_min = mid_lat
        else:
            lat_max = mid_lat
        if lon >= mid_lon:
            q += 1
            lon_min = mid_lon
        else:
            lon_max = mid_lon
        digits.append(str(q))
    return "q" + "".join(digits)


@dataclass(frozen=True)
class ContextVector:
    time_bucket: str
    location_cell: str
    skill_domain: str

    def __post_init__(self):
        if self.time_bucket not in TIME_BUCKETS:
            raise ValidationError(f"unknown time bucket {self.time_bucket!r}", code="BAD_CONTEXT")
        if not self.location_cell or not self.skill_domain:
            raise ValidationError("context needs a location cell and a skill domain", code="BAD_CONTEXT")

    def keys(self) -> tuple[str, str, str]:
        return (f"time:{self.time_bucket}", f"cell:{self.location_cell}", f"domain:{self.skill_domain}")

    def to_record(self) -> dict:
        return {"time_bucket": self.time_bucket, "location_cell": self.location_cell, "skill_domain": self.skill_domain}

    @classmethod
    def from_record(cls, raw: Mapping) -> ContextVector:
        try:
            return cls(raw["time_bucket"], raw["location_cell"], raw["skill_domain"])
        except KeyError as exc:
            raise ValidationError(f"context missing {exc}", code="BAD_CONTEXT") from None


def make_context(
    ts: int,
    lat: float,
    lon: float,
    keyword: str,
    taxonomy: Mapping[str, str] | None = None,
    utc_offset_s: int = 0,
) -> ContextVector:
    domain = (taxonomy or {}).get(keyword, keyword)
    return ContextVector(time_bucket(ts, utc_offset_s), location_cell(lat, lon), domain)


def context_for_query(query: ServiceQuery, taxonomy: Mapping[str, str] | None = None, utc_offset_s: int = 0) -> ContextVector:
    return make_context(query.issued_at, query.lat, query.lon, query.keywords[0], taxonomy, utc_offset_s)


@dataclass(frozen=True)
class RatingRecord:
    user_id: str
    turk_id: str
    context: ContextVector
    rating: float
    at: int = 0

    def __post_init__(self):
        if not self.user_id or not self.turk_id:
            raise ValidationError("rating needs user and turk ids", code="BAD_RATING")
        if not (RATING_MIN <= self.rating <= RATING_MAX):
            raise ValidationError(f"rating {self.rating} outside [1, 5]", code="BAD_RATING")
        check_timestamp(self.at)

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "turk_id": self.turk_id,
            "context": self.context.to_record(),
            "rating": self.rating,
            "at": self.at,
        }

    @classmethod
    def from_record(cls, raw: Mapping) -> RatingRecord:
        """Accepts an explicit ``context`` or ``lat``/``lon``/``skill`` to derive one."""
        ctx = raw.get("context")
        at = check_timestamp(raw.get("at", 0))
        if isinstance(ctx, Mapping):
            context = ContextVector.from_record(ctx)
        else:
            lat, lon = check_coord(raw.get("lat"), raw.get("lon"))
            skill = str(raw.get("skill", "")).strip().lower()
            if not skill:
                raise ValidationError("rating needs a context or a skill", code="BAD_CONTEXT")
            context = make_context(at, lat, lon, skill)
        try:
            rating = float(raw["rating"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"bad rating in {raw!r}", code="BAD_RATING") from None
        return cls(str(raw.get("user_id", "")), str(raw.get("turk_id", "")), context, rating, at)


@dataclass(frozen=True)
class CarsHyper:
    factors: int = 8
    learning_rate: float = 0.002
    regularization: float = 0.02
    epochs: int = 30

    def validate(self) -> None:
        ok = (
            isinstance(self.factors, int) and self.factors >= 0
            and self.learning_rate > 0 and math.isfinite(self.learning_rate)
            and self.regularization >= 0 and math.isfinite(self.regularization)
            and isinstance(self.epochs, int) and self.epochs >= 1
        )
        if not ok:
            raise ValidationError(f"bad hyperparameters {self}", code="BAD_HYPERPARAMS")


@dataclass
class CarsModel:
    mu: float
    hyper: CarsHyper
    user_bias: dict[str, float] = field(default_factory=dict)
    turk_bias: dict[str, float] = field(default_factory=dict)
    context_bias: dict[str, float] = field(default_factory=dict)
    user_factors: dict[str, np.ndarray] = field(default_factory=dict)
    turk_factors: dict[str, np.ndarray] = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)

    def raw_predict(self, user_id: str, turk_id: str, context: ContextVector) -> float:
        r = self.mu + self.user_bias.get(user_id, 0.0) + self.turk_bias.get(turk_id, 0.0)
        for key in context.keys():
            r += self.context_bias.get(key, 0.0)
        p = self.user_factors.get(user_id)
        q = self.turk_factors.get(turk_id)
        if p is not None and q is not None:
            r += float(np.dot(p, q))
        return r

    def predict(self, user_id: str, turk_id: str, context: ContextVector) -> float:
        return min(RATING_MAX, max(RATING_MIN, self.raw_predict(user_id, turk_id, context)))


def train(ratings: Sequence[RatingRecord], hyper: CarsHyper | None = None, seed: int = 0) -> CarsModel:
    """SGD fit; identical inputs and seed give a bit-identical model."""
    hyper = hyper or CarsHyper()
    hyper.validate()
    if not ratings:
        raise ValidationError("no ratings to train on", code="EMPTY_TRAINING_SET")
    rng = np.random.default_rng(seed)
    mu = math.fsum(r.rating for r in ratings) / len(ratings)
    model = CarsModel(mu=mu, hyper=hyper)
    f = hyper.factors
    for uid in sorted({r.user_id for r in ratings}):
        model.user_bias[uid] = 0.0
        model.user_factors[uid] = rng.uniform(-0.01, 0.01, f)
    for vid in sorted({r.turk_id for r in ratings}):
        model.turk_bias[vid] = 0.0
        model.turk_factors[vid] = rng.uniform(-0.01, 0.01, f)
    for r in ratings:
        for key in r.context.keys():
            model.context_bias.setdefault(key, 0.0)

    for _ in range(hyper.epochs):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                _sgd_epoch(model, ratings, rng.permutation(len(ratings)))
                loss = objective(model, ratings)
        except OverflowError:
            loss = math.inf
        if not math.isfinite(loss):
            raise ValidationError(f"training diverged with {hyper}", code="BAD_HYPERPARAMS")
        model.loss_history.append(loss)
    return model


def _sgd_epoch(model: CarsModel, ratings: Sequence[RatingRecord], order) -> None:
    lr, reg = model.hyper.learning_rate, model.hyper.regularization
    bu, bv, bc = model.user_bias, model.turk_bias, model.context_bias
    P, Q = model.user_factors, model.turk_factors
    f = model.hyper.factors
    for i in order:
        r = ratings[i]
        u, v = r.user_id, r.turk_id
        pu, qv = P[u], Q[v]
        e = r.rating - model.raw_predict(u, v, r.context)
        bu[u] += lr * (e - reg * bu[u])
        bv[v] += lr * (e - reg * bv[v])
        for key in r.context.keys():
            bc[key] += lr * (e - reg * bc[key])
        if f:
            P[u] = pu + lr * (e * qv - reg * pu)
            Q[v] = qv + lr * (e * pu - reg * qv)


def objective(model: CarsModel, ratings: Iterable[RatingRecord]) -> float:
    reg = model.hyper.regularization
    total = 0.0
    for r in ratings:
        e = r.rating - model.raw_predict(r.user_id, r.turk_id, r.context)
        penalty = model.user_bias.get(r.user_id, 0.0) ** 2 + model.turk_bias.get(r.turk_id, 0.0) ** 2
        penalty += sum(model.context_bias.get(k, 0.0) ** 2 for k in r.context.keys())
        if r.user_id in model.user_factors and r.turk_id in model.turk_factors:
            penalty += float(np.dot(model.user_factors[r.user_id], model.user_factors[r.user_id]))
            penalty += float(np.dot(model.turk_factors[r.turk_id], model.turk_factors[r.turk_id]))
        total += 0.5 * e * e + 0.5 * reg * penalty
    return total


def rmse(model: CarsModel, ratings: Sequence[RatingRecord]) -> float:
    err = [(model.predict(r.user_id, r.turk_id, r.context) - r.rating) ** 2 for r in ratings]
    return math.sqrt(sum(err) / len(err))


def recommend(
    model: CarsModel,
    user_id: str,
    query: ServiceQuery,
    candidate_pool: Iterable[str],
    exclude: Iterable[str] = (),
    m: int = 10,
    taxonomy: Mapping[str, str] | None = None,
    utc_offset_s: int = 0,
) -> list[tuple[str, float]]:
    """Top ``m`` turks by predicted rating under the query's context."""
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}", code="BAD_M")
    ctx = context_for_query(query, taxonomy, utc_offset_s)
    skip = set(exclude)
    scored = [(t, model.predict(user_id, t, ctx)) for t in set(candidate_pool) if t not in skip]
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored[:m]


# -- gradient verification ---------------------------------------------------


def _param_slots(model: CarsModel) -> list[tuple[dict, str, int | None]]:
    slots: list[tuple[dict, str, int | None]] = []
    for d in (model.user_bias, model.turk_bias, model.context_bias):
        slots.extend((d, key, None) for key in sorted(d))
    for d in (model.user_factors, model.turk_factors):
        for key in sorted(d):
            slots.extend((d, key, j) for j in range(len(d[key])))
    return slots


def _get(slot) -> float:
    d, key, j = slot
    return d[key] if j is None else float(d[key][j])


def _set(slot, value: float) -> None:
    d, key, j = slot
    if j is None:
        d[key] = value
    else:
        d[key][j] = value


def analytic_gradient(model: CarsModel, ratings: Iterable[RatingRecord]) -> dict[tuple[int, str, int | None], float]:
    """Gradient of :func:`objective`; the sum of the per-rating SGD directions."""
    reg = model.hyper.regularization
    grads: dict[tuple[int, str, int | None], float] = {}

    def add(which: int, key: str, j: int | None, g: float) -> None:
        grads[(which, key, j)] = grads.get((which, key, j), 0.0) + g

    for r in ratings:
        u, v = r.user_id, r.turk_id
        e = r.rating - model.raw_predict(u, v, r.context)
        add(0, u, None, -e + reg * model.user_bias[u])
        add(1, v, None, -e + reg * model.turk_bias[v])
        for key in r.context.keys():
            add(2, key, None, -e + reg * model.context_bias[key])
        pu, qv = model.user_factors[u], model.turk_factors[v]
        for j in range(len(pu)):
            add(3, u, j, -e * qv[j] + reg * pu[j])
            add(4, v, j, -e * pu[j] + reg * qv[j])
    return grads


def loss_gradient_check(model: CarsModel, ratings: Sequence[RatingRecord], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The model is perturbed in place and restored before returning.
    """
    dicts = (model.user_bias, model.turk_bias, model.context_bias, model.user_factors, model.turk_factors)
    analytic = analytic_gradient(model, ratings)
    worst = 0.0
    for slot in _param_slots(model):
        d, key, j = slot
        which = next(i for i, x in enumerate(dicts) if x is d)
        a = analytic.get((which, key, j), 0.0)
        x0 = _get(slot)
        _set(slot, x0 + epsilon)
        up = objective(model, ratings)
        _set(slot, x0 - epsilon)
        down = objective(model, ratings)
        _set(slot, x0)
        n = (up - down) / (2.0 * epsilon)
        err = abs(a - n) / max(abs(a), abs(n), 1e-6)
        worst = max(worst, err)
    return worst


def parameter_count(model: CarsModel) -> int:
    return len(_param_slots(model))


# -- persistence ---------------------------------------------------------------


def dump_model(model: CarsModel) -> str:
    """Self-describing JSON; floats are written with ``repr`` and reload bit-exact."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "mu": model.mu,
        "hyper": {
            "factors": model.hyper.factors,
            "learning_rate": model.hyper.learning_rate,
            "regularization": model.hyper.regularization,
            "epochs": model.hyper.epochs,
        },
        "user_bias": model.user_bias,
        "turk_bias": model.turk_bias,
        "context_bias": model.context_bias,
        "user_factors": {k: [float(x) for x in v] for k, v in model.user_factors.items()},
        "turk_factors": {k: [float(x) for x in v] for k, v in model.turk_factors.items()},
        "loss_history": model.loss_history,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def load_model(text: str | Mapping) -> CarsModel:
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValidationError("not a recommender model dump", code="BAD_MODEL")
    hyper = CarsHyper(**doc["hyper"])
    return CarsModel(
        mu=doc["mu"],
        hyper=hyper,
        user_bias=dict(doc["user_bias"]),
        turk_bias=dict(doc["turk_bias"]),
        context_bias=dict(doc["context_bias"]),
        user_factors={k: np.array(v, dtype=float) for k, v in doc["user_factors"].items()},
        turk_factors={k: np.array(v, dtype=float) for k, v in doc["turk_factors"].items()},
        loss_history=list(doc.get("loss_history", [])),
    )
