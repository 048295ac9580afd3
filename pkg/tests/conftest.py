from __future__ import annotations

import random

import numpy as np
import pytest

from crowdmatch.model import ServiceQuery, SpatialTextualObject

VOCAB = [f"k{i:02d}" for i in range(40)]
T_NOW = 1_000_000


def great_circle_m(lat1, lon1, lat2, lon2, radius=6_371_000.0):
    """Vector-angle distance; independent of the haversine formula under test."""
    def unit(lat, lon):
        la, lo = np.radians(lat), np.radians(lon)
        return np.array([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)])

    a, b = unit(lat1, lon1), unit(lat2, lon2)
    return float(radius * np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b))


def random_objects(rng: random.Random, n: int, box=(30.0, 30.5, 120.0, 120.5), vocab=VOCAB, prefix="o"):
    lat0, lat1, lon0, lon1 = box
    return [
        SpatialTextualObject(
            f"{prefix}{i:05d}",
            frozenset(rng.sample(vocab, rng.randint(1, 4))),
            rng.uniform(lat0, lat1),
            rng.uniform(lon0, lon1),
            T_NOW - rng.randint(0, 6 * 3600),
        )
        for i in range(n)
    ]


def random_query(rng: random.Random, box=(30.0, 30.5, 120.0, 120.5), vocab=VOCAB, k=None):
    lat0, lat1, lon0, lon1 = box
    return ServiceQuery(
        tuple(rng.sample(vocab, rng.randint(1, 3))),
        rng.uniform(lat0, lat1),
        rng.uniform(lon0, lon1),
        T_NOW,
        k=k or rng.choice([1, 5, 20]),
        alpha=rng.choice([0.0, 0.3, 0.5, 0.8, 1.0, rng.random()]),
        lambda_base=rng.choice([1.5, 2.0, 4.0]),
        max_distance_m=rng.choice([500.0, 2_000.0, 10_000.0, 60_000.0]),
    )


def ranking(cands):
    return [(c.object_id, c.score.total) for c in cands]


@pytest.fixture
def rng():
    return random.Random(1234)


def synthetic_ratings(seed=5, n_users=60, n_turks=40, f=3, density=0.7, noise=0.1):
    """Ratings drawn from the biased-MF-with-context family plus gaussian noise."""
    from crowdmatch.recommender import TIME_BUCKETS, ContextVector, RatingRecord

    g = np.random.default_rng(seed)
    bu, bv = g.normal(0, 0.3, n_users), g.normal(0, 0.3, n_turks)
    P, Q = g.normal(0, 0.5, (n_users, f)), g.normal(0, 0.5, (n_turks, f))
    ctxs = [ContextVector(tb, f"q{c}", d) for tb in TIME_BUCKETS for c in range(2) for d in ("plumbing", "driving")]
    cb = {key: g.normal(0, 0.1) for c in ctxs for key in c.keys()}
    out = []
    for u in range(n_users):
        for v in range(n_turks):
            if g.random() < density:
                c = ctxs[g.integers(len(ctxs))]
                r = 3 + bu[u] + bv[v] + sum(cb[k] for k in c.keys()) + P[u] @ Q[v] + g.normal(0, noise)
                out.append(RatingRecord(f"u{u}", f"v{v}", c, float(np.clip(r, 1, 5))))
    order = g.permutation(len(out))
    cut = int(0.8 * len(out))
    return [out[i] for i in order[:cut]], [out[i] for i in order[cut:]]
