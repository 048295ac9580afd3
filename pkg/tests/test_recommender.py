import random

import numpy as np
import pytest

from conftest import synthetic_ratings
from crowdmatch.errors import ValidationError
from crowdmatch.model import ServiceQuery
from crowdmatch.recommender import (
    CarsHyper,
    ContextVector,
    RatingRecord,
    analytic_gradient,
    context_for_query,
    dump_model,
    load_model,
    location_cell,
    loss_gradient_check,
    parameter_count,
    recommend,
    rmse,
    time_bucket,
    train,
)

CTX = ContextVector("morning", "q01230123", "repair")


def test_time_buckets():
    assert [time_bucket(h * 3600) for h in (0, 5, 6, 11, 12, 17, 18, 23)] == [
        "night", "night", "morning", "morning", "afternoon", "afternoon", "evening", "evening"]
    assert time_bucket(0, utc_offset_s=8 * 3600) == "morning"


def test_location_cell():
    assert location_cell(10, 10) == location_cell(10.0001, 10.0001)
    assert location_cell(10, 10) != location_cell(-10, 10)
    assert len(location_cell(0, 0)) == 9


def test_query_context_uses_first_keyword():
    q = ServiceQuery(("plumbing", "driving"), 1.0, 2.0, 13 * 3600)
    ctx = context_for_query(q, taxonomy={"plumbing": "home"})
    assert ctx == ContextVector("afternoon", location_cell(1.0, 2.0), "home")
    assert context_for_query(q).skill_domain == "plumbing"


def test_single_rating_bias_only():
    model = train([RatingRecord("u", "v", CTX, 4.0)], CarsHyper(factors=0, epochs=50), seed=1)
    assert model.predict("u", "v", CTX) == pytest.approx(4.0, abs=1e-9)


def test_constant_ratings():
    ratings = [RatingRecord(f"u{i % 7}", f"v{i % 5}", CTX, 3.0) for i in range(60)]
    model = train(ratings, CarsHyper(factors=4, epochs=20), seed=0)
    assert model.mu == pytest.approx(3.0)
    for biases in (model.user_bias, model.turk_bias, model.context_bias):
        assert max(abs(b) for b in biases.values()) < 1e-3


def test_low_rank_recovery():
    tr, te = synthetic_ratings()
    model = train(tr, CarsHyper(factors=3, learning_rate=0.02, regularization=0.02, epochs=100), seed=1)
    assert rmse(model, te) < 0.3


def test_loss_non_increasing_at_defaults():
    tr, _ = synthetic_ratings(seed=9, n_users=30, n_turks=20)
    model = train(tr, seed=3)
    h = model.loss_history
    assert len(h) == CarsHyper().epochs
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_deterministic_and_dump_round_trip():
    tr, _ = synthetic_ratings(seed=2, n_users=10, n_turks=8)
    a = train(tr, CarsHyper(factors=3, epochs=5), seed=42)
    b = train(tr, CarsHyper(factors=3, epochs=5), seed=42)
    assert dump_model(a) == dump_model(b)
    c = load_model(dump_model(a))
    assert dump_model(c) == dump_model(a)
    for r in tr[:20]:
        assert c.raw_predict(r.user_id, r.turk_id, r.context) == a.raw_predict(r.user_id, r.turk_id, r.context)


def test_predict_cold_start_and_clamp():
    ratings = [RatingRecord("u", "v", CTX, 5.0), RatingRecord("u", "w", CTX, 5.0), RatingRecord("x", "v", CTX, 1.0)]
    model = train(ratings, CarsHyper(factors=2, learning_rate=0.05, epochs=200), seed=0)
    unseen = ContextVector("night", "q99999999", "nothing")
    assert model.predict("ghost", "phantom", unseen) == pytest.approx(min(5, max(1, model.mu)))
    for u in ("u", "x", "ghost"):
        for v in ("v", "w", "phantom"):
            assert 1.0 <= model.predict(u, v, CTX) <= 5.0


def test_predict_matches_manual_evaluation():
    tr, _ = synthetic_ratings(seed=4, n_users=8, n_turks=6)
    model = load_model(dump_model(train(tr, CarsHyper(factors=3, epochs=10), seed=0)))
    r = tr[0]
    ctx = r.context
    manual = (model.mu + model.user_bias[r.user_id] + model.turk_bias[r.turk_id]
              + model.context_bias[f"time:{ctx.time_bucket}"] + model.context_bias[f"cell:{ctx.location_cell}"]
              + model.context_bias[f"domain:{ctx.skill_domain}"]
              + sum(a * b for a, b in zip(model.user_factors[r.user_id], model.turk_factors[r.turk_id])))
    assert model.predict(r.user_id, r.turk_id, ctx) == pytest.approx(min(5, max(1, manual)), abs=1e-12)


def test_recommend_contract():
    tr, _ = synthetic_ratings(seed=6, n_users=10, n_turks=12)
    model = train(tr, CarsHyper(factors=3, epochs=10), seed=0)
    q = ServiceQuery(("plumbing",), 0.0, 0.0, 9 * 3600)
    pool = [f"v{i}" for i in range(12)] + ["newcomer"]
    assert recommend(model, "u1", q, pool[:3], exclude=pool[:3], m=5) == []
    assert [t for t, _ in recommend(model, "u1", q, pool[:3], exclude=pool[:2], m=5)] == [pool[2]]
    ctx = context_for_query(q)
    oracle = sorted(((t, model.predict("u1", t, ctx)) for t in pool if t != "v3"), key=lambda s: (-s[1], s[0]))[:4]
    assert recommend(model, "u1", q, pool, exclude={"v3"}, m=4) == oracle
    # an unrated turk in the pool does not disturb anyone else's prediction
    with_new = dict(recommend(model, "u1", q, pool, m=len(pool)))
    without = dict(recommend(model, "u1", q, pool[:-1], m=len(pool)))
    assert all(with_new[t] == without[t] for t in without)
    with pytest.raises(ValidationError):
        recommend(model, "u1", q, pool, m=0)


def test_training_errors():
    with pytest.raises(ValidationError) as err:
        train([], CarsHyper())
    assert err.value.code == "EMPTY_TRAINING_SET"
    for bad in (CarsHyper(factors=-1), CarsHyper(learning_rate=0), CarsHyper(regularization=-1), CarsHyper(epochs=0)):
        with pytest.raises(ValidationError) as err:
            train([RatingRecord("u", "v", CTX, 3.0)], bad)
        assert err.value.code == "BAD_HYPERPARAMS"
    with pytest.raises(ValidationError):
        RatingRecord("u", "v", CTX, 6.0)
    many = [RatingRecord(f"u{i}", "v", CTX, 1.0 + (i % 5)) for i in range(20)]
    with pytest.raises(ValidationError, match="diverged"):
        train(many, CarsHyper(factors=2, learning_rate=5.0, epochs=50))


def _small_instance(seed, factors):
    rng = random.Random(seed)
    ratings = [RatingRecord(f"u{rng.randrange(3)}", f"v{rng.randrange(3)}",
                            ContextVector(rng.choice(["night", "morning"]), "q0", "d"), float(rng.randint(1, 5)))
               for _ in range(12)]
    model = train(ratings, CarsHyper(factors=factors, learning_rate=0.05, regularization=0.1, epochs=3), seed=seed)
    g = np.random.default_rng(seed)
    for d in (model.user_bias, model.turk_bias, model.context_bias):
        for k in d:
            d[k] = float(g.normal(0, 0.5))
    for d in (model.user_factors, model.turk_factors):
        for k in d:
            d[k] = g.normal(0, 0.5, factors)
    return model, ratings


def test_gradient_check_bias_only():
    model, ratings = _small_instance(0, 0)
    assert loss_gradient_check(model, ratings, 1e-5) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_full(seed):
    model, ratings = _small_instance(seed, 4)
    assert parameter_count(model) <= 100
    assert loss_gradient_check(model, ratings, 1e-5) < 1e-4


def test_zero_residual_gradient_is_regularization():
    rating = RatingRecord("u", "v", CTX, 3.0)
    model = train([rating], CarsHyper(factors=2, epochs=1), seed=0)
    model.user_bias["u"], model.turk_bias["v"] = 0.3, -0.1
    model.user_factors["u"] = np.array([0.2, 0.1])
    model.turk_factors["v"] = np.array([0.5, -0.4])
    base = model.raw_predict("u", "v", CTX)
    model.context_bias["time:morning"] += 3.0 - base  # residual now zero
    reg = model.hyper.regularization
    g = analytic_gradient(model, [rating])
    assert g[(0, "u", None)] == pytest.approx(reg * 0.3, abs=1e-12)
    assert g[(1, "v", None)] == pytest.approx(reg * -0.1, abs=1e-12)
    assert g[(3, "u", 0)] == pytest.approx(reg * 0.2, abs=1e-12)
    assert g[(4, "v", 1)] == pytest.approx(reg * -0.4, abs=1e-12)
