import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import great_circle_m
from crowdmatch.errors import ValidationError
from crowdmatch.geo import haversine_m
from crowdmatch.model import ServiceQuery, SpatialTextualObject
from crowdmatch.scoring import (
    ScoringParams,
    combined_score,
    recency_score,
    spatial_score,
    textual_score,
)

# (0,0)-(0,0.045) on a 6,371 km sphere, from the vector-angle oracle in conftest
SPATIAL_0045 = 0.4996228300994858


def test_spatial_examples():
    assert spatial_score((10.0, 20.0), (10.0, 20.0), 10_000) == 1.0
    d = haversine_m(0, 0, 0, 0.045)
    assert spatial_score((0, 0), (0, 0.045), d) == 0.0
    assert spatial_score((0, 0), (0, 0.045), 10_000) == pytest.approx(SPATIAL_0045, abs=1e-9)
    assert 1 - great_circle_m(0, 0, 0, 0.045) / 10_000 == pytest.approx(SPATIAL_0045, abs=1e-12)


@given(st.floats(-90, 90), st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180))
def test_haversine_matches_vector_oracle(lat1, lon1, lat2, lon2):
    assert haversine_m(lat1, lon1, lat2, lon2) == pytest.approx(great_circle_m(lat1, lon1, lat2, lon2), abs=0.5)


def test_textual_examples():
    assert textual_score({"repair"}, {"repair", "driving"}) == 1.0
    assert textual_score({"repair", "firstaid"}, {"repair"}) == 0.5
    assert textual_score({"x", "y", "z"}, set()) == 0.0
    with pytest.raises(ValidationError) as err:
        textual_score(set(), {"x"})
    assert err.value.code == "EMPTY_QUERY"


def test_recency_examples():
    assert recency_score(100, 100, 2.0, 3600) == 1.0
    assert recency_score(3600, 0, 2.0, 3600) == 0.5
    assert recency_score(0, 3 * 3600, 2.0, 3600) == 1.0


def _obj(skills, lat=0.0, lon=0.0, t=0):
    return SpatialTextualObject("o", frozenset(skills), lat, lon, t)


def test_combined_examples():
    p1 = ScoringParams(alpha=1.0)
    q = ServiceQuery(("a",), 0, 0, 0, alpha=1.0)
    assert combined_score(q, _obj({"b"}), p1).total == 1.0

    q0 = ServiceQuery(("a",), 0, 0, 0, alpha=0.0)
    assert combined_score(q0, _obj({"a"}, lat=45, lon=90)).total == 1.0

    q5 = ServiceQuery(("repair", "firstaid"), 0, 0, 3600, alpha=0.5)
    b = combined_score(q5, _obj({"repair"}, 0, 0.045, 0))
    assert b.spatial == pytest.approx(SPATIAL_0045, abs=1e-9)
    assert b.textual == 0.5
    assert b.recency == 0.5
    assert b.total == pytest.approx(0.5 * (0.5 * SPATIAL_0045 + 0.5 * 0.5), abs=1e-12)
    assert b.total == pytest.approx(0.2499057075, abs=1e-9)


def test_params_default_to_query():
    q = ServiceQuery(("a",), 0, 0, 7200, alpha=0.25, lambda_base=3.0, max_distance_m=500)
    o = _obj({"a"}, 0, 0.001, 0)
    assert combined_score(q, o) == combined_score(q, o, ScoringParams(0.25, 3.0, 500, 3600))


def test_bad_params():
    for kwargs in ({"alpha": -0.1}, {"lambda_base": 0.9}, {"max_distance_m": -1}, {"recency_unit_s": 0}):
        with pytest.raises(ValidationError):
            ScoringParams(**kwargs)


coords = st.tuples(st.floats(-89, 89), st.floats(-179, 179))
skillsets = st.frozensets(st.sampled_from("abcdef"), max_size=6)


@given(
    coords, coords, st.frozensets(st.sampled_from("abcdef"), min_size=1, max_size=4), skillsets,
    st.integers(0, 10**6), st.integers(0, 10**6), st.floats(0, 1), st.floats(1.01, 10), st.floats(1, 1e6),
)
def test_components_bounded_and_combined(ql, ol, qkw, skills, qt, ot, alpha, lam, dmax):
    q = ServiceQuery(tuple(sorted(qkw)), ql[0], ql[1], qt, alpha=alpha, lambda_base=lam, max_distance_m=dmax)
    o = SpatialTextualObject("o", skills or frozenset("z"), ol[0], ol[1], ot)
    b = combined_score(q, o)
    assert 0 <= b.spatial <= 1 and 0 <= b.textual <= 1 and 0 < b.recency <= 1 and 0 <= b.total <= 1
    assert abs(b.total - (alpha * b.spatial + (1 - alpha) * b.textual) * b.recency) <= 1e-12


@given(coords, st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.01, 1), st.integers(0, 100), st.integers(0, 100))
def test_monotone_in_distance_and_age(ql, d1, d2, alpha, age1, age2):
    near, far = sorted((d1, d2))
    a1, a2 = sorted((age1, age2))
    q = ServiceQuery(("a",), ql[0], ql[1], 1000, alpha=alpha)
    close = combined_score(q, _obj({"a"}, ql[0], ql[1] + near, 1000 - a1))
    distant = combined_score(q, _obj({"a"}, ql[0], ql[1] + far, 1000 - a1))
    assert close.total >= distant.total
    older = combined_score(q, _obj({"a"}, ql[0], ql[1] + near, 1000 - a2))
    assert close.total >= older.total
    if a2 > a1:
        assert older.total < close.total  # textual part keeps the base positive


@given(st.frozensets(st.sampled_from("abcdefgh"), min_size=1, max_size=6), skillsets)
def test_textual_decomposes_per_keyword(qkw, skills):
    per = [textual_score({kw}, skills) / len(qkw) for kw in qkw]
    assert math.fsum(per) == pytest.approx(textual_score(qkw, skills), abs=1e-12)


@given(st.lists(st.tuples(coords, skillsets), min_size=2, max_size=8), st.integers(0, 50))
def test_fresh_data_keeps_relative_order(objs, age):
    q = ServiceQuery(("a", "b"), 10, 10, 10_000, alpha=0.4, max_distance_m=5e6)
    base = [(0.4 * spatial_score(q.location, ll, 5e6) + 0.6 * textual_score(q.keyword_set, s)) for ll, s in objs]
    assume(len(set(base)) == len(base))
    fresh = [combined_score(q, _obj(s or {"z"}, ll[0], ll[1], 10_000)).total for ll, s in objs]
    assert sorted(range(len(objs)), key=base.__getitem__) == sorted(range(len(objs)), key=fresh.__getitem__)
