import random

import pytest

from conftest import T_NOW, random_objects
from crowdmatch.dispatch import REASSIGNED, DispatchSession, Source, State, Verdict, open_session, replay_log
from crowdmatch.errors import AlreadyTerminalError, UnknownCandidateError, ValidationError
from crowdmatch.index import BigTree
from crowdmatch.model import ServiceQuery
from crowdmatch.recommender import CarsHyper, RatingRecord, make_context, train
from crowdmatch.topk import top_k_oracle


def build(n=300, seed=3):
    objs = random_objects(random.Random(seed), n)
    return objs, BigTree.bulk_load(objs, capacity=16)


def query(k=5, **kw):
    return ServiceQuery(("k01", "k02"), 30.25, 120.25, T_NOW, k=k, max_distance_m=20_000.0, **kw)


def expected_matchers(objs, q, excluded, k_m):
    """Brute force: best k_m of everything that has not refused or timed out."""
    ranked = [c.object_id for c in top_k_oracle(objs, q, k=-1)]
    return [t for t in ranked if t not in excluded][:k_m]


def test_initial_fill_is_oracle_prefix():
    objs, tree = build()
    q = query()
    s = DispatchSession(tree, q, k_m=4)
    assert s.matcher_ids() == expected_matchers(objs, q, set(), 4)
    assert all(e.state is State.NOTIFIED and e.source is Source.MATCHER for e in s.active())
    assert [r["transition"] for r in s.log] == ["NOTIFIED"] * 4


def test_refuse_backfills_in_rank_order():
    objs, tree = build()
    q = query()
    s = open_session(tree, q, 3)
    first = s.matcher_ids()[0]
    s.respond(first, Verdict.REFUSE, T_NOW + 5)
    assert s.matcher_ids() == expected_matchers(objs, q, {first}, 3)
    assert s.entries[first].state is State.REFUSED


def test_accept_keeps_slot():
    objs, tree = build()
    q = query()
    s = DispatchSession(tree, q, 3)
    before = s.matcher_ids()
    s.respond(before[1], "ACCEPT", T_NOW + 1)
    assert s.matcher_ids() == before
    assert [e.turk_id for e in s.accepted()] == [before[1]]
    assert len(s.active()) == 2


def test_errors():
    _, tree = build()
    s = DispatchSession(tree, query(), 2)
    with pytest.raises(UnknownCandidateError):
        s.respond("nobody", Verdict.ACCEPT)
    t = s.matcher_ids()[0]
    s.respond(t, Verdict.REFUSE, T_NOW + 1)
    with pytest.raises(AlreadyTerminalError):
        s.respond(t, Verdict.ACCEPT, T_NOW + 2)
    with pytest.raises(ValidationError):
        s.respond(s.matcher_ids()[0], Verdict.ACCEPT, T_NOW)  # clock went backwards
    with pytest.raises(ValidationError):
        DispatchSession(tree, query(), 0)
    with pytest.raises(ValidationError):
        DispatchSession(tree, query(), 1, timeout_s=0)


def test_timeout_moves_to_ignored():
    objs, tree = build()
    q = query()
    s = DispatchSession(tree, q, 2, timeout_s=60)
    first = s.matcher_ids()
    s.tick(T_NOW + 60)  # not strictly older than the timeout yet
    assert s.matcher_ids() == first
    s.tick(T_NOW + 61)
    assert all(s.entries[t].state is State.IGNORED for t in first)
    assert s.matcher_ids() == expected_matchers(objs, q, set(first), 2)
    assert all(s.entries[t].notified_at == T_NOW + 61 for t in s.matcher_ids())


def test_ignoring_everyone_terminates():
    objs, tree = build(n=40)
    q = query()
    s = DispatchSession(tree, q, 3, timeout_s=10)
    now = T_NOW
    for _ in range(100):
        if s.settled:
            break
        now += 11
        s.tick(now)
    assert s.settled and s.matcher_ids() == []
    reachable = {c.object_id for c in top_k_oracle(objs, q, k=-1)}
    assert s.terminal_ids() == reachable


def test_exhaustion_shrinks_list():
    objs, tree = build(n=6)
    q = query()
    n_reachable = len(top_k_oracle(objs, q, k=-1))
    s = DispatchSession(tree, q, 10)
    assert len(s.matcher_ids()) == n_reachable


def test_random_scripts_match_oracle_and_never_resurrect():
    objs, tree = build(n=200, seed=11)
    rng = random.Random(5)
    for trial in range(30):
        q = query(alpha=rng.random())
        k_m = rng.randint(1, 6)
        s = DispatchSession(tree, q, k_m, timeout_s=30)
        now = T_NOW
        terminal: dict[str, State] = {}
        for _ in range(60):
            now += rng.randint(0, 20)
            live = [e.turk_id for e in s.active()]
            if live and rng.random() < 0.7:
                t = rng.choice(live)
                s.respond(t, rng.choice([Verdict.REFUSE, Verdict.REFUSE, Verdict.ACCEPT]), now)
            else:
                s.tick(now)
            for t, e in s.entries.items():
                if t in terminal:
                    assert e.state is terminal[t]
                elif e.state.terminal:
                    terminal[t] = e.state
            assert s.matcher_ids() == expected_matchers(objs, q, s.terminal_ids(), k_m)
        assert replay_log(s.log)[s.session_id] == s.state()


def test_sink_receives_every_row():
    _, tree = build()
    rows = []
    s = DispatchSession(tree, query(), 2, sink=rows.append, session_id="abc")
    s.respond(s.matcher_ids()[0], Verdict.REFUSE, T_NOW + 1)
    assert rows == s.log
    assert set(rows[0]) == {"session_id", "at", "turk_id", "transition", "source", "score"}
    assert rows[0]["session_id"] == "abc"


def test_backfill_after_index_change():
    objs, tree = build()
    q = query()
    s = DispatchSession(tree, q, 2)
    first = s.matcher_ids()[0]
    # move an unseen object right onto the query point; the next fill should see it
    seen = set(s.entries)
    mover = next(o for o in objs if o.skills & {"k01", "k02"} and o.id not in seen)
    tree.update_location(mover.id, q.lat, q.lon, T_NOW)
    s.respond(first, Verdict.REFUSE, T_NOW + 1)
    live = list(tree.objects.values())
    # slots keep draw order, so only the membership is compared
    assert set(s.matcher_ids()) == set(expected_matchers(live, q, {first}, 2))
    assert mover.id in s.matcher_ids()


def _model_for(turks):
    ctx = make_context(T_NOW, 30.25, 120.25, "k01")
    ratings = [RatingRecord("me", t, ctx, 1.0 + (i % 5)) for i, t in enumerate(turks)]
    ratings += [RatingRecord("other", t, ctx, 3.0) for t in turks]
    return train(ratings, CarsHyper(factors=2, learning_rate=0.05, epochs=40), seed=1)


def test_recommender_pool():
    objs, tree = build()
    q = query()
    model = _model_for([o.id for o in objs[:50]])
    s = DispatchSession(tree, q, 2, k_r=3, model=model, user_id="me")
    assert len(s.recommender_ids()) == 3
    assert not set(s.recommender_ids()) & set(s.matcher_ids())
    assert all(e.source is Source.RECOMMENDER for e in s.active(Source.RECOMMENDER))
    r = s.recommender_ids()[0]
    s.respond(r, Verdict.REFUSE, T_NOW + 1)
    assert len(s.recommender_ids()) == 3 and r not in s.recommender_ids()
    assert DispatchSession(tree, q, 2, k_r=3).recommender_ids() == []


def test_recommended_turk_drawn_by_cursor_is_reassigned():
    objs, tree = build()
    q = query()
    ranked = [c.object_id for c in top_k_oracle(objs, q, k=-1)]
    # the pool holds only the 2nd best matcher, so the recommender grabs it first
    model = _model_for(ranked[:3])
    s = DispatchSession(tree, q, 1, k_r=1, model=model, user_id="me", candidate_pool=[ranked[1]])
    assert s.matcher_ids() == [ranked[0]] and s.recommender_ids() == [ranked[1]]
    s.respond(ranked[0], Verdict.REFUSE, T_NOW + 1)
    assert s.matcher_ids() == [ranked[1]]
    assert s.entries[ranked[1]].source is Source.MATCHER
    assert any(r["transition"] == REASSIGNED for r in s.log)
    assert replay_log(s.log)[s.session_id] == s.state()
