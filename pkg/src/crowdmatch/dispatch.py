"""Candidate-list lifecycle for one service request.

A session pushes the task to ``k_m`` matcher candidates (drawn in rank
order from a query cursor) and ``k_r`` recommender candidates (best
predicted ratings among the rest). Turks then accept, refuse, or let the
notification time out. A refusal or timeout frees the slot, and the next
candidate from the same source fills it. An acceptance keeps its slot.

Every state change appends one row to ``session.log``. Feeding those rows
to :func:`replay_log` rebuilds the candidate states.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .errors import AlreadyTerminalError, CursorInvalidatedError, UnknownCandidateError, ValidationError
from .index import BigTree
from .model import ServiceQuery
from .recommender import CarsModel, recommend
from .scoring import ScoringParams
from .topk import QueryCursor, open_cursor

DEFAULT_TIMEOUT_S = 120

_session_ids = itertools.count(1)


class Source(str, enum.Enum):
    MATCHER = "MATCHER"
    RECOMMENDER = "RECOMMENDER"


class State(str, enum.Enum):
    PENDING = "PENDING"
    NOTIFIED = "NOTIFIED"
    ACCEPTED = "ACCEPTED"
    REFUSED = "REFUSED"
    IGNORED = "IGNORED"

    @property
    def terminal(self) -> bool:
        return self in (State.ACCEPTED, State.REFUSED, State.IGNORED)


class Verdict(str, enum.Enum):
    ACCEPT = "ACCEPT"
    REFUSE = "REFUSE"


# transition names used in log rows; REASSIGNED moves a notified
# recommender pick into the matcher pool without re-notifying it
REASSIGNED = "REASSIGNED"


@dataclass
class CandidateEntry:
    turk_id: str
    source: Source
    score: float
    state: State = State.PENDING
    notified_at: int = 0


class DispatchSession:
    """Live candidate list. Single-threaded; callers serialize respond/tick."""

    def __init__(
        self,
        index: BigTree,
        query: ServiceQuery,
        k_m: int,
        k_r: int = 0,
        timeout_s: int = DEFAULT_TIMEOUT_S,
        *,
        params: ScoringParams | None = None,
        model: CarsModel | None = None,
        user_id: str = "",
        candidate_pool: Iterable[str] | None = None,
        taxonomy: Mapping[str, str] | None = None,
        session_id: str | None = None,
        sink: Callable[[dict], None] | None = None,
    ):
        if k_m < 1 or k_r < 0:
            raise ValidationError(f"need k_m >= 1 and k_r >= 0, got {k_m}, {k_r}", code="BAD_SLOTS")
        if timeout_s <= 0:
            raise ValidationError(f"timeout must be positive, got {timeout_s}", code="BAD_TIMEOUT")
        self.index = index
        self.query = query
        self.params = params
        self.k_m = k_m
        self.k_r = k_r if model is not None else 0
        self.timeout_s = timeout_s
        self.model = model
        self.user_id = user_id
        self.taxonomy = taxonomy
        self._pool = None if candidate_pool is None else list(candidate_pool)
        self.session_id = session_id or f"s{next(_session_ids)}"
        self.sink = sink
        self.clock = query.issued_at
        self.entries: dict[str, CandidateEntry] = {}
        self.log: list[dict] = []
        self.cursor = self._new_cursor()
        self._matcher: list[str] = []  # cursor order, NOTIFIED or ACCEPTED
        self._recommended: list[str] = []
        self._fill()

    # -- public API -----------------------------------------------------------

    def respond(self, turk_id: str, verdict: Verdict | str, at: int | None = None) -> DispatchSession:
        verdict = Verdict(verdict)
        entry = self.entries.get(turk_id)
        if entry is None:
            raise UnknownCandidateError(f"{turk_id!r} is not a candidate in session {self.session_id}")
        if entry.state.terminal:
            raise AlreadyTerminalError(f"{turk_id!r} already {entry.state.value}")
        self._advance_clock(at)
        if verdict is Verdict.ACCEPT:
            self._transition(entry, State.ACCEPTED)
        else:
            self._transition(entry, State.REFUSED)
            self._release(entry)
            self._fill()
        return self

    def tick(self, now: int) -> DispatchSession:
        """Time out notifications older than ``timeout_s`` and back-fill them."""
        self._advance_clock(now)
        while True:
            expired = sorted(
                (e for e in self.entries.values()
                 if e.state is State.NOTIFIED and self.clock - e.notified_at > self.timeout_s),
                key=lambda e: (e.notified_at, e.turk_id),
            )
            if not expired:
                return self
            for entry in expired:
                self._transition(entry, State.IGNORED)
                self._release(entry)
            self._fill()

    def active(self, source: Source | None = None) -> list[CandidateEntry]:
        """Non-terminal entries, matcher ones in rank order first."""
        ids = self._matcher + self._recommended
        out = [self.entries[t] for t in ids if self.entries[t].state is State.NOTIFIED]
        return [e for e in out if source is None or e.source is source]

    def matcher_ids(self) -> list[str]:
        """Turks holding matcher slots (notified or accepted), in rank order."""
        return list(self._matcher)

    def recommender_ids(self) -> list[str]:
        return list(self._recommended)

    def accepted(self) -> list[CandidateEntry]:
        return [e for e in self.entries.values() if e.state is State.ACCEPTED]

    def terminal_ids(self) -> set[str]:
        return {t for t, e in self.entries.items() if e.state in (State.REFUSED, State.IGNORED)}

    @property
    def settled(self) -> bool:
        return not any(e.state is State.NOTIFIED for e in self.entries.values())

    def state(self) -> dict[str, tuple[str, str]]:
        return {t: (e.source.value, e.state.value) for t, e in self.entries.items()}

    # -- internals ------------------------------------------------------------

    def _new_cursor(self) -> QueryCursor:
        return open_cursor(self.index, self.query, self.params)

    def _advance_clock(self, at: int | None) -> None:
        if at is not None:
            if at < self.clock:
                raise ValidationError(f"time {at} precedes session clock {self.clock}", code="BAD_TIMESTAMP")
            self.clock = at

    def _emit(self, entry: CandidateEntry, transition: str) -> None:
        row = {
            "session_id": self.session_id,
            "at": self.clock,
            "turk_id": entry.turk_id,
            "transition": transition,
            "source": entry.source.value,
            "score": entry.score,
        }
        self.log.append(row)
        if self.sink is not None:
            self.sink(row)

    def _transition(self, entry: CandidateEntry, state: State) -> None:
        entry.state = state
        if state is State.NOTIFIED:
            entry.notified_at = self.clock
        self._emit(entry, state.value)

    def _release(self, entry: CandidateEntry) -> None:
        slots = self._matcher if entry.source is Source.MATCHER else self._recommended
        slots.remove(entry.turk_id)

    def _next_ranked(self):
        while True:
            try:
                return next(self.cursor, None)
            except CursorInvalidatedError:
                # the index moved; restart and skip everyone already seen
                self.cursor = self._new_cursor()

    def _fill(self) -> None:
        while len(self._matcher) < self.k_m:
            cand = self._next_ranked()
            if cand is None:
                break
            entry = self.entries.get(cand.object_id)
            if entry is None:
                entry = CandidateEntry(cand.object_id, Source.MATCHER, cand.total)
                self.entries[entry.turk_id] = entry
                self._matcher.append(entry.turk_id)
                self._transition(entry, State.NOTIFIED)
            elif entry.source is Source.RECOMMENDER and entry.state is State.NOTIFIED:
                self._recommended.remove(entry.turk_id)
                entry.source = Source.MATCHER
                entry.score = cand.total
                self._matcher.append(entry.turk_id)
                self._emit(entry, REASSIGNED)
        if self.model is not None and len(self._recommended) < self.k_r:
            pool = self._pool if self._pool is not None else list(self.index.objects)
            picks = recommend(
                self.model, self.user_id, self.query, pool,
                exclude=self.entries.keys(), m=self.k_r - len(self._recommended), taxonomy=self.taxonomy,
            )
            for turk_id, rating in picks:
                entry = CandidateEntry(turk_id, Source.RECOMMENDER, rating)
                self.entries[turk_id] = entry
                self._recommended.append(turk_id)
                self._transition(entry, State.NOTIFIED)


def open_session(index: BigTree, query: ServiceQuery, k_m: int, k_r: int = 0,
                 timeout_s: int = DEFAULT_TIMEOUT_S, **kwargs) -> DispatchSession:
    return DispatchSession(index, query, k_m, k_r, timeout_s, **kwargs)


def replay_log(rows: Iterable[Mapping]) -> dict[str, dict[str, tuple[str, str]]]:
    """Rebuild ``{session_id: {turk_id: (source, state)}}`` from log rows."""
    sessions: dict[str, dict[str, tuple[str, str]]] = {}
    for row in rows:
        states = sessions.setdefault(row["session_id"], {})
        transition = row["transition"]
        if transition == REASSIGNED:
            states[row["turk_id"]] = (row["source"], states[row["turk_id"]][1])
        else:
            states[row["turk_id"]] = (row["source"], State(transition).value)
    return sessions
