"""Turk action log (JSON lines) and versioned snapshots.

The log is append-only UTF-8, one event per LF-terminated line. A line
without its terminator or with unparsable JSON is reported as
``CorruptLogError`` carrying the byte offset where the bad line starts.
A snapshot records the log offset it covers, so ``snapshot + log suffix``
replays to the same state as the full log.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import CorruptLogError, LogIOError, StaleUpdateError, ValidationError
from .index import BigTree
from .model import EventKind, SpatialTextualObject, TurkEvent, encode_event, validate_event, validate_object
from .recommender import CarsModel, RatingRecord, dump_model, load_model

SNAPSHOT_FORMAT = "turkdb-snapshot"
SNAPSHOT_VERSION = 1


@dataclass
class TurkDB:
    """State rebuilt from the log: the live index plus ratings and responses."""

    index: BigTree = field(default_factory=BigTree)
    ratings: list[RatingRecord] = field(default_factory=list)
    responses: list[dict] = field(default_factory=list)
    last_event_at: int = 0
    events_applied: int = 0

    def apply(self, event: TurkEvent) -> None:
        p = event.payload
        idx = self.index
        if event.kind is EventKind.REGISTER:
            idx.insert(validate_object({"id": event.object_id, "skills": p["skills"], "lat": p["lat"], "lon": p["lon"], "t": event.at}))
        elif event.kind is EventKind.LOCATION_UPDATE:
            idx.update_location(event.object_id, p["lat"], p["lon"], event.at)
        elif event.kind is EventKind.PROFILE_UPDATE:
            skills = set(p["skills"]) if "skills" in p else set(idx.get(event.object_id).skills)
            skills |= set(p.get("add", ()))
            skills -= set(p.get("remove", ()))
            idx.update_skills(event.object_id, skills)
        elif event.kind is EventKind.RATING:
            raw = dict(p)
            raw["turk_id"] = event.object_id
            raw.setdefault("at", event.at)
            self.ratings.append(RatingRecord.from_record(raw))
        elif event.kind is EventKind.RESPONSE:
            self.responses.append({"turk_id": event.object_id, "at": event.at, **p})
        self.last_event_at = max(self.last_event_at, event.at)
        self.events_applied += 1


def read_events(path: str | os.PathLike, start: int = 0) -> Iterator[tuple[int, TurkEvent]]:
    """Yield ``(byte_offset, event)`` from ``start`` onward."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise LogIOError(f"cannot open log {path}: {exc}") from exc
    with fh:
        fh.seek(start)
        offset = start
        for line in fh:
            if not line.endswith(b"\n"):
                raise CorruptLogError(offset, "truncated record (no line terminator)")
            try:
                event = validate_event(json.loads(line))
            except (ValueError, UnicodeDecodeError) as exc:
                raise CorruptLogError(offset, str(exc)) from None
            yield offset, event
            offset += len(line)


def replay(path: str | os.PathLike, db: TurkDB | None = None, start: int = 0) -> TurkDB:
    """Apply the log from ``start`` to ``db`` (a fresh one by default).

    On a corrupt record the raised ``CorruptLogError`` carries the state
    built from the intact prefix in its ``state`` attribute.
    """
    db = db if db is not None else TurkDB()
    try:
        for _, event in read_events(path, start):
            db.apply(event)
    except CorruptLogError as exc:
        exc.state = db
        raise
    return db


class EventLog:
    """Append handle. ``append`` returns only after the record is fsynced.

    Opening an existing log scans it to learn per-object timestamps; a torn
    tail raises ``CorruptLogError`` unless ``repair=True``, which truncates
    the file back to the last complete record.
    """

    def __init__(self, path: str | os.PathLike, *, repair: bool = False, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._last_at: dict[str, int] = {}
        self.size = 0
        if self.path.exists():
            try:
                for _, event in read_events(self.path):
                    self._note(event)
                self.size = self.path.stat().st_size
            except CorruptLogError as exc:
                if not repair:
                    raise
                os.truncate(self.path, exc.offset)
                self.size = exc.offset
        try:
            self._fh = open(self.path, "ab")
        except OSError as exc:
            raise LogIOError(f"cannot open log {self.path}: {exc}") from exc

    def _note(self, event: TurkEvent) -> None:
        prev = self._last_at.get(event.object_id)
        if prev is not None and event.at < prev:
            raise StaleUpdateError(f"event for {event.object_id!r} at t={event.at} precedes t={prev}")
        self._last_at[event.object_id] = event.at

    def append(self, event: TurkEvent | dict[str, Any]) -> int:
        """Write one event; returns the byte offset just past it."""
        event = validate_event(event)
        self._note(event)
        data = (encode_event(event) + "\n").encode("utf-8")
        try:
            self._fh.write(data)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise LogIOError(f"write to {self.path} failed: {exc}") from exc
        self.size += len(data)
        return self.size

    def extend(self, events) -> int:
        for e in events:
            self.append(e)
        return self.size

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> EventLog:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_snapshot(path: str | os.PathLike, db: TurkDB, log_offset: int, model: CarsModel | None = None) -> None:
    idx = db.index
    doc = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "captured_at": db.last_event_at,
        "log_offset": log_offset,
        "index": {"capacity": idx.capacity, "max_depth": idx.max_depth, "region": list(idx.region)},
        "objects": [idx.objects[k].to_record() for k in sorted(idx.objects)],
        "ratings": [r.to_record() for r in db.ratings],
        "responses": db.responses,
        "model": json.loads(dump_model(model)) if model is not None else None,
    }
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise LogIOError(f"cannot write snapshot {path}: {exc}") from exc


@dataclass
class Snapshot:
    db: TurkDB
    log_offset: int
    captured_at: int
    model: CarsModel | None = None


def load_snapshot(path: str | os.PathLike) -> Snapshot:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise LogIOError(f"cannot read snapshot {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"snapshot {path} is not JSON: {exc}", code="BAD_SNAPSHOT") from None
    if doc.get("format") != SNAPSHOT_FORMAT or doc.get("version") != SNAPSHOT_VERSION:
        raise ValidationError(f"{path} is not a version {SNAPSHOT_VERSION} snapshot", code="BAD_SNAPSHOT")
    opts = doc["index"]
    objects: list[SpatialTextualObject] = [validate_object(r) for r in doc["objects"]]
    index = BigTree.bulk_load(objects, capacity=opts["capacity"], max_depth=opts["max_depth"], region=tuple(opts["region"]))
    db = TurkDB(
        index=index,
        ratings=[RatingRecord.from_record(r) for r in doc["ratings"]],
        responses=list(doc.get("responses", [])),
        last_event_at=doc["captured_at"],
    )
    model = load_model(doc["model"]) if doc.get("model") else None
    return Snapshot(db, doc["log_offset"], doc["captured_at"], model)


def restore(snapshot_path: str | os.PathLike, log_path: str | os.PathLike) -> TurkDB:
    """Load a snapshot and replay the log suffix written after it."""
    snap = load_snapshot(snapshot_path)
    return replay(log_path, snap.db, start=snap.log_offset)

