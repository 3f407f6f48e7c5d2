"""Event log: the single source of truth for features, labels, and metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, NamedTuple

import numpy as np

from ..errors import DataError


class EventKind(IntEnum):
    SESSION = 0
    IMPRESSION = 1
    FEEDBACK = 2
    CREATE = 3

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    EventKind.SESSION: "session",
    EventKind.IMPRESSION: "impression",
    EventKind.FEEDBACK: "feedback",
    EventKind.CREATE: "create",
}
_LABEL_KINDS = {v: k for k, v in _KIND_LABELS.items()}

NO_ID = -1  # sentinel for absent target/item columns


class Event(NamedTuple):
    tick: int
    kind: EventKind
    actor: int
    target: int | None
    item: int | None


@dataclass(frozen=True)
class FeedItem:
    """A ranked-feed candidate: one content item by one creator."""

    item_id: int
    creator_id: int
    age_ticks: int
    quality: float

    def __post_init__(self):
        if self.age_ticks < 0:
            raise ValueError(f"age_ticks must be >= 0, got {self.age_ticks}")


class EventLog:
    """Columnar, tick-ordered event log.

    Events are stored as parallel int64 arrays; absent target/item fields hold
    the NO_ID sentinel internally and serialize to JSON null.
    """

    def __init__(self, tick, kind, actor, target, item, n_ticks: int, seed: int):
        self.tick = np.asarray(tick, dtype=np.int64)
        self.kind = np.asarray(kind, dtype=np.int64)
        self.actor = np.asarray(actor, dtype=np.int64)
        self.target = np.asarray(target, dtype=np.int64)
        self.item = np.asarray(item, dtype=np.int64)
        self.n_ticks = int(n_ticks)
        self.seed = int(seed)

    @classmethod
    def empty(cls, n_ticks: int = 0, seed: int = 0) -> "EventLog":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy(), n_ticks, seed)

    def __len__(self) -> int:
        return int(self.tick.shape[0])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(
                int(self.tick[i]),
                EventKind(int(self.kind[i])),
                int(self.actor[i]),
                None if self.target[i] == NO_ID else int(self.target[i]),
                None if self.item[i] == NO_ID else int(self.item[i]),
            )

    def kind_mask(self, kind: EventKind) -> np.ndarray:
        return self.kind == int(kind)

    def window_mask(self, start: int, end: int) -> np.ndarray:
        """Half-open tick window [start, end)."""
        return (self.tick >= start) & (self.tick < end)

    def count_by_user(self, kind: EventKind, start: int, end: int, n_users: int,
                      by: str = "actor") -> np.ndarray:
        """Per-user event counts for one kind inside [start, end)."""
        mask = self.kind_mask(kind) & self.window_mask(start, end)
        col = self.actor if by == "actor" else self.target
        return np.bincount(col[mask], minlength=n_users)


EVENTLOG_SCHEMA = "feedlab-eventlog-v1"


def eventlog_to_jsonl(log: EventLog, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {EVENTLOG_SCHEMA} seed={log.seed} ticks={log.n_ticks}\n")
        for i in range(len(log)):
            tg = int(log.target[i])
            it = int(log.item[i])
            f.write(
                '{"tick":%d,"kind":"%s","actor":%d,"target":%s,"item":%s}\n'
                % (
                    log.tick[i],
                    _KIND_LABELS[EventKind(int(log.kind[i]))],
                    log.actor[i],
                    "null" if tg == NO_ID else tg,
                    "null" if it == NO_ID else it,
                )
            )


def eventlog_from_jsonl(path) -> EventLog:
    ticks, kinds, actors, targets, items = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(f"# {EVENTLOG_SCHEMA}"):
            raise DataError(f"unrecognized event log header: {header!r}")
        meta = dict(kv.split("=") for kv in header.split()[2:])
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rec = json.loads(line)
            ticks.append(rec["tick"])
            kinds.append(int(_LABEL_KINDS[rec["kind"]]))
            actors.append(rec["actor"])
            targets.append(NO_ID if rec["target"] is None else rec["target"])
            items.append(NO_ID if rec["item"] is None else rec["item"])
    return EventLog(ticks, kinds, actors, targets, items,
                    n_ticks=int(meta["ticks"]), seed=int(meta["seed"]))


def validate_event_log(log: EventLog) -> None:
    """Check structural invariants; raises DataError on violation.

    Ticks must be nondecreasing, every feedback must reference an earlier (or
    same-position-earlier) impression by the same actor on the same item, and
    every impression/feedback item must reference a prior create.
    """
    if len(log) == 0:
        return
    if np.any(np.diff(log.tick) < 0):
        raise DataError("event ticks are not nondecreasing")

    created: set[int] = set()
    impressed: set[tuple[int, int]] = set()
    for i in range(len(log)):
        kind = int(log.kind[i])
        actor = int(log.actor[i])
        item = int(log.item[i])
        if kind == EventKind.CREATE:
            created.add(item)
        elif kind == EventKind.IMPRESSION:
            if item not in created:
                raise DataError(f"impression of item {item} before its create")
            impressed.add((actor, item))
        elif kind == EventKind.FEEDBACK:
            if (actor, item) not in impressed:
                raise DataError(f"feedback by {actor} on item {item} without an impression")
