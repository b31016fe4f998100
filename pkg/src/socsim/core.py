"""Domain types: agents, environment, events and the event queue."""

from __future__ import annotations

import heapq
import json
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import IntEnum
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from socsim.errors import EmptyQueue, MixedTick, PastTimestamp

AgentId = int
ENV = "env"  # reference to the environment as an event initiator/target


class OpinionState(IntEnum):
    """Opinion on the scenario statement; the integer value is the canonical order."""

    AGREE = 0
    DISAGREE = 1
    NEUTRAL = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text) -> "OpinionState":
        if isinstance(text, OpinionState):
            return text
        if isinstance(text, (int, np.integer)) and not isinstance(text, bool):
            try:
                return cls(int(text))
            except ValueError:
                raise ValueError(f"not an opinion code: {text!r}") from None
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValueError(f"not an opinion: {text!r}") from None


OPINION_LABELS = tuple(o.label for o in OpinionState)


@dataclass(frozen=True)
class AgentState:
    """Read-only view of one agent. Mutations go through :class:`AgentStore`."""

    id: AgentId
    profile: Mapping[str, Any]
    profile_text: str
    internal: Mapping[str, Any]
    external: Mapping[str, Any]
    active: bool = True


@dataclass
class EnvironmentState:
    static_part: Mapping[str, Any] = field(default_factory=dict)
    dynamic_part: dict = field(default_factory=dict)

    def __post_init__(self):
        self.static_part = MappingProxyType(dict(self.static_part))


class AgentStore:
    """Columnar agent collection.

    Profiles live in a pool shared by reference (``profile_index`` maps an
    agent to its pool row), so a million agents drawn from a 10k-profile pool
    cost one int per agent. Internal and external status are numpy columns.
    Writes are only accepted inside :meth:`writable`, which the engine opens
    around the update and evolution operations.
    """

    def __init__(self, profiles: Sequence[Mapping], profile_texts: Sequence[str],
                 profile_index=None):
        self.profiles = [MappingProxyType(dict(p)) for p in profiles]
        self.profile_texts = list(profile_texts)
        if profile_index is None:
            profile_index = np.arange(len(self.profiles), dtype=np.int64)
        self.profile_index = np.asarray(profile_index, dtype=np.int64)
        n = len(self.profile_index)
        self.active = np.ones(n, dtype=bool)
        self.internal: dict[str, np.ndarray] = {}
        self.external: dict[str, np.ndarray] = {}
        self._writable = False

    def __len__(self) -> int:
        return len(self.profile_index)

    def __getitem__(self, i: AgentId) -> AgentState:
        if not 0 <= i < len(self):
            raise IndexError(i)
        p = int(self.profile_index[i])
        return AgentState(
            id=int(i),
            profile=self.profiles[p],
            profile_text=self.profile_texts[p],
            internal=MappingProxyType({k: _py(v[i]) for k, v in self.internal.items()}),
            external=MappingProxyType({k: _py(v[i]) for k, v in self.external.items()}),
            active=bool(self.active[i]),
        )

    def __iter__(self) -> Iterator[AgentState]:
        for i in range(len(self)):
            yield self[i]

    def profile_of(self, i: AgentId) -> Mapping[str, Any]:
        return self.profiles[int(self.profile_index[i])]

    def add_column(self, part: str, name: str, values) -> None:
        cols = self.internal if part == "internal" else self.external
        values = np.asarray(values)
        if len(values) != len(self):
            raise ValueError(f"column {name!r} has {len(values)} rows, expected {len(self)}")
        cols[name] = values

    @contextmanager
    def writable(self):
        prev, self._writable = self._writable, True
        try:
            yield self
        finally:
            self._writable = prev

    def _check(self):
        if not self._writable:
            raise RuntimeError("agent state may only change inside update/evolution operations")

    def set_internal(self, idx, name: str, values) -> None:
        self._check()
        self.internal[name][idx] = values

    def set_external(self, idx, name: str, values) -> None:
        self._check()
        self.external[name][idx] = values

    def set_active(self, idx, flag) -> None:
        self._check()
        self.active[idx] = flag


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Event:
    time: int
    kind: str
    priority: int = 0
    initiators: tuple = ()
    targets: tuple = ()
    payload: Mapping[str, Any] = field(default_factory=dict)
    agg_key: str | None = None
    seq: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "initiators", tuple(self.initiators))
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.time, self.priority, self.seq)

    @property
    def merged(self) -> bool:
        return bool(self.payload.get("merged", False))

    def members(self) -> list[dict]:
        """Member payloads; a plain event is its own single member."""
        if self.merged:
            return list(self.payload["members"])
        return [dict(self.payload)]

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "time": self.time,
            "priority": self.priority,
            "kind": self.kind,
            "initiators": list(self.initiators),
            "targets": list(self.targets),
            "payload": self.payload,
            "agg_key": self.agg_key,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Event":
        return cls(
            seq=rec["seq"],
            time=rec["time"],
            priority=rec["priority"],
            kind=rec["kind"],
            initiators=tuple(rec["initiators"]),
            targets=tuple(rec["targets"]),
            payload=rec["payload"],
            agg_key=rec.get("agg_key"),
        )


def encode_event(e: Event) -> str:
    return json.dumps(e.to_record(), sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode_event(line: str) -> Event:
    return Event.from_record(json.loads(line))


class EventQueue:
    """Priority queue ordered by (time, priority, seq).

    The queue is the single place that assigns sequence numbers, so every
    event gets a unique ``seq`` and the pop order is total.
    """

    def __init__(self):
        self._heap: list[tuple[int, int, int, Event]] = []
        self._next_seq = 0
        self.current_tick = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def enqueue(self, e: Event) -> Event:
        if e.time < self.current_tick:
            raise PastTimestamp(f"event at t={e.time} is before current tick {self.current_tick}")
        if e.seq is None:
            e = replace(e, seq=self._next_seq)
        self._next_seq = max(self._next_seq, e.seq + 1)
        heapq.heappush(self._heap, (e.time, e.priority, e.seq, e))
        return e

    def extend(self, events: Iterable[Event]) -> list[Event]:
        return [self.enqueue(e) for e in events]

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Event:
        if not self._heap:
            raise EmptyQueue("pop from empty event queue")
        return heapq.heappop(self._heap)[3]

    def pop_tick_batch(self) -> tuple[int, list[Event]]:
        """Remove and return every event at the earliest tick, in (priority, seq) order."""
        if not self._heap:
            raise EmptyQueue("pop from empty event queue")
        tick = self._heap[0][0]
        batch = []
        while self._heap and self._heap[0][0] == tick:
            batch.append(heapq.heappop(self._heap)[3])
        return tick, batch


def aggregate(batch: Sequence[Event]) -> list[Event]:
    """Merge same-tick events sharing a non-empty ``agg_key``.

    A merged event carries the member payloads (in seq order) under
    ``payload["members"]``, plus each member's seq, priority, initiators and
    targets. Its priority is the minimum over members and its seq the
    smallest member seq, so it never runs later than any member would have.
    """
    if not batch:
        return []
    tick = batch[0].time
    if any(e.time != tick for e in batch):
        raise MixedTick("aggregate() input spans more than one tick")

    out: list[Event] = []
    groups: dict[str, list[Event]] = {}
    for e in batch:
        if e.agg_key:
            groups.setdefault(e.agg_key, []).append(e)
        else:
            out.append(e)

    for key, events in groups.items():
        members = []
        for e in events:
            if e.merged:
                p = e.payload
                members.extend(zip(p["member_seqs"], p["member_priorities"], p["member_initiators"],
                                   p["member_targets"], p["members"]))
            else:
                members.append((e.seq, e.priority, list(e.initiators), list(e.targets), e.payload))
        members.sort(key=lambda m: m[0])
        out.append(Event(
            time=tick,
            kind=events[0].kind,
            priority=min(m[1] for m in members),
            initiators=_union(m[2] for m in members),
            targets=_union(m[3] for m in members),
            payload={
                "merged": True,
                "members": [m[4] for m in members],
                "member_seqs": [m[0] for m in members],
                "member_priorities": [m[1] for m in members],
                "member_initiators": [list(m[2]) for m in members],
                "member_targets": [list(m[3]) for m in members],
            },
            agg_key=key,
            seq=members[0][0],
        ))
    out.sort(key=lambda e: (e.priority, e.seq))
    return out


def member_count(e: Event) -> int:
    return len(e.payload["members"]) if e.merged else 1


def _union(lists) -> tuple:
    seen = {}
    for lst in lists:
        for x in lst:
            seen.setdefault(x, None)
    return tuple(seen)
