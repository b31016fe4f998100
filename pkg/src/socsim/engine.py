"""Simulation loop: operation set, tick stepping, event log, snapshots, readout."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from socsim.core import ENV, AgentStore, EnvironmentState, Event, EventQueue, aggregate, member_count
from socsim.errors import BackendError, ConfigError, InvalidSeedData, SimError, UnknownAttribute

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    t_max: int = 0
    master_seed: int = 0
    snapshot_every: int | None = None  # None: only the initial and final snapshots
    agent_evolve_every: int = 1
    env_evolve_every: int = 1
    scenario: str = ""
    scenario_params: dict = field(default_factory=dict)
    backend_policy: dict = field(default_factory=lambda: {"policy": "fidelity_first"})
    workers: int = 1
    run_dir: str | None = None
    final_snapshot: bool = True

    def validate(self) -> None:
        if self.t_max < 0:
            raise ConfigError("t_max must be >= 0")
        for name in ("agent_evolve_every", "env_evolve_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")


@dataclass
class SeedDataset:
    profiles: list  # ProfileRecord-like objects (attributes(), profile_text)
    topology: Any = None
    sections: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.profiles:
            raise InvalidSeedData("seed dataset has no profiles")
        for i, p in enumerate(self.profiles):
            if not hasattr(p, "attributes") or not hasattr(p, "profile_text"):
                raise InvalidSeedData(f"profile {i} is not a profile record", record=p)


@dataclass
class Observation:
    agent: int
    tick: int
    visible_env: dict
    visible_neighbors: list = field(default_factory=list)
    triggering_event: Event | None = None


class OperationSet:
    """Scenario hooks. Subclasses override what they need.

    ``initialize`` is f_I, ``perceive`` f_P, ``policy`` f_Π (batched over all
    observations of one tick so inference can be issued in bulk), ``update``
    f_U, ``evolve_agents`` f_A and ``evolve_env`` f_E. Only ``update`` and the
    evolution hooks may write agent state; the store rejects writes anywhere
    else.
    """

    name = "base"
    always_apply = frozenset({"activate", "deactivate"})

    def initialize(self, config: SimConfig, data: SeedDataset, layer=None):
        """Return (AgentStore, EnvironmentState, starting events)."""
        agents = AgentStore([p.attributes() for p in data.profiles], [p.profile_text for p in data.profiles])
        return agents, EnvironmentState({}, {"tick": 0}), []

    def perceive(self, sys: "SimSystem", agent: int, event: Event) -> Observation | None:
        return None

    def policy(self, sys: "SimSystem", observations: list[Observation]) -> list[Event]:
        return []

    def update(self, sys: "SimSystem", event: Event) -> dict | None:
        if event.kind in ("activate", "deactivate"):
            ids = [t for t in event.targets if t != ENV]
            sys.agents.set_active(ids, event.kind == "activate")
            return {"agents": ids}
        return None

    def evolve_agents(self, sys: "SimSystem") -> None:
        pass

    def evolve_env(self, sys: "SimSystem") -> None:
        sys.env.dynamic_part["tick"] = sys.tick

    def metric_tables(self, sys: "SimSystem") -> dict[str, list[dict]]:
        return {name: list(rows) for name, rows in sys.metrics.items()}


class EventLog:
    """Append-only record of processed events, one JSON object per line."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path else None
        self._fh = open(self.path, "w", encoding="utf-8") if self.path else None
        self._hash = hashlib.sha256()
        self.records: list[dict] = [] if self._fh is None else None
        self.count = 0

    def write(self, tick: int, event: Event, status: str, outcome=None) -> None:
        rec = {"tick": tick, "status": status, "event": event.to_record(), "outcome": outcome}
        line = json.dumps(rec, sort_keys=True, separators=(",", ":"), default=_json_default)
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        self.count += 1
        if self._fh is not None:
            self._fh.write(line + "\n")
        else:
            self.records.append(json.loads(line))

    def digest(self) -> str:
        return self._hash.hexdigest()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __iter__(self):
        if self.records is not None:
            yield from self.records
        else:
            yield from read_event_log(self.path)


def read_event_log(path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


@dataclass
class SimSystem:
    config: SimConfig
    agents: AgentStore
    env: EnvironmentState
    queue: EventQueue
    ops: OperationSet
    layer: Any = None
    tick: int = 0
    metrics: dict = field(default_factory=lambda: defaultdict(list))
    event_log: EventLog = None
    run_dir: Path | None = None
    events_processed: int = 0
    snapshots: list = field(default_factory=list)
    _last_agent_evolve: int = 0
    _last_env_evolve: int = 0
    _last_snapshot: int = 0

    @property
    def seed(self) -> int:
        return self.config.master_seed


def init(config: SimConfig, data: SeedDataset, ops: OperationSet, layer=None) -> SimSystem:
    """f_I: build the system at tick 0 from (config, seed data)."""
    config.validate()
    data.validate()
    agents, env, events = ops.initialize(config, data, layer)
    queue = EventQueue()
    for e in events:
        queue.enqueue(e)
    run_dir = Path(config.run_dir) if config.run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
    sys = SimSystem(config=config, agents=agents, env=env, queue=queue, ops=ops, layer=layer,
                    event_log=EventLog(run_dir / "events.log" if run_dir else None), run_dir=run_dir)
    if run_dir:
        write_profiles_pool(agents, run_dir / "profiles.jsonl")
        sys.snapshots.append(write_snapshot(sys))
    return sys


def _crossed(last: int, now: int, every: int) -> bool:
    return now // every > last // every


def step(sys: SimSystem) -> SimSystem:
    """Process one tick batch (or idle-advance to the next evolution boundary)."""
    cfg = sys.config
    cadences = [cfg.agent_evolve_every, cfg.env_evolve_every]
    if sys.run_dir and cfg.snapshot_every:
        cadences.append(cfg.snapshot_every)
    boundary = min([cfg.t_max] + [(sys.tick // c + 1) * c for c in cadences])
    if not sys.queue:
        if sys.tick < cfg.t_max:
            _advance(sys, boundary)
        return sys
    if sys.tick < boundary < sys.queue.peek_time():
        # evolution/snapshot boundary before the next event
        _advance(sys, boundary)
        return sys

    tick, batch = sys.queue.pop_tick_batch()
    sys.tick = tick
    sys.queue.current_tick = tick
    if sys.layer is not None:
        sys.layer.tick = tick
    observations: list[Observation] = []
    for e in aggregate(batch):
        agent_targets = [t for t in e.targets if t != ENV]
        if (agent_targets and e.kind not in sys.ops.always_apply
                and not sys.agents.active[np.asarray(agent_targets, dtype=np.int64)].any()):
            sys.event_log.write(tick, e, "dropped", {"reason": "inactive target"})
            continue
        try:
            with sys.agents.writable():
                outcome = sys.ops.update(sys, e)
            status = "applied"
        except BackendError as exc:
            outcome, status = {"error": str(exc)}, "failed"
        sys.event_log.write(tick, e, status, outcome)
        sys.events_processed += member_count(e)
        if status != "applied":
            continue
        for t in agent_targets:
            if sys.agents.active[t]:
                obs = sys.ops.perceive(sys, t, e)
                if obs is not None:
                    observations.append(obs)
    if observations:
        for new in sys.ops.policy(sys, observations):
            if new.time <= tick:
                raise SimError(f"policy emitted {new.kind!r} for tick {new.time}, must be > {tick}")
            sys.queue.enqueue(new)
    _advance(sys, tick)
    return sys


def _advance(sys: SimSystem, tick: int) -> None:
    cfg = sys.config
    sys.tick = tick
    sys.queue.current_tick = tick
    if tick > 0 and _crossed(sys._last_agent_evolve, tick, cfg.agent_evolve_every):
        with sys.agents.writable():
            sys.ops.evolve_agents(sys)
        sys._last_agent_evolve = tick
    if tick > 0 and _crossed(sys._last_env_evolve, tick, cfg.env_evolve_every):
        sys.ops.evolve_env(sys)
        sys._last_env_evolve = tick
    if sys.run_dir and cfg.snapshot_every and _crossed(sys._last_snapshot, tick, cfg.snapshot_every):
        sys.snapshots.append(write_snapshot(sys))
        sys._last_snapshot = tick


@dataclass
class ReadoutBundle:
    metrics: dict[str, list[dict]]
    final_snapshot: Path | None
    event_log_path: Path | None
    event_log_digest: str
    state_digest: str
    events_processed: int
    ticks: int
    wall_seconds: float
    system: SimSystem = None


def run(config: SimConfig, data: SeedDataset, ops: OperationSet, layer=None) -> ReadoutBundle:
    t0 = time.perf_counter()
    sys = init(config, data, ops, layer)
    return finish(sys, t0)


def finish(sys: SimSystem, t0: float | None = None) -> ReadoutBundle:
    """Step ``sys`` to completion and collect the readout."""
    t0 = time.perf_counter() if t0 is None else t0
    while sys.queue or sys.tick < sys.config.t_max:
        step(sys)
    sys.event_log.close()
    snap = None
    if sys.run_dir and sys.config.final_snapshot:
        snap = write_snapshot(sys)
    metrics = sys.ops.metric_tables(sys)
    if sys.run_dir:
        write_metric_tables(metrics, sys.run_dir)
    return ReadoutBundle(
        metrics=metrics, final_snapshot=snap,
        event_log_path=sys.event_log.path, event_log_digest=sys.event_log.digest(),
        state_digest=state_digest(sys), events_processed=sys.events_processed,
        ticks=sys.tick, wall_seconds=time.perf_counter() - t0, system=sys)


# --------------------------------------------------------------------------
# snapshots


def snapshot_records(sys: SimSystem) -> Iterable[dict]:
    a = sys.agents
    yield {"tick": sys.tick, "n_agents": len(a), "profiles": "profiles.jsonl",
           "env": {"static": dict(sys.env.static_part), "dynamic": sys.env.dynamic_part}}
    internal = {k: v.tolist() for k, v in a.internal.items()}
    external = {k: v.tolist() for k, v in a.external.items()}
    pidx = a.profile_index.tolist()
    active = a.active.tolist()
    for i in range(len(a)):
        yield {"id": i, "profile_ref": pidx[i], "active": active[i],
               "internal": {k: v[i] for k, v in internal.items()},
               "external": {k: v[i] for k, v in external.items()}}


def write_snapshot(sys: SimSystem) -> Path:
    path = sys.run_dir / f"snapshot_{sys.tick}.d"
    with open(path, "w", encoding="utf-8") as f:
        for rec in snapshot_records(sys):
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":"), default=_json_default) + "\n")
    return path


def read_snapshot(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        return header, [json.loads(line) for line in f if line.strip()]


def write_profiles_pool(agents: AgentStore, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for attrs, text in zip(agents.profiles, agents.profile_texts):
            f.write(json.dumps({**dict(attrs), "profile_text": text}, sort_keys=True,
                               default=_json_default) + "\n")


def state_digest(sys: SimSystem) -> str:
    h = hashlib.sha256()
    h.update(str(sys.tick).encode())
    h.update(json.dumps({"static": dict(sys.env.static_part), "dynamic": sys.env.dynamic_part},
                        sort_keys=True, default=_json_default).encode())
    a = sys.agents
    h.update(a.profile_index.tobytes())
    h.update(a.active.tobytes())
    for part in (a.internal, a.external):
        for k in sorted(part):
            h.update(k.encode())
            col = part[k]
            h.update(col.tobytes() if col.dtype != object else json.dumps(col.tolist()).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# readout


@dataclass(frozen=True)
class MetricQuery:
    """Group events of one kind by attributes of an involved agent and aggregate a field.

    ``field`` is looked up in the log record's outcome first, then in the
    event payload. ``agg`` is one of mean, sum, count.
    """

    name: str
    event_kind: str
    group_by: tuple[str, ...]
    field: str | None = None
    agg: str = "mean"
    role: str = "target"  # which agent's attributes: target | initiator
    where: Callable[[dict], bool] | None = None


def readout(records: Iterable[dict], profiles: Sequence[dict], profile_index: Sequence[int],
            queries: Sequence[MetricQuery]) -> dict[str, list[dict]]:
    """Evaluate metric queries against an event log (pure; replayable from files)."""
    known = set(profiles[0]) if len(profiles) else set()
    for q in queries:
        if q.agg not in ("mean", "sum", "count"):
            raise ValueError(f"unknown aggregate {q.agg!r}")
        for attr in q.group_by:
            if known and attr not in known:
                raise UnknownAttribute(f"{q.name}: unknown attribute {attr!r}")
    acc = {q.name: defaultdict(list) for q in queries}
    by_kind = defaultdict(list)
    for q in queries:
        by_kind[q.event_kind].append(q)
    for rec in records:
        if rec["status"] != "applied":
            continue
        ev = rec["event"]
        qs = by_kind.get(ev["kind"])
        if not qs:
            continue
        outcome = rec.get("outcome") or {}
        for q in qs:
            if q.where is not None and not q.where(rec):
                continue
            ids = ev["targets"] if q.role == "target" else ev["initiators"]
            agent = next((i for i in ids if i != ENV), None)
            if agent is None:
                continue
            attrs = profiles[profile_index[agent]]
            key = tuple(attrs.get(g) for g in q.group_by)
            if q.field is None:
                val = 1
            else:
                val = outcome.get(q.field, ev["payload"].get(q.field))
                if val is None:
                    continue
            acc[q.name][key].append(val)
    out = {}
    for q in queries:
        rows = []
        for key in sorted(acc[q.name], key=lambda k: tuple(str(x) for x in k)):
            vals = acc[q.name][key]
            row = dict(zip(q.group_by, key))
            row["n"] = len(vals)
            if q.agg == "mean":
                row[f"mean_{q.field}"] = float(np.mean(vals))
            elif q.agg == "sum":
                row[f"sum_{q.field}"] = float(np.sum(vals))
            rows.append(row)
        out[q.name] = rows
    return out


def write_metric_tables(tables: dict[str, list[dict]], run_dir: Path, sep: str = "\t") -> None:
    for name, rows in tables.items():
        write_table(rows, Path(run_dir) / f"{name}.tsv", sep)


def write_table(rows: list[dict], path, sep: str = "\t") -> None:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", encoding="utf-8") as f:
        f.write(sep.join(cols) + "\n")
        for r in rows:
            f.write(sep.join(_cell(r.get(c)) for c in cols) + "\n")


def read_table(path, sep: str = "\t") -> list[dict]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(sep)
        rows = []
        for line in f:
            vals = line.rstrip("\n").split(sep)
            rows.append({k: _parse_cell(v) for k, v in zip(header, vals)})
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_cell(v: str):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v
