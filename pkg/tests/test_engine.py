import json

import numpy as np
import pytest

from socsim.core import ENV, AgentStore, EnvironmentState, Event
from socsim.engine import (MetricQuery, Observation, OperationSet, SeedDataset, SimConfig, finish, init,
                           read_event_log, read_snapshot, read_table, readout, run, step, write_table)
from socsim.errors import BackendError, ConfigError, InvalidSeedData, SimError, UnknownAttribute
from socsim.scenarios import synthesize_profiles
from socsim.scenarios.trust import TrustGameOps

from conftest import make_layer


class PingOps(OperationSet):
    """Each agent is pinged at tick 0; every ping schedules the next one 2 ticks later until ``hops``."""

    name = "ping"

    def __init__(self, hops=3, fail_at=None, bad_policy=False):
        self.hops = hops
        self.fail_at = fail_at
        self.bad_policy = bad_policy
        self.agent_evolutions = []
        self.env_evolutions = []

    def initialize(self, config, data, layer=None):
        agents, env, _ = super().initialize(config, data, layer)
        agents.add_column("internal", "pings", np.zeros(len(agents), dtype=np.int64))
        events = [Event(0, "ping", initiators=(ENV,), targets=(i,), payload={"hop": 0}) for i in range(len(agents))]
        return agents, env, events

    def update(self, sys, event):
        if event.kind != "ping":
            return super().update(sys, event)
        if self.fail_at is not None and sys.tick == self.fail_at:
            raise BackendError("backend down")
        a = event.targets[0]
        sys.agents.set_internal(a, "pings", sys.agents.internal["pings"][a] + 1)
        return {"hop": event.payload["hop"], "value": a % 3}

    def perceive(self, sys, agent, event):
        return Observation(agent, sys.tick, {}, [], event)

    def policy(self, sys, observations):
        out = []
        for o in observations:
            hop = o.triggering_event.payload.get("hop", 0)
            if hop + 1 < self.hops:
                t = sys.tick if self.bad_policy else sys.tick + 2
                out.append(Event(t, "ping", initiators=(o.agent,), targets=(o.agent,), payload={"hop": hop + 1}))
        return out

    def evolve_agents(self, sys):
        self.agent_evolutions.append(sys.tick)

    def evolve_env(self, sys):
        super().evolve_env(sys)
        self.env_evolutions.append(sys.tick)


@pytest.fixture(scope="module")
def profiles():
    return synthesize_profiles(30, 7)


def test_ping_run_counts(profiles):
    b = run(SimConfig(t_max=10), SeedDataset(profiles), PingOps(hops=3))
    assert np.all(b.system.agents.internal["pings"] == 3)
    assert b.events_processed == 90
    assert b.ticks == 10


def test_replay_same_seed_identical(profiles):
    a = run(SimConfig(t_max=6, master_seed=3), SeedDataset(profiles), PingOps())
    b = run(SimConfig(t_max=6, master_seed=3), SeedDataset(profiles), PingOps())
    assert a.event_log_digest == b.event_log_digest and a.state_digest == b.state_digest


def test_empty_profiles_rejected():
    with pytest.raises(InvalidSeedData):
        init(SimConfig(), SeedDataset([]), PingOps())


def test_bad_config_rejected(profiles):
    for cfg in (SimConfig(t_max=-1), SimConfig(agent_evolve_every=0), SimConfig(snapshot_every=0)):
        with pytest.raises(ConfigError):
            init(cfg, SeedDataset(profiles), PingOps())


def test_t_max_zero_processes_tick_zero_only(profiles):
    b = run(SimConfig(t_max=0), SeedDataset(profiles), PingOps(hops=1))
    assert b.events_processed == len(profiles) and b.ticks == 0


def test_idle_advance_runs_evolution(profiles):
    ops = PingOps(hops=1)
    run(SimConfig(t_max=9, agent_evolve_every=3, env_evolve_every=4), SeedDataset(profiles), ops)
    assert ops.agent_evolutions == [3, 6, 9]
    assert ops.env_evolutions == [4, 8]


def test_tick_is_monotonic(profiles):
    sys = init(SimConfig(t_max=8), SeedDataset(profiles), PingOps())
    ticks = []
    while sys.queue or sys.tick < sys.config.t_max:
        step(sys)
        ticks.append(sys.tick)
    assert ticks == sorted(ticks)


def test_policy_may_not_schedule_same_tick(profiles):
    with pytest.raises(SimError):
        run(SimConfig(t_max=4), SeedDataset(profiles), PingOps(bad_policy=True))


def test_backend_error_marks_event_failed(profiles):
    b = run(SimConfig(t_max=6), SeedDataset(profiles), PingOps(fail_at=2))
    statuses = [r["status"] for r in b.system.event_log]
    assert statuses.count("failed") == len(profiles)
    # failed events produce no follow-ups, so hop 2 never happens
    assert np.all(b.system.agents.internal["pings"] == 1)


def test_inactive_targets_dropped(profiles):
    class Deact(PingOps):
        def initialize(self, config, data, layer=None):
            agents, env, events = super().initialize(config, data, layer)
            return agents, env, [Event(0, "deactivate", priority=-1, targets=(0, 1))] + events

    b = run(SimConfig(t_max=6), SeedDataset(profiles), Deact())
    pings = b.system.agents.internal["pings"]
    assert pings[0] == pings[1] == 0 and np.all(pings[2:] == 3)
    assert sum(r["status"] == "dropped" for r in b.system.event_log) == 2


def test_state_writes_outside_update_rejected(profiles):
    class Sneaky(PingOps):
        def perceive(self, sys, agent, event):
            sys.agents.set_internal(agent, "pings", 99)

    with pytest.raises(RuntimeError):
        run(SimConfig(t_max=2), SeedDataset(profiles), Sneaky())


def test_run_dir_artifacts_and_replay(tmp_path, profiles):
    cfg = SimConfig(t_max=6, snapshot_every=2, run_dir=str(tmp_path))
    b = run(cfg, SeedDataset(profiles), PingOps())
    recs = list(read_event_log(tmp_path / "events.log"))
    assert len(recs) == b.events_processed
    header, rows = read_snapshot(b.final_snapshot)
    assert header["n_agents"] == len(profiles) and rows[0]["internal"]["pings"] == 3
    assert (tmp_path / "snapshot_0.d").exists() and (tmp_path / "snapshot_4.d").exists()
    pool = [json.loads(l) for l in (tmp_path / "profiles.jsonl").read_text().splitlines()]
    # readout is replayable from files alone
    q = MetricQuery("by_gender", "ping", ("gender",), field="value")
    live = readout(b.system.event_log, list(b.system.agents.profiles), b.system.agents.profile_index, [q])
    replay = readout(recs, pool, [r["profile_ref"] for r in rows], [q])
    assert live == replay


def test_readout_example_and_unknown_attribute():
    recs = [{"status": "applied", "event": {"kind": "k", "targets": [i], "initiators": [], "payload": {}},
             "outcome": {"x": v}} for i, v in enumerate([1, 3, 10])]
    recs.append({"status": "failed", "event": {"kind": "k", "targets": [0], "initiators": [], "payload": {}},
                 "outcome": {"x": 100}})
    profiles = [{"g": "a"}, {"g": "b"}]
    out = readout(recs, profiles, [0, 0, 1], [MetricQuery("m", "k", ("g",), field="x"),
                                              MetricQuery("c", "k", ("g",), agg="count")])
    assert out["m"] == [{"g": "a", "n": 2, "mean_x": 2.0}, {"g": "b", "n": 1, "mean_x": 10.0}]
    assert [r["n"] for r in out["c"]] == [2, 1]
    with pytest.raises(UnknownAttribute):
        readout(recs, profiles, [0, 0, 1], [MetricQuery("m", "k", ("nope",), field="x")])


def test_table_roundtrip(tmp_path):
    rows = [{"a": 1, "b": 0.1, "c": "x"}, {"a": 2, "b": None, "c": "y"}]
    write_table(rows, tmp_path / "t.tsv")
    assert read_table(tmp_path / "t.tsv") == rows


def test_trust_init_event_count(profiles):
    sys = init(SimConfig(t_max=1), SeedDataset(profiles), TrustGameOps(), make_layer())
    assert len(sys.queue) == 11 * len(profiles)
    b = finish(sys)
    assert b.events_processed == 2 * 11 * len(profiles)


def test_evolution_boundaries_between_sparse_events(profiles):
    class Sparse(PingOps):
        def policy(self, sys, observations):
            return [Event(sys.tick + 10, "ping", targets=(o.agent,), payload={"hop": 9}) for o in observations
                    if o.triggering_event.payload["hop"] == 0]

    ops = Sparse()
    run(SimConfig(t_max=12, agent_evolve_every=3), SeedDataset(profiles), ops)
    assert ops.agent_evolutions == [3, 6, 9, 12]
