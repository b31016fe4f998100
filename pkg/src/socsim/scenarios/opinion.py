"""Opinion propagation from high-degree influencers to their neighbours."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from socsim.core import ENV, OPINION_LABELS, AgentStore, EnvironmentState, Event, OpinionState
from socsim.engine import Observation, OperationSet, SeedDataset, SimConfig, run
from socsim.errors import ConfigError, InvalidSeedData
from socsim.graph import CsrGraph, ceil_count, load_graph, top_degree_fraction
from socsim.inference.types import DecodeParams, InferenceRequest
from socsim.rng import counter_choice, stream
from socsim.surrogate.features import attrs_string, parse_attrs

DEFAULT_STATEMENT = "AI automation will lead to mass unemployment"
REGIMES = ("1D1N", "1A1N", "Random")
_REGIME_ALIASES = {"1d1n": "1D1N", "oned1n": "1D1N", "1a1n": "1A1N", "onea1n": "1A1N", "random": "Random"}

# event priorities within a tick
_P_ROUND = 0
_P_INFLUENCE = 10
_P_COUNT = 100


def normalize_regime(name: str) -> str:
    try:
        return _REGIME_ALIASES[str(name).lower()]
    except KeyError:
        raise ConfigError(f"unknown seeding regime {name!r}; expected one of {REGIMES}") from None


@dataclass
class OpinionScenarioConfig:
    statement: str = DEFAULT_STATEMENT
    seeding: str = "Random"
    influencer_frac: float = 0.20
    sample_frac_per_round: float = 0.01
    rounds: int = 20
    graph_path: str | None = None
    pool_size: int = 10_000
    cacheable: bool = True

    def validate(self) -> None:
        self.seeding = normalize_regime(self.seeding)
        for name in ("influencer_frac", "sample_frac_per_round"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")


def seed_influencer_opinions(influencers: np.ndarray, regime: str, seed: int) -> np.ndarray:
    """Opinion codes for the (id-sorted) influencers under a seeding regime.

    The half/half regimes alternate starting with Neutral, so an odd count
    gives Neutral the extra influencer.
    """
    regime = normalize_regime(regime)
    k = len(influencers)
    if regime == "Random":
        return counter_choice(seed, "influencer_opinion", influencers, 3).astype(np.int8)
    other = OpinionState.DISAGREE if regime == "1D1N" else OpinionState.AGREE
    out = np.full(k, int(OpinionState.NEUTRAL), dtype=np.int8)
    out[1::2] = int(other)
    return out


def sample_round(influencers: np.ndarray, frac: float, round_no: int, seed: int) -> np.ndarray:
    """ceil(frac * |influencers|) distinct influencers for one round, sorted by id."""
    k = ceil_count(frac, len(influencers))
    pick = stream(seed, "round_sample", round_no).choice(len(influencers), size=k, replace=False)
    return np.sort(influencers[pick])


def opinion_request(statement, influencer_text, influencer_attrs, influencer_opinion,
                    influencee_text, influencee_attrs, influencee_opinion,
                    cacheable: bool = True) -> InferenceRequest:
    variables = {
        "statement": statement,
        "influencer_profile": influencer_text,
        "influencer_attrs": influencer_attrs,
        "influencer_opinion": OpinionState.parse(influencer_opinion).label,
        "influencee_profile": influencee_text,
        "influencee_attrs": influencee_attrs,
        "influencee_opinion": OpinionState.parse(influencee_opinion).label,
    }
    return InferenceRequest("opinion_update", "opinion_update", variables,
                            DecodeParams(max_tokens=256, temperature=0.0, json_schema_id="opinion_decision"),
                            cacheable)


def education_gap_update(influencer_edu, influencee_edu, influencer_op, influencee_op):
    """The stand-in update rule: adopt the influencer's view when they are at
    least as educated, otherwise keep one's own. Works on scalars or arrays."""
    return np.where(np.asarray(influencer_edu) >= np.asarray(influencee_edu), influencer_op, influencee_op)


def mock_opinion_rule(variables: dict, seed: int) -> dict:
    r_edu = parse_attrs(variables["influencer_attrs"])[0]
    e_edu = parse_attrs(variables["influencee_attrs"])[0]
    if r_edu >= e_edu:
        why = "They seem at least as well informed as I am, so I find their view convincing."
        op = variables["influencer_opinion"]
    else:
        why = "Their argument does not outweigh what I already know, so I keep my view."
        op = variables["influencee_opinion"]
    return {"thinking_process": why, "opinion": op}


# --------------------------------------------------------------------------
# engine operations


class OpinionOps(OperationSet):
    """Tick layout: round r starts at tick 2r-1 with an event targeting the
    sampled influencers; their policy emits one aggregated influence event per
    influencee neighbour for tick 2r, where the opinion counts are also taken.
    Tick 0 records the initial counts.
    """

    name = "opinion"

    def __init__(self, scenario: OpinionScenarioConfig, graph: CsrGraph):
        scenario.validate()
        self.scenario = scenario
        self.graph = graph
        self.influencers = np.zeros(0, dtype=np.int64)
        self.attrs: list[str] = []

    def initialize(self, config: SimConfig, data: SeedDataset, layer=None):
        g = self.graph
        pool = data.profiles
        if g is None:
            raise InvalidSeedData("opinion scenario needs a graph")
        seed = config.master_seed
        ids = np.arange(g.n, dtype=np.int64)
        pidx = counter_choice(seed, "profile_assign", ids, len(pool))
        agents = AgentStore([p.attributes() for p in pool], [p.profile_text for p in pool], pidx)
        self.attrs = [attrs_string(a) for a in agents.profiles]

        infl = top_degree_fraction(g, self.scenario.influencer_frac).astype(np.int64)
        self.influencers = infl
        is_infl = np.zeros(g.n, dtype=bool)
        is_infl[infl] = True
        opinion = counter_choice(seed, "influencee_opinion", ids, 3).astype(np.int8)
        opinion[infl] = seed_influencer_opinions(infl, self.scenario.seeding, seed)
        agents.add_column("internal", "opinion", opinion)
        agents.add_column("external", "influencer", is_infl)
        agents.add_column("external", "degree", g.degrees().astype(np.int64))

        env = EnvironmentState(
            {"statement": self.scenario.statement, "seeding": self.scenario.seeding,
             "n_influencers": len(infl), "n_influencees": int(g.n - len(infl))},
            {"round": 0, "tick": 0})
        events = [Event(0, "count_opinions", _P_COUNT, (ENV,), (ENV,), {"round": 0})]
        for r in range(1, self.scenario.rounds + 1):
            sampled = sample_round(infl, self.scenario.sample_frac_per_round, r, seed)
            events.append(Event(2 * r - 1, "opinion_round", _P_ROUND, (ENV,), tuple(sampled.tolist()),
                                {"round": r}))
            events.append(Event(2 * r, "count_opinions", _P_COUNT, (ENV,), (ENV,), {"round": r}))
        return agents, env, events

    def perceive(self, sys, agent, event):
        if event.kind != "opinion_round":
            return None
        nb = self.graph.neighbors_of(agent)
        nb = nb[~sys.agents.external["influencer"][nb]]
        ops = sys.agents.internal["opinion"]
        visible = [(int(j), {"opinion": int(ops[j])}) for j in nb]
        return Observation(agent, sys.tick, {"statement": sys.env.static_part["statement"],
                                             "round": event.payload["round"]}, visible, event)

    def policy(self, sys, observations):
        out = []
        ops = sys.agents.internal["opinion"]
        for o in observations:
            r = o.visible_env["round"]
            inf_op = OPINION_LABELS[int(ops[o.agent])]
            for j, _ in o.visible_neighbors:
                out.append(Event(sys.tick + 1, "influence", _P_INFLUENCE, (o.agent,), (j,),
                                 {"round": r, "influencer": o.agent, "influencee": j,
                                  "influencer_opinion": inf_op},
                                 agg_key=f"opinion_round_{r}"))
        return out

    def update(self, sys, event):
        if event.kind == "opinion_round":
            sys.env.dynamic_part["round"] = event.payload["round"]
            return {"round": event.payload["round"], "sampled": len(event.targets)}
        if event.kind == "count_opinions":
            ops = sys.agents.internal["opinion"][~sys.agents.external["influencer"]]
            c = np.bincount(ops, minlength=3)
            return {"round": event.payload["round"], **{lab: int(c[i]) for i, lab in enumerate(OPINION_LABELS)}}
        if event.kind == "influence":
            return self._influence(sys, event.members())
        return super().update(sys, event)

    def _influence(self, sys, members: list[dict]) -> dict:
        """Resolve interactions as if one at a time in member order.

        An influencee reached by several influencers is updated in waves: wave
        k holds every influencee's k-th interaction, so each request sees the
        opinion left by the previous one while every wave is one bulk call.
        """
        if sys.layer is None:
            raise ConfigError("opinion scenario needs an inference layer")
        n = len(members)
        r_ids = np.fromiter((m["influencer"] for m in members), dtype=np.int64, count=n)
        e_ids = np.fromiter((m["influencee"] for m in members), dtype=np.int64, count=n)
        r_ops = np.fromiter((int(OpinionState.parse(m["influencer_opinion"])) for m in members),
                            dtype=np.int64, count=n)
        waves: dict[int, list[int]] = defaultdict(list)
        seen: dict[int, int] = defaultdict(int)
        for k, j in enumerate(e_ids.tolist()):
            waves[seen[j]].append(k)
            seen[j] += 1

        agents = sys.agents
        opinion = agents.internal["opinion"]
        texts, pidx = agents.profile_texts, agents.profile_index
        statement = sys.env.static_part["statement"]
        prior = np.empty(n, dtype=np.int64)
        post = np.empty(n, dtype=np.int64)
        failed = np.zeros(n, dtype=bool)
        for w in sorted(waves):
            idx = waves[w]
            reqs = []
            for k in idx:
                a, b = pidx[r_ids[k]], pidx[e_ids[k]]
                prior[k] = opinion[e_ids[k]]
                reqs.append(opinion_request(statement, texts[a], self.attrs[a], int(r_ops[k]),
                                            texts[b], self.attrs[b], int(prior[k]), self.scenario.cacheable))
            for k, resp in zip(idx, sys.layer.execute(reqs)):
                if resp.ok:
                    post[k] = int(OpinionState.parse(resp.fields["opinion"]))
                else:
                    failed[k] = True
                    post[k] = prior[k]
            sel = np.asarray(idx, dtype=np.int64)
            agents.set_internal(e_ids[sel], "opinion", post[sel])
        return {"round": members[0]["round"] if members else None, "n": n,
                "changed": int(np.sum(post != prior)), "failed_count": int(failed.sum()),
                "influencer": r_ids.tolist(), "influencee": e_ids.tolist(),
                "influencer_opinion": r_ops.tolist(), "prior": prior.tolist(), "post": post.tolist(),
                "failed": failed.tolist()}

    def metric_tables(self, sys):
        tables = {"opinion_counts": opinion_counts(sys.event_log)}
        tables.update(influence_stratification(sys.event_log, list(sys.agents.profiles),
                                               sys.agents.profile_index))
        if sys.layer is not None:
            n = len(sys.layer._log_tokens)
            tables["token_usage"] = sys.layer.token_report(every=max(1, n // 1000))
            tables["backend_stats"] = [s.as_dict() for s in sys.layer.stats.values()]
        return tables


# --------------------------------------------------------------------------
# readouts


def opinion_counts(records) -> list[dict]:
    """Per-round influencee opinion counts (round 0 = initial), with shares,
    per-opinion deltas and the L1 distance to the previous round's shares."""
    rows = []
    for rec in records:
        if rec["status"] == "applied" and rec["event"]["kind"] == "count_opinions":
            o = rec["outcome"]
            rows.append({"round": o["round"], **{lab: o[lab] for lab in OPINION_LABELS}})
    rows.sort(key=lambda r: r["round"])
    prev = None
    for row in rows:
        total = sum(row[lab] for lab in OPINION_LABELS)
        row["total"] = total
        shares = np.array([row[lab] / total if total else 0.0 for lab in OPINION_LABELS])
        for lab, s in zip(OPINION_LABELS, shares):
            row[f"share_{lab}"] = float(s)
        for lab in OPINION_LABELS:
            row[f"delta_{lab}"] = row[lab] - prev[lab] if prev else 0
        row["shift_l1"] = float(np.abs(shares - prev_shares).sum()) if prev else 0.0
        prev, prev_shares = row, shares
    return rows


def _shares(row) -> np.ndarray:
    return np.array([row[f"share_{lab}"] for lab in OPINION_LABELS])


def total_shift(rows) -> float:
    """L1 distance between the first and last rounds' opinion shares."""
    if not rows:
        return 0.0
    return float(np.abs(_shares(rows[-1]) - _shares(rows[0])).sum())


def trajectory_divergence(rows_a, rows_b) -> float:
    """Max over shared rounds of the L1 distance between opinion shares."""
    b = {r["round"]: r for r in rows_b}
    common = [r for r in rows_a if r["round"] in b]
    if not common:
        return 0.0
    return max(float(np.abs(_shares(r) - _shares(b[r["round"]])).sum()) for r in common)


def income_tercile(decile) -> str | None:
    if decile is None:
        return None
    d = int(decile)
    return "low" if d <= 3 else ("middle" if d <= 7 else "high")


def interactions(records):
    """Yield (influencer, influencee, influencer_opinion, prior, post) for every
    interaction that got an answer."""
    for rec in records:
        if rec["status"] != "applied" or rec["event"]["kind"] != "influence":
            continue
        o = rec["outcome"]
        for a, b, ro, pr, po, f in zip(o["influencer"], o["influencee"], o["influencer_opinion"],
                                       o["prior"], o["post"], o["failed"]):
            if not f:
                yield a, b, ro, pr, po


def influence_stratification(records, profiles, profile_index) -> dict[str, list[dict]]:
    """Success (influencee moves to the influencer's opinion) by influencer
    attributes, resistance (influencee unchanged) by influencee attributes."""
    succ = defaultdict(lambda: [0, 0])
    joint = defaultdict(lambda: [0, 0])
    resist = defaultdict(lambda: [0, 0])
    for a, b, ro, pr, po in interactions(records):
        pa = profiles[profile_index[a]]
        pb = profiles[profile_index[b]]
        win = int(po == ro and po != pr)
        key = pa.get("education")
        succ[key][0] += win
        succ[key][1] += 1
        jk = (key, income_tercile(pa.get("income_decile")))
        joint[jk][0] += win
        joint[jk][1] += 1
        rk = pb.get("education")
        resist[rk][0] += int(po == pr)
        resist[rk][1] += 1

    def order(k):
        return tuple((x is None, "" if x is None else x) for x in (k if isinstance(k, tuple) else (k,)))

    return {
        "success_by_influencer_education": [
            {"education": k, "n": v[1], "successes": v[0], "success_rate": v[0] / v[1]}
            for k, v in sorted(succ.items(), key=lambda kv: order(kv[0]))],
        "resistance_by_influencee_education": [
            {"education": k, "n": v[1], "unchanged": v[0], "resistance_rate": v[0] / v[1]}
            for k, v in sorted(resist.items(), key=lambda kv: order(kv[0]))],
        "success_by_education_income": [
            {"education": k[0], "income_tercile": k[1], "n": v[1], "successes": v[0],
             "success_rate": v[0] / v[1]}
            for k, v in sorted(joint.items(), key=lambda kv: order(kv[0]))],
    }


# --------------------------------------------------------------------------
# driver


def opinion_sim(scenario: OpinionScenarioConfig, graph: CsrGraph | None, profiles, layer,
                config: SimConfig | None = None):
    """Run the opinion scenario; returns the engine's readout bundle."""
    scenario.validate()
    if graph is None:
        if not scenario.graph_path:
            raise InvalidSeedData("no graph given and no graph_path configured")
        graph = load_graph(scenario.graph_path)
    config = config or SimConfig()
    config.t_max = max(config.t_max, 2 * scenario.rounds)
    return run(config, SeedDataset(list(profiles), topology=graph), OpinionOps(scenario, graph), layer)


def expected_interactions(graph: CsrGraph, influencers, sampled) -> int:
    """Number of influence events a round with ``sampled`` influencers emits."""
    is_infl = np.zeros(graph.n, dtype=bool)
    is_infl[np.asarray(influencers)] = True
    return int(sum((~is_infl[graph.neighbors_of(int(v))]).sum() for v in sampled))


__all__ = ["OpinionScenarioConfig", "OpinionOps", "opinion_sim", "mock_opinion_rule",
           "education_gap_update", "influence_stratification", "opinion_counts",
           "trajectory_divergence", "total_shift", "seed_influencer_opinions", "sample_round",
           "DEFAULT_STATEMENT", "REGIMES"]
