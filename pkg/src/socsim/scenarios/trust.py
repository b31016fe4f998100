"""One-shot anonymous trust game."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from socsim.core import ENV, AgentStore, EnvironmentState, Event
from socsim.engine import (MetricQuery, Observation, OperationSet, SeedDataset, SimConfig, readout,
                           run)
from socsim.inference.types import DecodeParams, InferenceRequest
from socsim.rng import counter_choice, stream, tag_hash
from socsim.scenarios.profiles import AGE_BUCKETS, SOCIAL_CLASSES, synthesize_profiles

ENDOWMENT = 10
MULTIPLIER = 3
RECEIVED_AMOUNTS = tuple(MULTIPLIER * n for n in range(1, ENDOWMENT + 1))
CLASS_BONUS = {"Upper": 3, "Upper-middle": 2, "Lower-middle": 1, "Working": 0, "Lower": -1}
_PHRASE_TO_CLASS = {"Upper class": "Upper", "Upper middle class": "Upper-middle",
                    "Lower middle class": "Lower-middle", "Working class": "Working",
                    "Lower class": "Lower"}


@dataclass
class TrustOutcome:
    role: str  # "trustor" (paired decision) or "trustee" (one of the ten received amounts)
    trustor_id: int | None
    trustee_id: int | None
    n_sent: int
    received: int
    r_returned: int
    thinking: str = ""

    @property
    def trustor_net(self) -> int:
        return self.r_returned - self.n_sent

    @property
    def trustee_net(self) -> int:
        return self.received - self.r_returned

    def check(self) -> None:
        assert 0 <= self.n_sent <= ENDOWMENT
        assert self.received == MULTIPLIER * self.n_sent
        assert 0 <= self.r_returned <= self.received

    def as_row(self) -> dict:
        return {**asdict(self), "trustor_net": self.trustor_net, "trustee_net": self.trustee_net}


def fair_return(n_sent: int) -> int:
    """Return that equalises the two nets: 10 - N + R = 3N - R  =>  R = 2N."""
    return 2 * n_sent


# --------------------------------------------------------------------------
# deterministic stand-in policy


def trustor_amount(social_class, education, age, noise: int) -> int:
    amount = 4 + CLASS_BONUS.get(social_class, 0)
    amount += 1 if education is not None and education >= 7 else 0
    amount += 1 if age is not None and age <= 34 else 0
    return int(min(ENDOWMENT, max(0, amount + noise)))


def trustee_amount(social_class, received: int) -> int:
    base = (45 * received + 50) // 100  # round(0.45 * received), halves up
    return int(min(received, max(0, base + CLASS_BONUS.get(social_class, 0))))


def profile_noise(seed: int, profile_text: str) -> int:
    """-1, 0 or +1 keyed by the persona text."""
    return int(counter_choice(seed, "trust_noise", [tag_hash(profile_text)], 3)[0]) - 1


def mock_trust_policy(profile, role: str, received: int | None = None, seed: int = 0,
                      noise: int | None = None) -> int:
    if role == "trustor":
        if noise is None:
            noise = profile_noise(seed, profile.profile_text)
        return trustor_amount(profile.social_class, profile.education, profile.age, noise)
    return trustee_amount(profile.social_class, received)


_AGE = re.compile(r"You are an? [^,]+, (\d+) years old person")
_EDU = re.compile(r"Your highest education level is [^.]*\(ISCED (\d)\)")
_CLASS = re.compile(r"You consider yourself to be ([A-Za-z ]+ class)\.")


def persona_facts(text: str) -> tuple[str | None, int | None, int | None]:
    """(social_class, education, age) as stated in a persona text."""
    age = _AGE.search(text)
    edu = _EDU.search(text)
    cls = _CLASS.search(text)
    return (_PHRASE_TO_CLASS.get(cls.group(1)) if cls else None,
            int(edu.group(1)) if edu else None,
            int(age.group(1)) if age else None)


def mock_trust_rule(variables: dict, seed: int) -> dict:
    """Mock-backend rule: reads the persona from the prompt variables."""
    text = variables["profile_text"]
    cls, edu, age = persona_facts(text)
    if "amount_received" in variables:
        received = int(variables["amount_received"])
        amount = trustee_amount(cls, received)
        why = f"I received ${received} and return a share I consider fair."
    else:
        amount = trustor_amount(cls, edu, age, profile_noise(seed, text))
        why = "I weigh the chance of a fair return against keeping my money."
    return {"thinking_process": why, "amount": amount}


# --------------------------------------------------------------------------
# requests


def trustor_request(profile_text: str, cacheable: bool = True) -> InferenceRequest:
    return InferenceRequest("trustor_decision", "trustor", {"profile_text": profile_text},
                            DecodeParams(max_tokens=256, temperature=0.0, json_schema_id="amount_decision"),
                            cacheable)


def trustee_request(profile_text: str, amount_sent: int, cacheable: bool = True) -> InferenceRequest:
    return InferenceRequest(
        "trustee_decision", "trustee",
        {"profile_text": profile_text, "amount_received": str(MULTIPLIER * amount_sent),
         "amount_sent": str(amount_sent)},
        DecodeParams(max_tokens=256, temperature=0.0, json_schema_id="amount_decision"), cacheable)


def decide(layer, requests: list[InferenceRequest], limits: list[int]) -> list[tuple[int | None, str, str | None]]:
    """Run requests; out-of-range amounts are re-asked once (uncached), then failed."""
    responses = layer.execute(requests)
    out: list = [None] * len(requests)
    retry = []
    for i, (r, hi) in enumerate(zip(responses, limits)):
        if r.ok and 0 <= r.fields["amount"] <= hi:
            out[i] = (int(r.fields["amount"]), r.fields.get("thinking_process", ""), None)
        else:
            retry.append(i)
    if retry:
        again = layer.execute([_uncached(requests[i]) for i in retry])
        for i, r in zip(retry, again):
            if r.ok and 0 <= r.fields["amount"] <= limits[i]:
                out[i] = (int(r.fields["amount"]), r.fields.get("thinking_process", ""), None)
            else:
                reason = r.error or f"amount {r.fields.get('amount')} outside [0, {limits[i]}]"
                out[i] = (None, "", reason)
    return out


def _uncached(req: InferenceRequest) -> InferenceRequest:
    return InferenceRequest(req.task_class, req.template_id, req.variables, req.decode, False)


# --------------------------------------------------------------------------
# engine operations


class TrustGameOps(OperationSet):
    """Tick 0: one trustor decision per agent plus ten trustee decisions.
    Tick 1: the decisions are recorded into agent state."""

    name = "trust_game"

    def __init__(self, roles=("trustor", "trustee"), cacheable: bool = True):
        self.roles = tuple(roles)
        self.cacheable = cacheable

    def initialize(self, config: SimConfig, data: SeedDataset, layer=None):
        profiles = data.profiles
        agents = AgentStore([p.attributes() for p in profiles], [p.profile_text for p in profiles])
        n = len(agents)
        agents.add_column("internal", "sent", np.full(n, -1, dtype=np.int64))
        agents.add_column("internal", "returned", np.full((n, ENDOWMENT), -1, dtype=np.int64))
        env = EnvironmentState({"endowment": ENDOWMENT, "multiplier": MULTIPLIER}, {"tick": 0})
        events = []
        if "trustor" in self.roles:
            events += [Event(0, "trust_decide", priority=0, initiators=(ENV,), targets=(i,),
                             payload={"role": "trustor"}) for i in range(n)]
        if "trustee" in self.roles:
            events += [Event(0, "trust_decide", priority=1, initiators=(ENV,), targets=(i,),
                             payload={"role": "trustee", "amount_sent": k,
                                      "amount_received": MULTIPLIER * k})
                       for i in range(n) for k in range(1, ENDOWMENT + 1)]
        return agents, env, events

    def perceive(self, sys, agent, event):
        if event.kind != "trust_decide":
            return None
        return Observation(agent, sys.tick, dict(sys.env.static_part), [], event)

    def policy(self, sys, observations):
        reqs, limits = [], []
        for o in observations:
            text = sys.agents.profile_texts[sys.agents.profile_index[o.agent]]
            p = o.triggering_event.payload
            if p["role"] == "trustor":
                reqs.append(trustor_request(text, self.cacheable))
                limits.append(ENDOWMENT)
            else:
                reqs.append(trustee_request(text, p["amount_sent"], self.cacheable))
                limits.append(p["amount_received"])
        results = decide(sys.layer, reqs, limits)
        out = []
        for o, (amount, thinking, err) in zip(observations, results):
            p = dict(o.triggering_event.payload)
            p.update(amount=amount, thinking=thinking, failed=err is not None, error=err)
            out.append(Event(sys.tick + 1, "trust_record", priority=o.triggering_event.priority,
                             initiators=(o.agent,), targets=(o.agent,), payload=p))
        return out

    def update(self, sys, event):
        if event.kind != "trust_record":
            return super().update(sys, event)
        p = event.payload
        agent = event.targets[0]
        if p["failed"]:
            return {"role": p["role"], "failed": True}
        if p["role"] == "trustor":
            sys.agents.set_internal(agent, "sent", p["amount"])
            return {"role": "trustor", "sent": p["amount"]}
        sys.agents.set_internal((agent, p["amount_sent"] - 1), "returned", p["amount"])
        return {"role": "trustee", "received": p["amount_received"], "returned": p["amount"],
                "return_ratio": p["amount"] / p["amount_received"]}

    def metric_tables(self, sys):
        return trust_tables(sys.event_log, list(sys.agents.profiles), sys.agents.profile_index)


# --------------------------------------------------------------------------
# experiment drivers


def _is_trustor(rec):
    return rec["outcome"].get("role") == "trustor" and not rec["outcome"].get("failed")


def _is_trustee(rec):
    return rec["outcome"].get("role") == "trustee" and not rec["outcome"].get("failed")


def _received_is(k):
    return lambda rec: _is_trustee(rec) and rec["outcome"]["received"] == k


def trust_tables(records, profiles, profile_index) -> dict[str, list[dict]]:
    """Stratified readouts: send by class/education, return by received amount, etc."""
    records = list(records)
    q = [
        MetricQuery("send_by_class", "trust_record", ("social_class",), "sent", where=_is_trustor),
        MetricQuery("send_by_education", "trust_record", ("education",), "sent", where=_is_trustor),
        MetricQuery("send_by_age_group", "trust_record", ("age_group",), "sent", where=_is_trustor),
        MetricQuery("return_at_9_by_class", "trust_record", ("social_class",), "returned", where=_received_is(9)),
        MetricQuery("return_at_9_by_urban_rural", "trust_record", ("urban_rural",), "returned",
                    where=_received_is(9)),
        MetricQuery("return_at_9_by_education", "trust_record", ("education",), "returned",
                    where=_received_is(9)),
    ]
    tables = readout(records, profiles, profile_index, q)
    # send histograms: the sent amount is a grouping key, which lives in the outcome
    for name, attr in (("send_counts_by_class", "social_class"), ("send_counts_by_education", "education")):
        tables[name] = _send_counts(records, profiles, profile_index, attr)
    tables["return_by_received"] = _return_curve(records)
    return tables


def _send_counts(records, profiles, profile_index, attr) -> list[dict]:
    counts: dict = {}
    for rec in records:
        if rec["status"] == "applied" and rec["event"]["kind"] == "trust_record" and _is_trustor(rec):
            a = profiles[profile_index[rec["event"]["targets"][0]]].get(attr)
            counts.setdefault(a, [0] * (ENDOWMENT + 1))[rec["outcome"]["sent"]] += 1
    rows = []
    for a in sorted(counts, key=str):
        total = sum(counts[a])
        for n, c in enumerate(counts[a]):
            rows.append({attr: a, "sent": n, "count": c, "share": c / total})
    return rows


def _return_curve(records) -> list[dict]:
    by_k: dict[int, list[int]] = {}
    for rec in records:
        if rec["status"] == "applied" and rec["event"]["kind"] == "trust_record" and _is_trustee(rec):
            by_k.setdefault(rec["outcome"]["received"], []).append(rec["outcome"]["returned"])
    rows = []
    for k in sorted(by_k):
        mean_r = float(np.mean(by_k[k]))
        n_sent = k // MULTIPLIER
        rows.append({"received": k, "amount_sent": n_sent, "n": len(by_k[k]), "mean_returned": mean_r,
                     "mean_return_ratio": mean_r / k, "trustor_net": mean_r - n_sent,
                     "fair_return": fair_return(n_sent)})
    return rows


def outcomes_from_state(sys, seed: int) -> list[TrustOutcome]:
    """Pair every trustor with a random other agent's trustee decision at 3N."""
    sent = sys.agents.internal["sent"]
    returned = sys.agents.internal["returned"]
    n = len(sys.agents)
    partners = counter_choice(seed, "trust_pairing", np.arange(n), max(1, n - 1))
    out = []
    for i in range(n):
        if sent[i] < 0:
            continue
        s = int(sent[i])
        j = int(partners[i]) + (partners[i] >= i) if n > 1 else None
        if s == 0 or j is None or returned[j, s - 1] < 0:
            out.append(TrustOutcome("trustor", i, None if s == 0 else j, s, MULTIPLIER * s, 0))
        else:
            out.append(TrustOutcome("trustor", i, j, s, MULTIPLIER * s, int(returned[j, s - 1])))
    for j in range(n):
        for k in range(1, ENDOWMENT + 1):
            r = int(returned[j, k - 1])
            if r >= 0:
                out.append(TrustOutcome("trustee", None, j, k, MULTIPLIER * k, r))
    return out


def trust_game_round(profiles, layer, config: SimConfig | None = None,
                     roles=("trustor", "trustee")) -> tuple[list[TrustOutcome], object]:
    """Run one trust-game pass over ``profiles``; returns (outcomes, readout bundle)."""
    config = config or SimConfig(t_max=1)
    bundle = run(config, SeedDataset(list(profiles)), TrustGameOps(roles), layer)
    return outcomes_from_state(bundle.system, config.master_seed), bundle


def t_interval(values, confidence: float = 0.95) -> tuple[float, float, float]:
    """(mean, low, high) Student-t interval; NaN bounds when fewer than two values."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if len(v) < 2:
        return mean, math.nan, math.nan
    half = float(stats.t.ppf(0.5 + confidence / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v)))
    return mean, mean - half, mean + half


def trust_scaling_experiment(pop_sizes, layer_factory, trials: int = 8, seed: int = 0,
                             young=AGE_BUCKETS[0][0], old=AGE_BUCKETS[-1][0]):
    """Gap in mean trustor send between two age groups, per population size and trial.

    ``layer_factory()`` returns a fresh inference layer per run. Returns
    (per-trial rows, per-size rows with the t-interval of the gap).
    """
    sizes = list(pop_sizes)
    if sizes != sorted(sizes):
        raise ValueError("population sizes must be ascending")
    trial_rows, size_rows = [], []
    for size in sizes:
        gaps = []
        for trial in range(trials):
            trial_seed = int(stream(seed, "trust_trial", size * 1000 + trial).integers(2**62))
            profiles = synthesize_profiles(size, trial_seed)
            cfg = SimConfig(t_max=1, master_seed=trial_seed)
            layer = layer_factory()
            _, bundle = trust_game_round(profiles, layer, cfg, roles=("trustor",))
            sent = bundle.system.agents.internal["sent"]
            groups = np.array([p.attributes()["age_group"] for p in profiles])
            ok = sent >= 0
            m_young = float(sent[ok & (groups == young)].mean())
            m_old = float(sent[ok & (groups == old)].mean())
            gaps.append(m_young - m_old)
            trial_rows.append({"size": size, "trial": trial, f"mean_send_{young}": m_young,
                               f"mean_send_{old}": m_old, "gap": m_young - m_old})
        mean, lo, hi = t_interval(gaps)
        size_rows.append({"size": size, "trials": trials, "gap_mean": mean, "ci_low": lo, "ci_high": hi,
                          "ci_width": hi - lo, "ci_defined": trials >= 2})
    return trial_rows, size_rows


__all__ = ["TrustOutcome", "TrustGameOps", "mock_trust_policy", "mock_trust_rule", "trust_game_round",
           "trust_scaling_experiment", "fair_return", "SOCIAL_CLASSES"]
