"""The nine acceptance criteria, each at its stated tolerance.

Every criterion prints one ``PASS``/``FAIL`` line (repeated in the terminal
summary) and then asserts, so a failure is both reported and fails the suite.
"""

import resource
import time

import numpy as np
import pytest

from socsim.core import Event, EventQueue, encode_event
from socsim.engine import SimConfig
from socsim.graph import BaParams, generate_ba
from socsim.inference.cache import SemanticCache
from socsim.inference.embedding import embed_prompt, exact_hash
from socsim.inference.layer import InferenceLayer
from socsim.inference.router import Router
from socsim.inference.templates import Template, TemplateRegistry
from socsim.inference.types import DecodeParams, InferenceRequest
from socsim.inference.backends import MockBackend
from socsim.scenarios import synthesize_profiles
from socsim.scenarios.mock import mock_backend
from socsim.scenarios.opinion import OpinionScenarioConfig, opinion_sim, total_shift, trajectory_divergence
from socsim.scenarios.trust import (MULTIPLIER, TrustOutcome, fair_return, trust_game_round,
                                    trust_scaling_experiment, trustee_request)
from socsim.surrogate import generate_distill_data, serve_as_backend, train
from socsim.surrogate.model import SurrogateModel, accuracy, gradient_check

from conftest import ACCEPTANCE_LINES, make_layer, make_prompts


def report(number, title, checks, seconds, limit=None):
    """Print the verdict line for a criterion and fail the test if any check failed."""
    ok = all(v for v, _ in checks.values())
    timing = f"{seconds:.1f}s" + (f" (limit {limit}s)" if limit else "")
    details = "; ".join(f"{k}={d}" + ("" if v else " [x]") for k, (v, d) in checks.items())
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {details} | {timing}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def surrogate_layer(model, fraction, seed=0, workers=1):
    router = Router("surrogate_fraction", fraction, "surrogate", seed)
    router.register(mock_backend("llm", seed=seed))
    router.register(serve_as_backend(model))
    return InferenceLayer(router, workers=workers)


@pytest.fixture(scope="module")
def graph_1e4():
    return generate_ba(BaParams(10_000, 3, 0))


@pytest.fixture(scope="module")
def pool_1e4():
    return synthesize_profiles(10_000, 0)


@pytest.fixture(scope="module")
def distilled(pool_1e4):
    t0 = time.perf_counter()
    ds = generate_distill_data(mock_backend(), 100_000, 0, pool_1e4)
    (Xtr, ytr), (Xva, yva) = ds.part("train"), ds.part("val")
    model, rep = train(Xtr, ytr, Xva, yva, seed=0)
    return ds, model, rep, time.perf_counter() - t0


# --------------------------------------------------------------------------


def test_criterion_1_event_queue_determinism():
    def session(seed, n_ops=100_000):
        r = np.random.default_rng(seed)
        q = EventQueue()
        popped, log = [], []
        for op in r.random(n_ops):
            if op < 0.55 or not q:
                t = q.current_tick + int(r.integers(1, 50))
                q.enqueue(Event(t, "e", priority=int(r.integers(-5, 5)), payload={"x": int(r.integers(1000))}))
            else:
                e = q.pop()
                q.current_tick = e.time
                popped.append(e.sort_key)
                log.append(encode_event(e))
        return popped, log

    t0 = time.perf_counter()
    popped, log_a = session(42)
    _, log_b = session(42)
    dt = time.perf_counter() - t0
    report(1, "event-queue determinism", {
        "non_decreasing": (all(a <= b for a, b in zip(popped, popped[1:])), f"{len(popped)} pops"),
        "identical_logs": (log_a == log_b, "2 runs"),
        "runtime": (dt < 5, f"{dt:.2f}s<5s"),
    }, dt, 5)


def test_criterion_2_ba_structure():
    t0 = time.perf_counter()
    n, m = 100_000, 3
    g = generate_ba(BaParams(n, m, 0))
    deg = g.degrees()
    ks = np.arange(10, 301)
    ccdf = 1.0 - np.searchsorted(np.sort(deg), ks, side="left") / n
    keep = ccdf > 0
    slope = float(np.polyfit(np.log(ks[keep]), np.log(ccdf[keep]), 1)[0])
    dt = time.perf_counter() - t0
    report(2, "preferential-attachment structure", {
        "edges": (g.m_edges == 3 + 3 * (n - 3), f"{g.m_edges}"),
        "handshake": (int(deg.sum()) == 2 * g.m_edges, "sum(deg)=2|E|"),
        "ccdf_slope": (-2.2 <= slope <= -1.8, f"{slope:.3f} in [-2.2,-1.8]"),
        "runtime": (dt < 30, f"{dt:.1f}s<30s"),
    }, dt, 30)


def test_criterion_3_opinion_conservation_and_regimes(graph_1e4, pool_1e4):
    t0 = time.perf_counter()
    conserved = True
    above_start = above_random = 0
    random_smallest = 0
    reps = 8
    n_influencees = None
    for rep in range(reps):
        rows = {}
        for regime in ("1D1N", "1A1N", "Random"):
            sc = OpinionScenarioConfig(seeding=regime, rounds=20)
            b = opinion_sim(sc, graph_1e4, pool_1e4, make_layer(rep), SimConfig(master_seed=rep))
            r = b.metrics["opinion_counts"]
            n_influencees = b.system.env.static_part["n_influencees"]
            conserved &= len(r) == 21 and all(x["agree"] + x["disagree"] + x["neutral"] == n_influencees for x in r)
            rows[regime] = r
        a = rows["1A1N"]
        above_start += a[-1]["agree"] > a[0]["agree"]
        above_random += a[-1]["agree"] > rows["Random"][-1]["agree"]
        if rep == 0:  # the primary matched-seed comparison
            primary = (a[0]["agree"], a[-1]["agree"], rows["Random"][-1]["agree"])
        shifts = {k: total_shift(v) for k, v in rows.items()}
        random_smallest += shifts["Random"] < min(shifts["1D1N"], shifts["1A1N"])
    dt = time.perf_counter() - t0
    report(3, "opinion conservation and regime ordering", {
        "counts_sum": (conserved, f"every round == {n_influencees}"),
        "1A1N_end_above_start_and_Random": (primary[1] > primary[0] and primary[1] > primary[2],
                                            "seed 0: start {} end {} vs Random end {}".format(*primary)),
        "per_repetition_tally": (True, f"above start {above_start}/{reps}, above Random {above_random}/{reps}"),
        "Random_smallest_L1": (random_smallest >= 7, f"{random_smallest}/{reps}>=7"),
        "runtime": (dt < 120, f"{dt:.1f}s<120s"),
    }, dt, 120)


def test_criterion_4_surrogate_distillation(distilled, graph_1e4, pool_1e4):
    ds, model, rep, t_train = distilled
    t0 = time.perf_counter()
    Xte, yte = ds.part("test")
    held_out = accuracy(model, Xte, yte)
    r = np.random.default_rng(0)
    idx = r.choice(len(ds), 256, replace=False)
    grad_err = max(gradient_check(SurrogateModel.init(s), ds.X[idx], ds.y[idx], h=1e-5, seed=s) for s in range(3))
    sc = OpinionScenarioConfig(seeding="Random", rounds=20)
    runs = [opinion_sim(sc, graph_1e4, pool_1e4, surrogate_layer(model, f), SimConfig(master_seed=0))
            for f in (0.0, 1.0)]
    div = trajectory_divergence(runs[0].metrics["opinion_counts"], runs[1].metrics["opinion_counts"])
    dt = t_train + time.perf_counter() - t0
    report(4, "surrogate distillation", {
        "held_out_agreement": (held_out >= 0.95, f"{held_out:.4f}>=0.95"),
        "gradient_check": (grad_err < 1e-4, f"{grad_err:.2e}<1e-4"),
        "divergence_0_vs_100": (div <= 0.05, f"{div:.4f}<=0.05"),
        "runtime": (dt < 300, f"{dt:.1f}s<300s"),
    }, dt, 300)


def test_criterion_5_token_accounting(distilled, graph_1e4, pool_1e4):
    _, model, _, _ = distilled
    t0 = time.perf_counter()
    sc = OpinionScenarioConfig(seeding="Random", rounds=20)
    totals = {}
    for f in (0.0, 0.25, 0.5, 0.75, 1.0):
        layer = surrogate_layer(model, f)
        opinion_sim(sc, graph_1e4, pool_1e4, layer, SimConfig(master_seed=0))
        totals[f] = layer.totals()["llm_tokens"]
    full = totals[0.0]
    ratios = {f: totals[f] / full for f in totals}
    within = all(abs(ratios[f] - (1 - f)) <= 0.02 * (1 - f) for f in totals if f < 1)
    dt = time.perf_counter() - t0
    report(5, "token accounting", {
        "ratios": (within, ", ".join(f"{f}:{ratios[f]:.4f}" for f in totals)),
        "all_surrogate_zero": (totals[1.0] == 0, f"{totals[1.0]}"),
        "runtime": (dt < 120, f"{dt:.1f}s<120s"),
    }, dt, 120)


def test_criterion_6_trust_mechanics():
    t0 = time.perf_counter()
    outcomes, _ = trust_game_round(synthesize_profiles(1000, 6), make_layer(6), SimConfig(t_max=1, master_seed=6))
    valid = all(0 <= o.n_sent <= 10 and o.received == MULTIPLIER * o.n_sent and 0 <= o.r_returned <= o.received
                for o in outcomes)
    fair = all(TrustOutcome("trustor", 0, 1, n, 3 * n, fair_return(n)).trustor_net
               == TrustOutcome("trustor", 0, 1, n, 3 * n, fair_return(n)).trustee_net == n for n in range(11))
    prompt = TemplateRegistry.builtin().render("trustee", trustee_request(
        "You are a Female, 60 years old person.", 5).variables)
    dt = time.perf_counter() - t0
    report(6, "trust-game mechanics", {
        "outcomes_valid": (valid and len(outcomes) == 11_000, f"{len(outcomes)} outcomes"),
        "fair_return": (fair, "R=2N => nets equal N"),
        "prompt_$15": ("$15" in prompt, "N=5"),
        "runtime": (dt < 30, f"{dt:.1f}s<30s"),
    }, dt, 30)


def test_criterion_7_scaling_shape():
    t0 = time.perf_counter()
    _, rows = trust_scaling_experiment([100, 1000, 10_000], lambda: make_layer(7), trials=8, seed=7)
    widths = [r["ci_width"] for r in rows]
    gap = rows[-1]["gap_mean"]
    dt = time.perf_counter() - t0
    report(7, "scaling-law shape", {
        "gap_at_10k": (abs(gap - 1.0) <= 0.5, f"{gap:.3f} within 1.0+-0.5"),
        "ci_shrinks": (widths[0] > widths[1] > widths[2], " > ".join(f"{w:.3f}" for w in widths)),
        "runtime": (dt < 120, f"{dt:.1f}s<120s"),
    }, dt, 120)


def test_criterion_8_prompt_cache():
    t0 = time.perf_counter()
    tau = 0.95
    prompts = make_prompts(10_000, 88, base_count=800, length=60)
    cache = SemanticCache(tau=tau, bucket_threshold=0, seed=8)
    disagreements = checked = dup_miss = 0
    seen = set()
    for p in prompts:
        q, h = embed_prompt(p), exact_hash("t", p)
        n = len(cache)
        best = float((cache.embeddings()[:n].astype(np.float64) @ q).max()) if n else -np.inf
        res = cache.lookup(h, q)
        if h in seen:
            dup_miss += not res.hit
        elif best >= tau + 0.01 or best <= tau - 0.01:
            checked += 1
            disagreements += res.hit != (best >= tau)
        if not res.hit:
            from socsim.inference.types import InferenceResponse
            cache.insert(h, q, InferenceResponse({}))
        seen.add(h)

    reg = TemplateRegistry({"t": Template("t", "{p}")})
    router = Router()
    router.register(MockBackend("m", rules={"t": lambda v, s: {"ok": True}}))
    layer = InferenceLayer(router, reg, cache=SemanticCache(tau=tau))
    resps = layer.execute([InferenceRequest("t", "t", {"p": p}, DecodeParams()) for p in prompts])
    backend_tokens = sum(s.total_tokens for s in layer.stats.values())
    nonhit_tokens = sum(r.tokens for r in resps if not r.cache_hit)
    dt = time.perf_counter() - t0
    report(8, "prompt-cache correctness", {
        "bucketed_vs_linear": (disagreements == 0, f"{disagreements} disagreements over {checked} queries"),
        "duplicates_hit": (dup_miss == 0, f"{len(prompts) - len(seen)} duplicates, {dup_miss} missed"),
        "accounting": (backend_tokens == nonhit_tokens, f"{backend_tokens}=={nonhit_tokens}"),
        "runtime": (dt < 60, f"{dt:.1f}s<60s"),
    }, dt, 60)


def test_criterion_9_throughput_floor(distilled):
    _, model, _, _ = distilled
    import os

    cores = os.cpu_count()
    tg = time.perf_counter()
    g = generate_ba(BaParams(1_000_000, 3, 9))
    t_graph = time.perf_counter() - tg
    pool = synthesize_profiles(10_000, 9)
    sc = OpinionScenarioConfig(seeding="Random", rounds=1)
    results, times = {}, {}
    for workers in (1, 4):
        layer = surrogate_layer(model, 1.0, workers=workers)
        t0 = time.perf_counter()
        b = opinion_sim(sc, g, pool, layer, SimConfig(master_seed=9, workers=workers))
        times[workers] = time.perf_counter() - t0
        layer.close()
        results[workers] = (b.state_digest, b.event_log_digest)
    peak_gb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024 ** 2
    worst = max(times.values())
    report(9, "throughput floor", {
        "round_time": (worst < 60, f"w1={times[1]:.1f}s w4={times[4]:.1f}s <60s on {cores} core(s)"),
        "memory": (peak_gb < 4, f"peak RSS {peak_gb:.2f}GB<4GB"),
        "identical_across_workers": (results[1] == results[4], "digests equal"),
        "graph_build": (True, f"{t_graph:.1f}s (not part of the round)"),
    }, worst, 60)
