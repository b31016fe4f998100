import hashlib
import json

import httpx
import numpy as np
import pytest

from socsim.errors import ConfigError, NoBackendAvailable, TemplateError
from socsim.inference.backends import Backend, MockBackend, RemoteBackend, whitespace_tokens
from socsim.inference.cache import SemanticCache
from socsim.inference.embedding import DIM, cosine, embed_prompt, exact_hash, tokenize
from socsim.inference.layer import InferenceLayer
from socsim.inference.router import Router
from socsim.inference.templates import Template, TemplateRegistry
from socsim.inference.types import DecodeParams, InferenceRequest, InferenceResponse
from socsim.scenarios.trust import trustee_request, trustor_request

from conftest import make_layer, make_prompts


def scalar_embed(text, dim=DIM):
    """Scalar-loop oracle of the signed feature-hashing embedding."""
    v = [0.0] * dim
    word = ""
    for ch in text.lower() + " ":
        if ch.isascii() and ch.isalnum():
            word += ch
        elif word:
            h = int.from_bytes(hashlib.blake2b(word.encode(), digest_size=8).digest(), "little")
            v[h % dim] += 1.0 if (h >> 8) & 1 else -1.0
            word = ""
    norm = sum(x * x for x in v) ** 0.5
    return np.array([x / norm for x in v]) if norm else np.zeros(dim)


@pytest.mark.parametrize("text", ["Hello, world!", "You are a Female, 60 years old person.", "a a a b", "", "!!!"])
def test_embedding_matches_scalar_oracle(text):
    assert np.allclose(embed_prompt(text), scalar_embed(text), atol=1e-12)


def test_embedding_properties():
    assert tokenize("Hi, THERE-you2") == ["hi", "there", "you2"]
    v = embed_prompt("some prompt text")
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert cosine(v, embed_prompt("SOME prompt, text")) == pytest.approx(1.0)
    assert cosine(embed_prompt(""), v) == 0.0
    assert exact_hash("a", "p") != exact_hash("b", "p")


def req(text, task="echo", cacheable=True):
    return InferenceRequest(task, "echo", {"text": text}, DecodeParams(json_schema_id=None), cacheable)


def echo_layer(cache=None, capacity=None, workers=1):
    reg = TemplateRegistry({"echo": Template("echo", "{text}")})
    router = Router()
    router.register(MockBackend("m", rules={"echo": lambda v, s: {"said": v["text"]}}, capacity=capacity))
    return InferenceLayer(router, reg, cache=cache, workers=workers)


def linear_best(vecs, q):
    sims = vecs.astype(np.float64) @ q
    return (int(np.argmax(sims)), float(sims.max())) if len(vecs) else (-1, -np.inf)


def test_bucketed_search_agrees_with_linear_scan_oracle():
    tau = 0.9
    cache = SemanticCache(tau=tau, bucket_threshold=0, seed=4)
    prompts = make_prompts(3000, 8)
    checked = 0
    for i, p in enumerate(prompts):
        q = embed_prompt(p)
        h = exact_hash("t", p)
        _, best = linear_best(cache.embeddings(), q)
        res = cache.lookup(h, q)
        if best >= tau + 0.01 or best <= tau - 0.01:
            checked += 1
            assert res.hit == (best >= tau), (i, best)
        if not res.hit:
            cache.insert(h, q, InferenceResponse({"i": i}))
    assert checked > 2500 and cache.hits > 100


def test_exact_duplicate_always_hits():
    cache = SemanticCache(tau=0.999)
    v = embed_prompt("x y z")
    cache.insert(7, v, InferenceResponse({"a": 1}))
    assert cache.lookup(7, np.zeros(DIM)).hit


def test_cache_eviction_and_persistence(tmp_path):
    cache = SemanticCache(capacity=3, tau=0.99)
    vs = [embed_prompt(f"token{i} other{i}") for i in range(4)]
    for i in range(3):
        cache.insert(i, vs[i], InferenceResponse({"i": i}, backend_id="m"), tick=i)
    cache.lookup(0, vs[0])
    cache.lookup(2, vs[2])
    cache.insert(3, vs[3], InferenceResponse({"i": 3}), tick=5)
    assert len(cache) == 3 and cache.evictions == 1
    assert not cache.lookup(1, vs[1]).hit  # the unused entry went first
    cache.save(tmp_path / "c.lspc")
    back = SemanticCache.load(tmp_path / "c.lspc")
    assert sorted(e.exact_hash for e in back.entries()) == [0, 2, 3]
    assert back.lookup(3, vs[3]).entry.response.fields == {"i": 3}


def test_layer_hits_duplicates_within_batch_and_charges_no_tokens():
    layer = echo_layer(SemanticCache(tau=0.95))
    out = layer.execute([req("alpha beta"), req("alpha beta"), req("gamma")])
    assert [r.cache_hit for r in out] == [False, True, False]
    assert out[1].fields == out[0].fields and out[1].tokens == 0
    again = layer.execute([req("gamma")])
    assert again[0].cache_hit


def test_uncacheable_bypasses_cache():
    layer = echo_layer(SemanticCache())
    out = layer.execute([req("same", cacheable=False), req("same", cacheable=False)])
    assert not any(r.cache_hit for r in out)


def test_accounting_identity_over_generated_prompts():
    layer = echo_layer(SemanticCache(tau=0.9))
    resps = []
    prompts = make_prompts(2000, 3)
    for s in range(0, 2000, 250):
        resps += layer.execute([req(p) for p in prompts[s:s + 250]])
    backend_total = sum(s.total_tokens for s in layer.stats.values())
    assert backend_total == sum(r.tokens for r in resps if not r.cache_hit)
    assert all(r.tokens == 0 for r in resps if r.cache_hit)
    rows = layer.token_report(every=500)
    assert [r["requests"] for r in rows] == [500, 1000, 1500, 2000]
    assert rows[-1]["total"] == backend_total and rows[-1]["llm"] == backend_total


def test_schema_violation_and_parse_error():
    reg = TemplateRegistry({"echo": Template("echo", "{text}")})
    router = Router()
    rules = {"bad": lambda v, s: {"thinking_process": "x", "amount": "lots"}, "raw": lambda v, s: "not json"}
    router.register(MockBackend("m", rules=rules))
    layer = InferenceLayer(router, reg)
    d = DecodeParams(json_schema_id="amount_decision")
    out = layer.execute([InferenceRequest("bad", "echo", {"text": "a"}, d),
                         InferenceRequest("raw", "echo", {"text": "a"}, d)])
    assert out[0].error.startswith("schema_violation") and out[1].error.startswith("parse_error")


def test_template_errors():
    with pytest.raises(TemplateError):
        Template("t", "{a} {b}").render({"a": "1"})
    layer = echo_layer()
    out = layer.execute([InferenceRequest("echo", "missing", {})])
    assert out[0].error.startswith("template_error")


def test_builtin_trust_templates():
    reg = TemplateRegistry.builtin()
    prompt = reg.render("trustee", trustee_request("You are a Male, 30 years old person.", 5).variables)
    assert "$15" in prompt and "$5" in prompt
    assert "You are a Male, 30 years old person." in reg.render("trustor", trustor_request("You are a Male, 30 years old person.").variables)


# --------------------------------------------------------------------------
# routing


def two_backends(policy="fidelity_first", fraction=0.0, cap=None, seed=0):
    r = Router(policy, fraction, "s", seed)
    r.register(Backend("llm", kind="mock", fidelity_rank=0, capacity=cap, weight=3.0))
    r.register(Backend("s", kind="surrogate", fidelity_rank=10, weight=1.0, task_classes=frozenset({"t"})))
    return r


def test_fidelity_first_prefers_best_then_spills_over_capacity():
    r = two_backends(cap=2)
    picks = [r.route(req("x", "t")) for _ in range(3)]
    assert picks == ["llm", "llm", "s"]
    r.release("llm", 2)
    assert r.route(req("x", "t")) == "llm"
    with pytest.raises(NoBackendAvailable):
        Router().route(req("x"))


def test_weighted_within_binomial_bound():
    r = two_backends("weighted", seed=5)
    n = 4000
    k = 0
    for _ in range(n):
        b = r.route(req("x", "t"))
        r.release(b)
        k += b == "llm"
    mean, sd = 0.75 * n, (n * 0.75 * 0.25) ** 0.5
    assert abs(k - mean) < 4 * sd


@pytest.mark.parametrize("f,expected", [(0.0, 0), (0.25, 25), (0.5, 50), (1.0, 100), (0.33, 33)])
def test_surrogate_fraction_exact(f, expected):
    r = two_backends("surrogate_fraction", f)
    picks = [r.route(req("x", "t")) for _ in range(100)]
    assert picks.count("s") == expected
    # requests the surrogate cannot serve never go to it
    assert r.route(req("x", "other")) == "llm"


def test_router_config_errors():
    with pytest.raises(ConfigError):
        Router("nope")
    with pytest.raises(ConfigError):
        Router("surrogate_fraction", 1.5)
    r = Router()
    r.register(Backend("a"))
    with pytest.raises(ConfigError):
        r.register(Backend("a"))


def test_capacity_waves_and_workers_do_not_change_results():
    prompts = make_prompts(300, 1)
    a = echo_layer(capacity=7).execute([req(p) for p in prompts])
    b = echo_layer(workers=4).execute([req(p) for p in prompts])
    assert [r.fields for r in a] == [r.fields for r in b]


# --------------------------------------------------------------------------
# remote client


def test_remote_backend_openai_shape(monkeypatch):
    seen = []

    def handler(request):
        seen.append((request.headers.get("authorization"), json.loads(request.content)))
        body = {"choices": [{"message": {"content": '{"thinking_process": "ok", "amount": 4}'}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 5}}
        return httpx.Response(200, json=body)

    monkeypatch.setenv("TEST_KEY", "secret")
    b = RemoteBackend("r", base_url="http://x/v1", model="m", auth_env="TEST_KEY",
                      client=httpx.Client(transport=httpx.MockTransport(handler)))
    router = Router()
    router.register(b)
    layer = InferenceLayer(router)
    out = layer.execute([trustor_request("You are a Male, 30 years old person.")])
    assert out[0].fields["amount"] == 4 and out[0].tokens == 16
    auth, body = seen[0]
    assert auth == "Bearer secret" and body["messages"][0]["role"] == "system"


def test_remote_backend_retries_then_fails(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    b = RemoteBackend("r", base_url="http://x", model="m", retries=2, backoff=(0.0,),
                      client=httpx.Client(transport=httpx.MockTransport(handler)))
    out = b.infer_batch([req("a")], ["a"])
    assert len(calls) == 3 and "failed after 3 attempts" in out[0].error


def test_remote_backend_missing_key():
    b = RemoteBackend("r", base_url="http://x", auth_env="SOCSIM_SURELY_UNSET")
    assert "not set" in b.infer_batch([req("a")], ["a"])[0].error


def test_whitespace_tokens():
    assert whitespace_tokens(" a  b\nc ") == 3


def test_cache_soundness_and_determinism():
    prompts = make_prompts(1500, 21)

    def trace():
        cache = SemanticCache(tau=0.9, bucket_threshold=500, seed=2)
        seq = []
        for p in prompts:
            q, h = embed_prompt(p), exact_hash("t", p)
            res = cache.lookup(h, q)
            if res.hit and res.entry.exact_hash != h:
                stored = cache.embeddings()[res.row].astype(np.float64)
                assert stored @ q >= 0.9 - 1e-6
            if not res.hit:
                cache.insert(h, q, InferenceResponse({}))
            seq.append(res.hit)
        return seq

    assert trace() == trace()


def test_request_recount_identity():
    layer = echo_layer(SemanticCache(tau=0.9))
    prompts = make_prompts(3000, 4)
    resps = layer.execute([req(p) for p in prompts])
    hits = sum(r.cache_hit for r in resps)
    assert sum(s.total_requests for s in layer.stats.values()) == len(prompts) - hits
    assert layer.totals()["cache_hits"] == hits
