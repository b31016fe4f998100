"""Shared fixtures: small profile pools, graphs and mock-backed inference layers."""

import numpy as np
import pytest

from socsim.graph import BaParams, generate_ba
from socsim.inference.layer import InferenceLayer
from socsim.inference.router import Router
from socsim.scenarios import synthesize_profiles
from socsim.scenarios.mock import mock_backend


def make_layer(seed=0, surrogate=None, policy="fidelity_first", fraction=0.0, cache=None, workers=1):
    router = Router(policy, fraction, "surrogate" if surrogate is not None else None, seed)
    router.register(mock_backend("mock", seed=seed))
    if surrogate is not None:
        router.register(surrogate)
    return InferenceLayer(router, cache=cache, workers=workers)


@pytest.fixture(scope="session")
def pool():
    return synthesize_profiles(500, 1)


@pytest.fixture(scope="session")
def small_graph():
    return generate_ba(BaParams(2000, 3, 5))


@pytest.fixture
def layer():
    lay = make_layer()
    yield lay
    lay.close()


@pytest.fixture(scope="session")
def trained_surrogate(pool):
    from socsim.surrogate import generate_distill_data, train
    from socsim.surrogate.distill import DistillDataset  # noqa: F401

    ds = generate_distill_data(mock_backend(), 20_000, 3, pool)
    Xtr, ytr = ds.part("train")
    Xva, yva = ds.part("val")
    model, report = train(Xtr, ytr, Xva, yva, epochs=8, seed=3)
    return model, report, ds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_WORDS = [f"w{i}" for i in range(300)]


def make_prompts(n, seed, base_count=200, length=40):
    """Prompts in near-duplicate families: each is a base sentence with 0-6 tokens swapped,
    plus some exact repeats, so similarities spread across the cache threshold."""
    r = np.random.default_rng(seed)
    bases = [r.choice(len(_WORDS), size=length) for _ in range(base_count)]
    out = []
    for _ in range(n):
        if out and r.random() < 0.1:
            out.append(out[r.integers(len(out))])
            continue
        toks = bases[r.integers(base_count)].copy()
        k = r.integers(0, 7)
        toks[r.choice(length, size=k, replace=False)] = r.integers(len(_WORDS), size=k)
        out.append(" ".join(_WORDS[t] for t in toks))
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
