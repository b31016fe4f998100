"""Deterministic offline stand-ins for the LLM, one rule per task class."""

from __future__ import annotations

from socsim.inference.backends import MockBackend
from socsim.scenarios.opinion import mock_opinion_rule
from socsim.scenarios.trust import mock_trust_rule

MOCK_RULES = {
    "trustor_decision": mock_trust_rule,
    "trustee_decision": mock_trust_rule,
    "opinion_update": mock_opinion_rule,
}


def mock_backend(backend_id: str = "mock", seed: int = 0, **kw) -> MockBackend:
    return MockBackend(backend_id=backend_id, rules=dict(MOCK_RULES), seed=seed, **kw)
