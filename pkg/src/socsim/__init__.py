"""Agent-based social simulation with an LLM inference layer."""

from socsim.core import (
    AgentState,
    EnvironmentState,
    Event,
    EventQueue,
    OpinionState,
    aggregate,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "EnvironmentState",
    "Event",
    "EventQueue",
    "OpinionState",
    "aggregate",
    "__version__",
]
