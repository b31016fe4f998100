"""Mixture-of-models routing."""

from __future__ import annotations

from fractions import Fraction

from socsim.errors import ConfigError, NoBackendAvailable
from socsim.inference.backends import Backend
from socsim.inference.types import BackendStats, InferenceRequest
from socsim.rng import counter_uniform

POLICIES = ("fidelity_first", "weighted", "surrogate_fraction")


class Router:
    """Pick a backend per request.

    ``fidelity_first``: best-ranked backend with spare capacity.
    ``weighted``: draw proportional to weight among backends with spare
    capacity; the draw is keyed by the router's request counter.
    ``surrogate_fraction``: exactly ``floor(k*f)`` of the first ``k``
    requests the surrogate can serve go to it (Bresenham spacing), the rest
    to the highest-fidelity LLM backend.
    """

    def __init__(self, policy: str = "fidelity_first", fraction: float = 0.0,
                 surrogate_id: str | None = None, seed: int = 0):
        if policy not in POLICIES:
            raise ConfigError(f"unknown routing policy {policy!r}; expected one of {POLICIES}")
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"surrogate fraction must be in [0, 1], got {fraction}")
        self.policy = policy
        self.fraction = Fraction(fraction).limit_denominator(1_000_000)
        self.surrogate_id = surrogate_id
        self.seed = seed
        self.backends: dict[str, Backend] = {}
        self.stats: dict[str, BackendStats] = {}
        self._counter = 0
        self._frac_counter: dict[str, int] = {}

    def register(self, backend: Backend) -> None:
        if backend.backend_id in self.backends:
            raise ConfigError(f"duplicate backend id {backend.backend_id!r}")
        self.backends[backend.backend_id] = backend
        self.stats[backend.backend_id] = BackendStats(backend.backend_id)

    def candidates(self, task_class: str) -> list[Backend]:
        found = [b for b in self.backends.values() if b.serves(task_class)]
        return sorted(found, key=lambda b: (b.fidelity_rank, b.backend_id))

    def _available(self, b: Backend) -> bool:
        return b.capacity is None or self.stats[b.backend_id].inflight < b.capacity

    def route(self, req: InferenceRequest) -> str:
        """Choose a backend and reserve one inflight slot on it."""
        cands = self.candidates(req.task_class)
        if not cands:
            raise NoBackendAvailable(f"no backend registered for task class {req.task_class!r}")
        chosen, commit = self._choose(req, cands)
        if chosen is None:
            raise NoBackendAvailable(f"all backends for {req.task_class!r} are at capacity")
        commit()
        self.stats[chosen.backend_id].acquire()
        return chosen.backend_id

    def _choose(self, req, cands):
        def bump():
            self._counter += 1

        if self.policy == "surrogate_fraction":
            sur = self.backends.get(self.surrogate_id)
            if sur is not None and sur.serves(req.task_class):
                k = self._frac_counter.get(req.task_class, 0)
                f = self.fraction
                to_sur = (k + 1) * f.numerator // f.denominator > k * f.numerator // f.denominator
                if to_sur:
                    target = sur
                else:
                    llms = [b for b in cands if b.backend_id != sur.backend_id]
                    target = llms[0] if llms else sur
                if not self._available(target):
                    return None, None

                def commit():
                    self._frac_counter[req.task_class] = k + 1
                    bump()
                return target, commit
            cands = [b for b in cands if b.backend_id != self.surrogate_id] or cands

        avail = [b for b in cands if self._available(b)]
        if not avail:
            return None, None
        if self.policy == "weighted":
            weights = [max(b.weight, 0.0) for b in avail]
            total = sum(weights)
            if total <= 0:
                return avail[0], bump
            u = float(counter_uniform(self.seed, "route_weighted", [self._counter])[0]) * total
            acc = 0.0
            for b, w in zip(avail, weights):
                acc += w
                if u < acc:
                    return b, bump
            return avail[-1], bump
        return avail[0], bump

    def release(self, backend_id: str, n: int = 1) -> None:
        self.stats[backend_id].release(n)
