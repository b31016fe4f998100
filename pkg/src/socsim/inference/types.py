"""Request/response records flowing through cache, router and backends."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any


@dataclass(frozen=True)
class DecodeParams:
    max_tokens: int = 256
    temperature: float = 0.0
    json_schema_id: str | None = None


@dataclass(frozen=True)
class InferenceRequest:
    task_class: str
    template_id: str
    variables: dict[str, str]
    decode: DecodeParams = field(default_factory=DecodeParams)
    cacheable: bool = True


@dataclass
class InferenceResponse:
    fields: dict[str, Any]
    tokens_in: int = 0
    tokens_out: int = 0
    backend_id: str = ""
    cache_hit: bool = False
    latency: float = 0.0
    raw: str = ""
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def tokens(self) -> int:
        return self.tokens_in + self.tokens_out

    def as_hit(self) -> "InferenceResponse":
        return replace(self, fields=dict(self.fields), tokens_in=0, tokens_out=0,
                       cache_hit=True, latency=0.0)

    def to_record(self) -> dict:
        return {"fields": self.fields, "tokens_in": self.tokens_in, "tokens_out": self.tokens_out,
                "backend_id": self.backend_id, "raw": self.raw, "error": self.error}

    @classmethod
    def from_record(cls, rec: dict) -> "InferenceResponse":
        return cls(**rec)


@dataclass
class BackendStats:
    backend_id: str
    inflight: int = 0
    total_requests: int = 0
    total_tokens: int = 0
    error_count: int = 0
    ewma_latency: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, n_requests: int, tokens: int, errors: int, latency: float, alpha=0.2):
        with self._lock:
            self.total_requests += n_requests
            self.total_tokens += tokens
            self.error_count += errors
            if n_requests:
                per = latency / n_requests
                self.ewma_latency = per if self.ewma_latency == 0 else (
                    alpha * per + (1 - alpha) * self.ewma_latency)

    def acquire(self, n=1):
        with self._lock:
            self.inflight += n

    def release(self, n=1):
        with self._lock:
            self.inflight -= n

    def as_dict(self) -> dict:
        return {"backend_id": self.backend_id, "inflight": self.inflight,
                "total_requests": self.total_requests, "total_tokens": self.total_tokens,
                "error_count": self.error_count, "ewma_latency": self.ewma_latency}
