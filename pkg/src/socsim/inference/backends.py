"""Inference backends: deterministic mock, remote HTTP JSON-completion client."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from socsim.errors import BackendError
from socsim.inference.types import InferenceRequest, InferenceResponse

# rule(variables, seed) -> decoded fields dict, or a raw string to emit verbatim
MockRule = Callable[[dict, int], "dict | str"]


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class Backend:
    """Common registry fields. Subclasses implement :meth:`infer_batch`."""

    backend_id: str
    kind: str = "mock"  # mock | surrogate | remote
    fidelity_rank: int = 0  # lower = higher fidelity
    capacity: int | None = None  # max concurrent requests; None = unbounded
    weight: float = 1.0
    task_classes: frozenset | None = None  # None = serves every task class
    retries: int = 0

    @property
    def is_llm(self) -> bool:
        return self.kind != "surrogate"

    def serves(self, task_class: str) -> bool:
        return self.task_classes is None or task_class in self.task_classes

    def infer_batch(self, requests: list[InferenceRequest], prompts: list[str]) -> list[InferenceResponse]:
        raise NotImplementedError


@dataclass
class MockBackend(Backend):
    """Offline stand-in for an LLM.

    Each task class maps to a rule computing the decision from the request
    variables (which fully determine the rendered prompt) and the master
    seed, so responses are a pure function of (prompt, seed). Token counts
    are whitespace-split units of the prompt and of the rendered response.
    """

    rules: dict[str, MockRule] = field(default_factory=dict)
    seed: int = 0

    def infer_batch(self, requests, prompts):
        out = []
        for req, prompt in zip(requests, prompts):
            t0 = time.perf_counter()
            rule = self.rules.get(req.task_class)
            if rule is None:
                raise BackendError(f"mock backend {self.backend_id!r} has no rule for {req.task_class!r}")
            decision = rule(req.variables, self.seed)
            raw = decision if isinstance(decision, str) else json.dumps(decision)
            out.append(InferenceResponse(
                fields={}, raw=raw, tokens_in=whitespace_tokens(prompt),
                tokens_out=whitespace_tokens(raw), backend_id=self.backend_id,
                latency=time.perf_counter() - t0))
        return out


def _openai_request(model, system, user, decode) -> dict:
    body = {"model": model, "messages": [{"role": "user", "content": user}],
            "max_tokens": decode.max_tokens, "temperature": decode.temperature}
    if system:
        body["messages"].insert(0, {"role": "system", "content": system})
    if decode.json_schema_id:
        body["response_format"] = {"type": "json_object"}
    return body


def _openai_response(data: dict) -> tuple[str, int, int]:
    text = data["choices"][0]["message"]["content"]
    usage = data.get("usage") or {}
    return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))


def _generic_request(model, system, user, decode) -> dict:
    return {"model": model, "system": system, "prompt": user,
            "max_tokens": decode.max_tokens, "temperature": decode.temperature}


def _generic_response(data: dict) -> tuple[str, int, int]:
    return data["text"], int(data.get("tokens_in", 0)), int(data.get("tokens_out", 0))


ADAPTERS = {
    "openai": ("/chat/completions", _openai_request, _openai_response),
    "generic": ("/complete", _generic_request, _generic_response),
}


@dataclass
class RemoteBackend(Backend):
    """HTTP JSON-completion client.

    The API key is read from ``auth_env`` at call time. Failed calls are
    retried ``retries`` times with a fixed backoff schedule.
    """

    base_url: str = ""
    model: str = ""
    auth_env: str | None = None
    provider: str = "openai"
    timeout: float = 60.0
    backoff: tuple = (1.0, 2.0)
    kind: str = "remote"
    retries: int = 2
    client: Any = None  # httpx.Client; injectable for tests
    system_split: str = "\n\n"

    def _client(self):
        if self.client is None:
            import httpx
            self.client = httpx.Client(timeout=self.timeout)
        return self.client

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            key = os.environ.get(self.auth_env)
            if not key:
                raise BackendError(f"environment variable {self.auth_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _call(self, req: InferenceRequest, prompt: str) -> InferenceResponse:
        path, build, parse = ADAPTERS[self.provider]
        system, _, user = prompt.partition(self.system_split) if self.system_split in prompt else ("", "", prompt)
        body = build(self.model, system, user, req.decode)
        last = None
        for attempt in range(self.retries + 1):
            t0 = time.perf_counter()
            try:
                r = self._client().post(self.base_url.rstrip("/") + path, json=body, headers=self._headers())
                r.raise_for_status()
                text, tin, tout = parse(r.json())
                return InferenceResponse(fields={}, raw=text, tokens_in=tin, tokens_out=tout,
                                         backend_id=self.backend_id, latency=time.perf_counter() - t0)
            except BackendError:
                raise
            except Exception as exc:  # network, HTTP status, malformed body
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        raise BackendError(f"{self.backend_id}: failed after {self.retries + 1} attempts: {last}")

    def infer_batch(self, requests, prompts):
        out = []
        for req, prompt in zip(requests, prompts):
            try:
                out.append(self._call(req, prompt))
            except BackendError as exc:
                out.append(InferenceResponse(fields={}, backend_id=self.backend_id, error=str(exc)))
        return out
