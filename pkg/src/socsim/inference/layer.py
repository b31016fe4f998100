"""Bulk inference execution: cache, routing, dispatch, validation, accounting."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from socsim.errors import NoBackendAvailable, TemplateError
from socsim.inference.cache import SemanticCache
from socsim.inference.embedding import embed_prompt, exact_hash
from socsim.inference.router import Router
from socsim.inference.templates import TemplateRegistry
from socsim.inference.types import InferenceRequest, InferenceResponse

log = logging.getLogger(__name__)

SCHEMAS = {
    "amount_decision": {
        "type": "object",
        "properties": {"thinking_process": {"type": "string"}, "amount": {"type": "integer"}},
        "required": ["thinking_process", "amount"],
    },
    "opinion_decision": {
        "type": "object",
        "properties": {"thinking_process": {"type": "string"},
                       "opinion": {"enum": ["agree", "disagree", "neutral"]}},
        "required": ["thinking_process", "opinion"],
    },
}

_VALIDATORS = {k: jsonschema.Draft7Validator(v) for k, v in SCHEMAS.items()}


def validate_fields(schema_id: str | None, fields) -> str | None:
    if schema_id is None:
        return None
    validator = _VALIDATORS.get(schema_id)
    if validator is None:
        return f"unknown schema {schema_id!r}"
    err = next(iter(validator.iter_errors(fields)), None)
    return None if err is None else f"schema_violation: {err.message}"


class InferenceLayer:
    """Executes batches of requests; responses align index-wise with requests.

    Per request: cache lookup, then on a miss route to a backend, call it,
    validate the JSON against the request's schema and, when valid and
    cacheable, store it. Duplicates within one batch hit the entry created by
    their first occurrence and are charged no tokens. Misses are dispatched in
    waves bounded by backend capacity; each wave's calls may run on a thread
    pool, which changes nothing observable because routing, cache writes and
    accounting all happen in input order.
    """

    def __init__(self, router: Router, templates: TemplateRegistry | None = None,
                 cache: SemanticCache | None = None, workers: int = 1, queue_wait: bool = True,
                 chunk_size: int = 4096):
        self.router = router
        self.templates = templates or TemplateRegistry.builtin()
        self.cache = cache
        self.workers = max(1, int(workers))
        self.queue_wait = queue_wait
        self.chunk_size = chunk_size
        self.tick = 0
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._log_backend: list[str] = []  # per request, "" for cache hits / failures before dispatch
        self._log_tokens: list[int] = []
        self._log_hit: list[bool] = []

    @property
    def stats(self):
        return self.router.stats

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def render(self, req: InferenceRequest) -> str:
        return self.templates.render(req.template_id, req.variables)

    def execute(self, reqs: list[InferenceRequest]) -> list[InferenceResponse]:
        n = len(reqs)
        responses: list[InferenceResponse | None] = [None] * n
        prompts: list[str | None] = [None] * n
        for i, req in enumerate(reqs):
            try:
                prompts[i] = self.render(req)
            except TemplateError as exc:
                responses[i] = InferenceResponse(fields={}, error=f"template_error: {exc}")

        todo = [i for i in range(n) if responses[i] is None]
        while todo:
            todo = self._pass(reqs, prompts, responses, todo)

        for r in responses:
            self._log_backend.append("" if r.cache_hit else r.backend_id)
            self._log_tokens.append(0 if r.cache_hit else r.tokens)
            self._log_hit.append(r.cache_hit)
        return responses

    def _pass(self, reqs, prompts, responses, todo) -> list[int]:
        dispatch: list[int] = []
        aliases: dict[int, int] = {}  # request index -> index of in-flight request it hit
        keys: dict[int, int] = {}
        for i in todo:
            req = reqs[i]
            if self.cache is None or not req.cacheable:
                dispatch.append(i)
                continue
            h = exact_hash(req.task_class, prompts[i])
            emb = embed_prompt(prompts[i], self.cache.dim)
            found = self.cache.lookup(h, emb)
            if found.hit and found.entry.ready:
                responses[i] = found.entry.response.as_hit()
            elif found.hit:
                aliases[i] = found.entry.pending
            else:
                self.cache.insert(h, emb, None, tick=self.tick, pending=i)
                keys[i] = h
                dispatch.append(i)

        self._dispatch(reqs, prompts, responses, dispatch)

        for i, h in keys.items():
            r = responses[i]
            if r.ok:
                self.cache.fill(h, r)
            else:
                self.cache.remove(h)
        retry = []
        for i, j in aliases.items():
            if responses[j].ok:
                responses[i] = responses[j].as_hit()
            else:
                retry.append(i)
        return retry

    def _dispatch(self, reqs, prompts, responses, indices):
        queue = list(indices)
        while queue:
            wave: dict[str, list[int]] = {}
            rest: list[int] = []
            for pos, i in enumerate(queue):
                try:
                    bid = self.router.route(reqs[i])
                except NoBackendAvailable as exc:
                    if self.queue_wait and wave:
                        rest = queue[pos:]
                        break
                    responses[i] = InferenceResponse(fields={}, error=f"no_backend: {exc}")
                    continue
                wave.setdefault(bid, []).append(i)
            self._run_wave(reqs, prompts, responses, wave)
            queue = rest

    def _run_wave(self, reqs, prompts, responses, wave):
        jobs = []
        for bid, idx in wave.items():
            step = self.chunk_size
            if self._pool is not None:
                step = max(1, min(step, -(-len(idx) // self.workers)))
            for s in range(0, len(idx), step):
                jobs.append((bid, idx[s:s + step]))

        def call(job):
            bid, idx = job
            backend = self.router.backends[bid]
            try:
                return backend.infer_batch([reqs[i] for i in idx], [prompts[i] for i in idx])
            except Exception as exc:
                log.warning("backend %s failed on %d requests: %s", bid, len(idx), exc)
                return [InferenceResponse(fields={}, backend_id=bid, error=f"backend_error: {exc}")
                        for _ in idx]

        results = list(self._pool.map(call, jobs)) if self._pool is not None else [call(j) for j in jobs]
        for (bid, idx), outs in zip(jobs, results):
            tokens = errors = 0
            latency = 0.0
            for i, r in zip(idx, outs):
                r = self._finish(reqs[i], r)
                responses[i] = r
                tokens += r.tokens
                errors += not r.ok
                latency += r.latency
            self.router.stats[bid].record(len(idx), tokens, errors, latency)
            self.router.release(bid, len(idx))

    @staticmethod
    def _finish(req: InferenceRequest, r: InferenceResponse) -> InferenceResponse:
        if r.error is not None:
            return r
        if not r.fields:
            try:
                fields = json.loads(r.raw)
            except (json.JSONDecodeError, TypeError) as exc:
                r.error = f"parse_error: {exc}"
                return r
            if not isinstance(fields, dict):
                r.error = "parse_error: response is not a JSON object"
                return r
            r.fields = fields
        r.error = validate_fields(req.decode.json_schema_id, r.fields)
        return r

    # ------------------------------------------------------------------
    # accounting

    def token_report(self, every: int = 1) -> list[dict]:
        """Cumulative token series, one row per ``every`` requests (plus the last).

        Columns: ``requests``, one per backend, ``llm`` (non-surrogate
        backends), ``surrogate`` and ``total``.
        """
        n = len(self._log_tokens)
        if n == 0:
            return []
        ids = list(self.router.backends)
        tokens = np.asarray(self._log_tokens, dtype=np.int64)
        backend = np.asarray(self._log_backend, dtype=object)
        cum = {bid: np.cumsum(np.where(backend == bid, tokens, 0)) for bid in ids}
        llm = sum((cum[b] for b in ids if self.router.backends[b].is_llm), np.zeros(n, np.int64))
        sur = sum((cum[b] for b in ids if not self.router.backends[b].is_llm), np.zeros(n, np.int64))
        rows = []
        points = list(range(every - 1, n, every))
        if not points or points[-1] != n - 1:
            points.append(n - 1)
        for k in points:
            row = {"requests": k + 1}
            row.update({b: int(cum[b][k]) for b in ids})
            row.update(llm=int(llm[k]), surrogate=int(sur[k]), total=int(llm[k] + sur[k]))
            rows.append(row)
        return rows

    def totals(self) -> dict:
        llm = sum(s.total_tokens for b, s in self.stats.items() if self.router.backends[b].is_llm)
        sur = sum(s.total_tokens for b, s in self.stats.items() if not self.router.backends[b].is_llm)
        hits = sum(self._log_hit)
        return {"requests": len(self._log_tokens), "llm_tokens": llm, "surrogate_tokens": sur,
                "cache_hits": hits,
                "backend_requests": {b: s.total_requests for b, s in self.stats.items()}}
