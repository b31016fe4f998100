"""Serve a trained surrogate as an inference backend."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from socsim.core import OPINION_LABELS
from socsim.errors import FeatureDecodeError
from socsim.inference.backends import Backend
from socsim.inference.types import InferenceResponse
from socsim.surrogate.features import encode_batch
from socsim.surrogate.model import SurrogateModel

REQUIRED = ("influencer_opinion", "influencee_opinion", "influencer_attrs", "influencee_attrs")


def decode_features(variables_list) -> np.ndarray:
    for v in variables_list:
        missing = [k for k in REQUIRED if k not in v]
        if missing:
            raise FeatureDecodeError(f"request lacks variables {missing}")
    try:
        return encode_batch([v["influencer_opinion"] for v in variables_list],
                            [v["influencee_opinion"] for v in variables_list],
                            [v["influencer_attrs"] for v in variables_list],
                            [v["influencee_attrs"] for v in variables_list])
    except ValueError as exc:
        raise FeatureDecodeError(str(exc)) from exc


@dataclass
class SurrogateBackend(Backend):
    """Opinion-update predictions from a SurrogateModel; charges no tokens."""

    model: SurrogateModel = None
    kind: str = "surrogate"
    fidelity_rank: int = 10
    task_classes: frozenset = frozenset({"opinion_update"})

    def infer_batch(self, requests, prompts=None):
        t0 = time.perf_counter()
        X = decode_features([r.variables for r in requests])
        codes, _ = self.model.predict(X)
        per = (time.perf_counter() - t0) / max(1, len(requests))
        return [InferenceResponse(fields={"thinking_process": "", "opinion": OPINION_LABELS[c]},
                                  backend_id=self.backend_id, latency=per)
                for c in codes.tolist()]


def serve_as_backend(model: SurrogateModel, backend_id: str = "surrogate", **kw) -> SurrogateBackend:
    return SurrogateBackend(backend_id=backend_id, model=model, **kw)
