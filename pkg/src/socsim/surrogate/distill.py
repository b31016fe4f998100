"""Build supervised opinion-update datasets from a teacher backend."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np

from socsim.core import OPINION_LABELS, OpinionState
from socsim.errors import TeacherFailure
from socsim.inference.layer import InferenceLayer
from socsim.inference.templates import TemplateRegistry
from socsim.rng import stream
from socsim.surrogate.features import N_FEATURES, attrs_string, encode_batch

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class DistillDataset:
    X: np.ndarray  # (n, 38) float64
    y: np.ndarray  # (n,) opinion codes
    split: np.ndarray  # (n,) 0 train, 1 val, 2 test
    teacher_id: str = ""
    resampled: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.split == SPLITS.index(name)
        return self.X[sel], self.y[sel]

    def sizes(self) -> dict[str, int]:
        return {s: int(np.sum(self.split == i)) for i, s in enumerate(SPLITS)}

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.X, self.y, self.split):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        np.savez(path, X=self.X, y=self.y, split=self.split,
                 teacher_id=np.array(self.teacher_id), resampled=np.array(self.resampled))

    @classmethod
    def load(cls, path) -> "DistillDataset":
        with np.load(path) as z:
            return cls(z["X"], z["y"], z["split"], str(z["teacher_id"]), int(z["resampled"]))


def split_tags(n: int, seed: int) -> np.ndarray:
    """80/10/10 assignment by a seeded shuffle (floor for train and val)."""
    n_train, n_val = (8 * n) // 10, n // 10
    tags = np.full(n, 2, dtype=np.int8)
    order = stream(seed, "distill_split").permutation(n)
    tags[order[:n_train]] = 0
    tags[order[n_train:n_train + n_val]] = 1
    return tags


def generate_distill_data(teacher, n: int, seed: int, profiles, statement: str | None = None,
                          templates: TemplateRegistry | None = None, batch: int = 8192,
                          max_bad_frac: float = 0.01) -> DistillDataset:
    """``n`` labelled interactions from random profile pairs and opinion states.

    Malformed teacher outputs are redrawn with fresh inputs; more than
    ``max_bad_frac * n`` of them raises TeacherFailure.
    """
    from socsim.scenarios.opinion import DEFAULT_STATEMENT, opinion_request  # scenarios import features

    statement = statement or DEFAULT_STATEMENT
    templates = templates or TemplateRegistry.builtin()
    if n == 0:
        return DistillDataset(np.zeros((0, N_FEATURES)), np.zeros(0, np.int64), np.zeros(0, np.int8),
                              teacher.backend_id)
    texts = [p.profile_text for p in profiles]
    attrs = [attrs_string(p.attributes()) for p in profiles]
    cap = math.floor(max_bad_frac * n)
    rows_r, rows_e, ops_r, ops_e, labels = [], [], [], [], []
    bad = 0
    draw = 0
    while len(labels) < n:
        k = min(batch, n - len(labels))
        rng = stream(seed, "distill_draw", draw)
        draw += 1
        pr = rng.integers(len(profiles), size=k)
        pe = rng.integers(len(profiles), size=k)
        orr = rng.integers(3, size=k)
        oe = rng.integers(3, size=k)
        reqs = [opinion_request(statement, texts[a], attrs[a], int(x), texts[b], attrs[b], int(y), False)
                for a, b, x, y in zip(pr, pe, orr, oe)]
        prompts = [templates.render(r.template_id, r.variables) for r in reqs]
        outs = teacher.infer_batch(reqs, prompts)
        for i, (req, out) in enumerate(zip(reqs, outs)):
            out = InferenceLayer._finish(req, out)
            if not out.ok:
                bad += 1
                if bad > cap:
                    raise TeacherFailure(f"teacher {teacher.backend_id!r} produced {bad} malformed outputs "
                                         f"(cap {cap} for n={n}); last: {out.error}")
                continue
            rows_r.append(pr[i])
            rows_e.append(pe[i])
            ops_r.append(orr[i])
            ops_e.append(oe[i])
            labels.append(int(OpinionState.parse(out.fields["opinion"])))
    if bad:
        log.info("resampled %d malformed teacher outputs", bad)
    X = encode_batch([OPINION_LABELS[o] for o in ops_r], [OPINION_LABELS[o] for o in ops_e],
                     [attrs[i] for i in rows_r], [attrs[i] for i in rows_e])
    return DistillDataset(X, np.asarray(labels, dtype=np.int64), split_tags(n, seed), teacher.backend_id, bad)


def confusion_matrix(y_true, y_pred, k: int = 3) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m
