"""Small feed-forward opinion classifier trained by momentum SGD."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from socsim.errors import DegenerateData, ModelFileError
from socsim.rng import stream
from socsim.surrogate.features import N_FEATURES, check_features

log = logging.getLogger(__name__)

LAYER_DIMS = (N_FEATURES, 64, 32, 3)
MAGIC = b"LSMM"
VERSION = 1


@dataclass
class SurrogateModel:
    weights: list[np.ndarray]  # weights[i] has shape (dims[i], dims[i+1])
    biases: list[np.ndarray]
    version: int = VERSION
    train_seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def init(cls, seed: int, dims=LAYER_DIMS) -> "SurrogateModel":
        rng = stream(seed, "surrogate_init")
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, train_seed=seed)

    @classmethod
    def zeros(cls, dims=LAYER_DIMS) -> "SurrogateModel":
        return cls([np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])],
                   [np.zeros(o) for o in dims[1:]])

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(check_features(X)))

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """(opinion codes, probabilities); ties resolve to the lowest opinion code."""
        probs = self.predict_proba(X)
        return np.argmax(probs, axis=1), probs

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- file format: magic, version u16, n_layers u16, dims u32..., float32 W/b,
    #    u32 metadata length + JSON, trailing sha256
    def save(self, path) -> None:
        parts = [struct.pack("<4sHH", MAGIC, self.version, len(self.weights)),
                 struct.pack(f"<{len(self.dims)}I", *self.dims)]
        for w, b in zip(self.weights, self.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        meta = json.dumps({"train_seed": self.train_seed, **self.meta}, sort_keys=True).encode()
        parts += [struct.pack("<I", len(meta)), meta]
        body = b"".join(parts)
        Path(path).write_bytes(body + hashlib.sha256(body).digest())

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise ModelFileError(f"{path}: not a surrogate model file")
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ModelFileError(f"{path}: content hash mismatch")
        _, version, n_layers = struct.unpack_from("<4sHH", body)
        if version != VERSION:
            raise ModelFileError(f"{path}: version {version}, expected {VERSION}")
        pos = 8
        dims = struct.unpack_from(f"<{n_layers + 1}I", body, pos)
        pos += 4 * (n_layers + 1)
        ws, bs = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            ws.append(np.frombuffer(body, "<f4", i * o, pos).reshape(i, o).astype(np.float64))
            pos += 4 * i * o
            bs.append(np.frombuffer(body, "<f4", o, pos).astype(np.float64))
            pos += 4 * o
        (mlen,) = struct.unpack_from("<I", body, pos)
        meta = json.loads(body[pos + 4:pos + 4 + mlen])
        seed = meta.pop("train_seed", 0)
        return cls(ws, bs, version=version, train_seed=seed, meta=meta)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(model: SurrogateModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient for every parameter (same order as ``params()``)."""
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    z = acts[-1]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(y)
    loss = float(np.mean(logsum - z[np.arange(n), y]))

    delta = np.exp(z - logsum[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for i in range(last, -1, -1):
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads.append((gw, gb))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    out = []
    for gw, gb in reversed(grads):
        out += [gw, gb]
    return loss, out


def gradient_check(model: SurrogateModel, X: np.ndarray, y: np.ndarray, h: float = 1e-5,
                   probes: int = 20, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``probes`` random entries are checked per parameter array; the relative
    error of a pair is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    _, grads = loss_and_grads(model, X, y)
    rng = stream(seed, "gradient_check")
    worst = 0.0
    for p, g in zip(model.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + h
            up = loss_and_grads(model, X, y)[0]
            flat[j] = old - h
            down = loss_and_grads(model, X, y)[0]
            flat[j] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(gflat[j] - num) / max(abs(gflat[j]) + abs(num), 1e-8))
    return worst


def mean_loss(model: SurrogateModel, X, y, batch: int = 65536) -> float:
    total = 0.0
    for s in range(0, len(y), batch):
        z = model.logits(X[s:s + batch])
        z = z - z.max(axis=1, keepdims=True)
        ls = np.log(np.exp(z).sum(axis=1))
        total += float(np.sum(ls - z[np.arange(len(z)), y[s:s + batch]]))
    return total / max(1, len(y))


def accuracy(model: SurrogateModel, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(model.logits(X), axis=1) == y))


@dataclass
class TrainReport:
    train_accuracy: float
    val_accuracy: float
    loss_curve: list[float]  # train loss at init, then after each epoch

    def as_dict(self) -> dict:
        return {"train_accuracy": self.train_accuracy, "val_accuracy": self.val_accuracy,
                "loss_curve": self.loss_curve}


def train(X_train, y_train, X_val=None, y_val=None, epochs: int = 30, batch: int = 256,
          lr: float = 0.05, seed: int = 0, momentum: float = 0.9) -> tuple[SurrogateModel, TrainReport]:
    """Mini-batch SGD with momentum on mean cross-entropy, all in float64.

    Final weights are rounded to float32 so a saved and reloaded model
    predicts exactly like the in-memory one.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(y_train) == 0:
        raise DegenerateData("training split is empty")
    missing = set(range(3)) - set(np.unique(y_train).tolist())
    if missing:
        raise DegenerateData(f"classes {sorted(missing)} absent from training split")
    model = SurrogateModel.init(seed)
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    curve = [mean_loss(model, X_train, y_train)]
    n = len(y_train)
    for epoch in range(epochs):
        order = stream(seed, "surrogate_shuffle", epoch).permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            _, grads = loss_and_grads(model, X_train[idx], y_train[idx])
            for p, v, g in zip(params, velocity, grads):
                v *= momentum
                v -= lr * g
                p += v
        curve.append(mean_loss(model, X_train, y_train))
        log.debug("epoch %d loss %.5f", epoch + 1, curve[-1])
    for p in params:
        p[...] = p.astype(np.float32)
    report = TrainReport(
        train_accuracy=accuracy(model, X_train, y_train),
        val_accuracy=accuracy(model, X_val, y_val) if X_val is not None and len(X_val) else float("nan"),
        loss_curve=curve,
    )
    model.meta = {"epochs": epochs, "batch": batch, "lr": lr, "momentum": momentum,
                  **{k: v for k, v in report.as_dict().items() if k != "loss_curve"}}
    return model, report
