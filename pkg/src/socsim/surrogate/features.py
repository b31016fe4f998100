"""Fixed 38-value feature layout for opinion-update interactions.

    0-2    influencer opinion one-hot (agree, disagree, neutral)
    3-5    influencee opinion one-hot
    6, 7   education level / 8         (influencer, influencee)
    8, 9   income decile / 10
    10, 11 age / 100 (capped at 1)
    12-16  influencer social class one-hot
    17-21  influencee social class one-hot
    22, 23 urban flag                  (influencer, influencee)
    24-27  gender flags                (influencer male, female, influencee male, female)
    28-36  products of the two opinion one-hots, row-major
    37     both hold the same opinion

Missing attributes encode as zeros (an all-zero one-hot group).
"""

from __future__ import annotations

from collections.abc import Mapping
from functools import lru_cache

import numpy as np

from socsim.core import OpinionState
from socsim.errors import FeatureDecodeError, InvalidFeature
from socsim.scenarios.profiles import SOCIAL_CLASSES

N_FEATURES = 38
ATTR_KEYS = ("education", "income_decile", "age", "social_class", "urban_rural", "gender")


def attrs_string(profile) -> str:
    """Compact ``key=value;...`` rendering of the attributes the surrogate uses."""
    get = profile.get if isinstance(profile, Mapping) else lambda k: getattr(profile, k, None)
    return ";".join(f"{k}={'' if get(k) is None else get(k)}" for k in ATTR_KEYS)


@lru_cache(maxsize=1 << 16)
def parse_attrs(text: str) -> tuple:
    """Numeric encoding of an attrs string: (edu, income, age, class_idx, urban, male, female)."""
    d = {}
    for part in text.split(";"):
        if part:
            k, _, v = part.partition("=")
            d[k] = v
    try:
        edu = float(d["education"]) / 8 if d.get("education") else 0.0
        inc = float(d["income_decile"]) / 10 if d.get("income_decile") else 0.0
        age = min(float(d["age"]) / 100, 1.0) if d.get("age") else 0.0
    except ValueError as exc:
        raise FeatureDecodeError(f"bad numeric attribute in {text!r}") from exc
    cls = SOCIAL_CLASSES.index(d["social_class"]) if d.get("social_class") in SOCIAL_CLASSES else -1
    urban = 1.0 if d.get("urban_rural") == "Urban" else 0.0
    g = d.get("gender")
    return edu, inc, age, cls, urban, float(g == "Male"), float(g == "Female")


def encode(inf_op, ee_op, inf_attrs: str, ee_attrs: str) -> np.ndarray:
    return encode_batch([inf_op], [ee_op], [inf_attrs], [ee_attrs])[0]


def encode_batch(inf_ops, ee_ops, inf_attrs, ee_attrs) -> np.ndarray:
    n = len(inf_ops)
    X = np.zeros((n, N_FEATURES), dtype=np.float64)
    r = np.fromiter((int(OpinionState.parse(o)) for o in inf_ops), dtype=np.int64, count=n)
    e = np.fromiter((int(OpinionState.parse(o)) for o in ee_ops), dtype=np.int64, count=n)
    rows = np.arange(n)
    X[rows, r] = 1.0
    X[rows, 3 + e] = 1.0
    A = np.array([parse_attrs(a) for a in inf_attrs], dtype=np.float64).reshape(n, 7)
    B = np.array([parse_attrs(a) for a in ee_attrs], dtype=np.float64).reshape(n, 7)
    X[:, 6], X[:, 7] = A[:, 0], B[:, 0]
    X[:, 8], X[:, 9] = A[:, 1], B[:, 1]
    X[:, 10], X[:, 11] = A[:, 2], B[:, 2]
    for base, M in ((12, A), (17, B)):
        cls = M[:, 3].astype(np.int64)
        ok = cls >= 0
        X[rows[ok], base + cls[ok]] = 1.0
    X[:, 22], X[:, 23] = A[:, 4], B[:, 4]
    X[:, 24], X[:, 25], X[:, 26], X[:, 27] = A[:, 5], A[:, 6], B[:, 5], B[:, 6]
    X[rows, 28 + 3 * r + e] = 1.0
    X[:, 37] = (r == e)
    return X


def check_features(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != N_FEATURES:
        raise InvalidFeature(f"expected {N_FEATURES} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)) or X.min(initial=0) < 0 or X.max(initial=0) > 1:
        raise InvalidFeature("feature values must be finite and in [0, 1]")
    return X
