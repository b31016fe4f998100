"""Run configuration: a TOML file with [sim], [scenario], [backends] and [cache].

Every key is listed in ``SCHEMA``; anything else is an error. Command-line
overrides use dotted paths (``sim.master_seed=7``, ``backends.mock.capacity=64``)
and are parsed as TOML values, falling back to a bare string.

    [sim]        t_max, master_seed, snapshot_every, agent_evolve_every,
                 env_evolve_every, workers, output_dir, run_id
    [scenario]   name (trust_game | trust_scaling | opinion) plus the keys below
    [backends]   policy, fraction, surrogate_id, seed, and one sub-table per
                 backend: kind (mock | surrogate | remote), fidelity_rank,
                 capacity, weight, base_url, auth_env, model, provider,
                 model_path, task_classes
    [cache]      enabled, tau, capacity, bucket_threshold, dim, seed
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

from socsim.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = {
    "sim": {
        "t_max": 0, "master_seed": 0, "snapshot_every": 0, "agent_evolve_every": 1,
        "env_evolve_every": 1, "workers": 1, "output_dir": "runs", "run_id": "",
    },
    "scenario": {
        "name": "",
        # profiles (all scenarios)
        "profiles_path": "", "n_profiles": 1000, "profile_seed": 0,
        # trust game
        "roles": ["trustor", "trustee"],
        # trust scaling experiment
        "pop_sizes": [100, 1000, 10000], "trials": 8,
        # opinion propagation
        "statement": "AI automation will lead to mass unemployment", "seeding": "Random",
        "influencer_frac": 0.2, "sample_frac_per_round": 0.01, "rounds": 20, "graph_path": "",
        "graph_n": 10000, "graph_m": 3, "graph_seed": 0, "pool_size": 10000,
    },
    "backends": {"policy": "fidelity_first", "fraction": 0.0, "surrogate_id": "", "seed": 0},
    "cache": {"enabled": False, "tau": 0.95, "capacity": 1_000_000, "bucket_threshold": 50_000,
              "dim": 256, "seed": 0},
}

BACKEND_KEYS = {
    "kind": "mock", "fidelity_rank": 0, "capacity": -1, "weight": 1.0, "base_url": "",
    "auth_env": "", "model": "", "provider": "openai", "model_path": "", "task_classes": [],
    "retries": -1,
}
BACKEND_KINDS = ("mock", "surrogate", "remote")
SCENARIOS = ("trust_game", "trust_scaling", "opinion")


def default_config() -> dict:
    cfg = copy.deepcopy(SCHEMA)
    cfg["backends"]["mock"] = dict(BACKEND_KEYS)
    return cfg


def _check_type(path: str, value, default) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")


def validate(raw: dict) -> dict:
    """Merge ``raw`` over the defaults; unknown sections or keys raise ConfigError."""
    cfg = copy.deepcopy(SCHEMA)
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if section == "backends" and isinstance(value, dict):
                cfg["backends"][key] = _backend(key, value)
                continue
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            _check_type(f"{section}.{key}", value, SCHEMA[section][key])
            cfg[section][key] = float(value) if isinstance(SCHEMA[section][key], float) else value
    if not any(isinstance(v, dict) for v in cfg["backends"].values()):
        cfg["backends"]["mock"] = dict(BACKEND_KEYS)
    name = cfg["scenario"]["name"]
    if name and name not in SCENARIOS:
        raise ConfigError(f"scenario.name must be one of {SCENARIOS}, got {name!r}")
    return cfg


def _backend(bid: str, body: dict) -> dict:
    out = dict(BACKEND_KEYS)
    for key, value in body.items():
        if key not in BACKEND_KEYS:
            raise ConfigError(f"unknown config key backends.{bid}.{key}")
        _check_type(f"backends.{bid}.{key}", value, BACKEND_KEYS[key])
        out[key] = float(value) if isinstance(BACKEND_KEYS[key], float) else value
    if out["kind"] not in BACKEND_KINDS:
        raise ConfigError(f"backends.{bid}.kind must be one of {BACKEND_KINDS}")
    return out


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings to a raw (unvalidated) config."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        path, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form dotted.key=value")
        parts = path.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override {item!r} needs a section and a key")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a table")
        node[parts[-1]] = parse_value(text.strip())
    return raw


def load_config(path=None, overrides=None) -> dict:
    raw = {}
    if path:
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return validate(apply_overrides(raw, overrides))


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
