"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from socsim import __version__
from socsim.config import config_digest, load_config, parse_value
from socsim.engine import SeedDataset, SimConfig, read_table, run, write_table
from socsim.errors import ConfigError, SimError
from socsim.graph import BaParams, generate_ba, generate_ba_to_file, load_graph, save_graph
from socsim.inference import InferenceLayer, RemoteBackend, Router, SemanticCache
from socsim.scenarios.mock import mock_backend
from socsim.scenarios.profiles import ingest_profiles, synthesize_profiles, write_profiles

log = logging.getLogger("socsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json_atomic(obj, path) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _emit(rows: list[dict], out_path=None) -> None:
    """Print rows as TSV; also write them when a path is given."""
    if not rows:
        print("(no rows)")
        return
    cols = list(dict.fromkeys(k for r in rows for k in r))
    print("\t".join(cols))
    for r in rows:
        print("\t".join("" if r.get(c) is None else str(r.get(c)) for c in cols))
    if out_path:
        write_table(rows, out_path)


# --------------------------------------------------------------------------
# gen-network


def degree_summary(degrees: np.ndarray) -> list[dict]:
    """min/mean/max plus complementary-CDF points at powers of two."""
    rows = [{"stat": "min", "degree": int(degrees.min()), "value": int(degrees.min())},
            {"stat": "mean", "degree": "", "value": float(degrees.mean())},
            {"stat": "max", "degree": int(degrees.max()), "value": int(degrees.max())}]
    d = 1
    while d <= degrees.max():
        rows.append({"stat": "ccdf", "degree": d, "value": float(np.mean(degrees >= d))})
        d *= 2
    return rows


def cmd_gen_network(args) -> int:
    p = BaParams(args.n, args.m, args.seed)
    p.validate()
    out = Path(args.out)
    try:
        if args.out_of_core:
            generate_ba_to_file(p, out, chunk_nodes=args.chunk_nodes)
            degrees = np.diff(load_graph(out).offsets)
        else:
            g = generate_ba(p)
            save_graph(g, out)
            degrees = g.degrees()
    except BaseException:
        out.unlink(missing_ok=True)
        raise
    print(f"wrote {out}: n={p.n} m_edges={p.edge_count}")
    _emit(degree_summary(degrees), str(out) + ".degrees.tsv")
    return 0


# --------------------------------------------------------------------------
# synth-profiles


def cmd_synth_profiles(args) -> int:
    marginals = json.loads(Path(args.marginals).read_text()) if args.marginals else None
    recs = synthesize_profiles(args.n, args.seed, marginals)
    write_profiles(recs, args.out)
    print(f"wrote {len(recs)} profiles to {args.out}")
    return 0


# --------------------------------------------------------------------------
# train-surrogate


def _teacher(name: str, seed: int):
    if name == "mock":
        return mock_backend("mock", seed=seed)
    raise UsageError(f"unknown teacher {name!r}; only 'mock' is available offline")


def cmd_train_surrogate(args) -> int:
    from socsim.surrogate.distill import confusion_matrix, generate_distill_data
    from socsim.surrogate.model import accuracy, train

    if args.n_samples <= 0:
        print("error: --n-samples must be positive; an empty dataset cannot be trained on", file=sys.stderr)
        return 1
    out = Path(args.out)
    report_path = Path(str(out) + ".report.json")
    try:
        pool = (ingest_profiles(args.profiles).records if args.profiles
                else synthesize_profiles(args.pool_size, args.seed))
        ds = generate_distill_data(_teacher(args.teacher, args.seed), args.n_samples, args.seed, pool)
        Xtr, ytr = ds.part("train")
        Xv, yv = ds.part("val")
        Xte, yte = ds.part("test")
        model, rep = train(Xtr, ytr, Xv, yv, epochs=args.epochs, batch=args.batch, lr=args.lr,
                           seed=args.seed)
        model.save(out)
        pred, _ = model.predict(Xte) if len(yte) else (np.zeros(0, np.int64), None)
        report = {**rep.as_dict(), "test_accuracy": accuracy(model, Xte, yte),
                  "confusion_test": confusion_matrix(yte, pred).tolist(), "splits": ds.sizes(),
                  "resampled": ds.resampled, "dataset_digest": ds.digest(), "model_sha256": file_sha256(out),
                  "teacher": args.teacher, "seed": args.seed,
                  "hp": {"epochs": args.epochs, "batch": args.batch, "lr": args.lr}}
        write_json_atomic(report, report_path)
    except BaseException:
        out.unlink(missing_ok=True)
        report_path.unlink(missing_ok=True)
        raise
    _emit([{"model": str(out), "train_accuracy": report["train_accuracy"],
            "val_accuracy": report["val_accuracy"], "test_accuracy": report["test_accuracy"]}])
    return 0


# --------------------------------------------------------------------------
# run


def build_layer(cfg: dict, seed: int) -> InferenceLayer:
    from socsim.surrogate.backend import serve_as_backend
    from socsim.surrogate.model import SurrogateModel

    b = cfg["backends"]
    specs = {k: v for k, v in b.items() if isinstance(v, dict)}
    surrogate_id = b["surrogate_id"] or next((k for k, v in specs.items() if v["kind"] == "surrogate"), None)
    router = Router(b["policy"], b["fraction"], surrogate_id, b["seed"])
    for bid, s in specs.items():
        common = dict(fidelity_rank=s["fidelity_rank"], capacity=None if s["capacity"] < 0 else s["capacity"],
                      weight=s["weight"], task_classes=frozenset(s["task_classes"]) or None)
        if s["kind"] == "mock":
            backend = mock_backend(bid, seed=seed, **common)
        elif s["kind"] == "surrogate":
            if not s["model_path"]:
                raise ConfigError(f"backends.{bid}.model_path is required for a surrogate backend")
            common["task_classes"] = common["task_classes"] or frozenset({"opinion_update"})
            if s["fidelity_rank"] == 0:
                common["fidelity_rank"] = 10
            backend = serve_as_backend(SurrogateModel.load(s["model_path"]), bid, **common)
        else:
            backend = RemoteBackend(bid, base_url=s["base_url"], model=s["model"],
                                    auth_env=s["auth_env"] or f"LS_{bid.upper()}_API_KEY",
                                    provider=s["provider"], **common)
            if s["retries"] >= 0:
                backend.retries = s["retries"]
        router.register(backend)
    c = cfg["cache"]
    cache = (SemanticCache(dim=c["dim"], tau=c["tau"], capacity=c["capacity"],
                           bucket_threshold=c["bucket_threshold"], seed=c["seed"]) if c["enabled"] else None)
    return InferenceLayer(router, cache=cache, workers=cfg["sim"]["workers"])


def _profiles(sc: dict, n: int):
    if sc["profiles_path"]:
        res = ingest_profiles(sc["profiles_path"])
        if res.rejected:
            log.warning("%d profile records rejected", len(res.rejected))
        return res.records
    return synthesize_profiles(n, sc["profile_seed"])


def _sim_config(cfg: dict, run_dir: Path | None, t_max: int = 0) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(t_max=max(s["t_max"], t_max), master_seed=s["master_seed"],
                     snapshot_every=s["snapshot_every"] or None, agent_evolve_every=s["agent_evolve_every"],
                     env_evolve_every=s["env_evolve_every"], scenario=cfg["scenario"]["name"],
                     workers=s["workers"], run_dir=str(run_dir) if run_dir else None)


def execute_run(cfg: dict, run_dir: Path) -> dict:
    """Run the configured scenario into ``run_dir``; returns the summary row."""
    from socsim.scenarios.opinion import OpinionOps, OpinionScenarioConfig
    from socsim.scenarios.trust import TrustGameOps, outcomes_from_state, trust_scaling_experiment

    sc = cfg["scenario"]
    seed = cfg["sim"]["master_seed"]
    name = sc["name"]
    if not name:
        raise ConfigError("scenario.name is required")
    layer = build_layer(cfg, seed)
    t0 = time.perf_counter()
    summary = {"scenario": name}
    extra: dict[str, list[dict]] = {}
    if name == "trust_scaling":
        trial_rows, size_rows = trust_scaling_experiment(
            sc["pop_sizes"], lambda: build_layer(cfg, seed), trials=sc["trials"], seed=seed)
        extra = {"scaling_trials": trial_rows, "scaling_ci": size_rows}
        summary.update(ticks=1, events_processed=sum(r["size"] for r in size_rows) * sc["trials"])
    else:
        if name == "trust_game":
            ops = TrustGameOps(tuple(sc["roles"]))
            data = SeedDataset(_profiles(sc, sc["n_profiles"]))
            sim_cfg = _sim_config(cfg, run_dir, 1)
        else:
            osc = OpinionScenarioConfig(statement=sc["statement"], seeding=sc["seeding"],
                                        influencer_frac=sc["influencer_frac"],
                                        sample_frac_per_round=sc["sample_frac_per_round"], rounds=sc["rounds"],
                                        graph_path=sc["graph_path"] or None, pool_size=sc["pool_size"])
            osc.validate()
            if osc.graph_path:
                graph = load_graph(osc.graph_path)
            else:
                graph = generate_ba(BaParams(sc["graph_n"], sc["graph_m"], sc["graph_seed"]))
            summary["graph_sha256"] = graph.digest().hex()
            ops = OpinionOps(osc, graph)
            data = SeedDataset(_profiles(sc, osc.pool_size), topology=graph)
            sim_cfg = _sim_config(cfg, run_dir, 2 * osc.rounds)
        bundle = run(sim_cfg, data, ops, layer)
        summary.update(ticks=bundle.ticks, events_processed=bundle.events_processed,
                       event_log_digest=bundle.event_log_digest, state_digest=bundle.state_digest)
        if name == "trust_game":
            extra["trust_outcomes"] = [o.as_row() for o in outcomes_from_state(bundle.system, seed)]
    wall = time.perf_counter() - t0
    totals = layer.totals()
    summary.update(wall_seconds=wall, events_per_second=summary["events_processed"] / wall if wall else 0.0,
                   requests=totals["requests"], cache_hits=totals["cache_hits"],
                   cache_hit_rate=totals["cache_hits"] / totals["requests"] if totals["requests"] else 0.0,
                   llm_tokens=totals["llm_tokens"], surrogate_tokens=totals["surrogate_tokens"])
    extra.setdefault("token_usage", layer.token_report(every=max(1, totals["requests"] // 1000)))
    extra.setdefault("backend_stats", [s.as_dict() for s in layer.stats.values()])
    for tname, rows in extra.items():
        write_table(rows, run_dir / f"{tname}.tsv")
    write_table([summary], run_dir / "summary.tsv")
    if layer.cache is not None:
        layer.cache.save(run_dir / "cache.lspc")
    layer.close()
    return summary


def _sweep(spec: str | None) -> list[tuple[str | None, object]]:
    if not spec:
        return [(None, None)]
    key, sep, values = spec.partition("=")
    if not sep or not values:
        raise UsageError("--sweep expects dotted.key=v1,v2,...")
    return [(key.strip(), parse_value(v.strip())) for v in values.split(",")]


def cmd_run(args) -> int:
    status = 0
    for key, value in _sweep(args.sweep):
        overrides = list(args.set or [])
        if key is not None:
            overrides.append(f"{key}={json.dumps(value)}")
        cfg = load_config(args.config, overrides)
        digest = config_digest(cfg)
        run_id = cfg["sim"]["run_id"] or f"{cfg['scenario']['name'] or 'run'}-{digest[:10]}"
        if key is not None:
            run_id = f"{run_id}-{key.split('.')[-1]}{value}"
        run_dir = Path(args.output_dir or cfg["sim"]["output_dir"]) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        write_json_atomic(cfg, run_dir / "config.json")
        manifest = {"run_id": run_id, "config_digest": digest, "seed": cfg["sim"]["master_seed"],
                    "start": datetime.now(timezone.utc).isoformat(), "status": "running",
                    "versions": {"socsim": __version__, "numpy": np.__version__,
                                 "python": platform.python_version()}}
        try:
            summary = execute_run(cfg, run_dir)
            manifest["status"] = "ok"
            manifest["summary"] = summary
        except (ConfigError, UsageError):
            raise
        except Exception as exc:
            log.exception("run %s failed", run_id)
            manifest["status"] = "failed"
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            status = 1
        manifest["end"] = datetime.now(timezone.utc).isoformat()
        manifest["artifacts"] = {p.name: file_sha256(p) for p in sorted(run_dir.iterdir())
                                 if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".tmp")}
        write_json_atomic(manifest, run_dir / "manifest.json")
        if manifest["status"] == "ok":
            print(f"run {run_id}: {run_dir}")
            _emit([summary])
        else:
            print(f"run {run_id} failed: {manifest['error']}", file=sys.stderr)
    return status


# --------------------------------------------------------------------------
# analyze


def load_run(run_dir) -> tuple[dict, Path]:
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{run_dir}: no manifest.json")
    manifest = json.loads(mpath.read_text())
    if manifest.get("status") != "ok":
        raise ValueError(f"{run_dir}: run status is {manifest.get('status')!r}")
    return manifest, run_dir


def _table(manifest, run_dir: Path, name: str) -> list[dict]:
    fname = f"{name}.tsv"
    path = run_dir / fname
    if fname not in manifest.get("artifacts", {}) or not path.exists():
        raise FileNotFoundError(f"{run_dir}: missing {fname}")
    if file_sha256(path) != manifest["artifacts"][fname]:
        raise ValueError(f"{run_dir}: {fname} does not match its manifest digest")
    return read_table(path)


def analyze_runs(run_dirs, query: str) -> tuple[list[dict], list[str]]:
    """Cross-run table for ``query`` plus a list of per-run problems."""
    from socsim.scenarios.opinion import trajectory_divergence

    rows, problems = [], []
    ref = None
    for d in run_dirs:
        try:
            manifest, rd = load_run(d)
            if query == "divergence":
                counts = _table(manifest, rd, "opinion_counts")
                ref = ref or (str(rd), counts)
                rows.append({"run": str(rd), "reference": ref[0],
                             "divergence": trajectory_divergence(ref[1], counts)})
            elif query == "tokens":
                usage = _table(manifest, rd, "token_usage")
                last = usage[-1] if usage else {"requests": 0, "llm": 0, "surrogate": 0, "total": 0}
                ref = ref if ref is not None else (str(rd), last["llm"])
                rows.append({"run": str(rd), "requests": last["requests"], "llm_tokens": last["llm"],
                             "surrogate_tokens": last["surrogate"], "total_tokens": last["total"],
                             "llm_ratio_to_first": last["llm"] / ref[1] if ref[1] else None})
            elif query == "token_curve":
                for r in _table(manifest, rd, "token_usage"):
                    rows.append({"run": str(rd), **r})
            elif query == "scaling":
                for r in _table(manifest, rd, "scaling_ci"):
                    rows.append({"run": str(rd), **r})
            elif query == "summary":
                rows.append({"run": str(rd), **_table(manifest, rd, "summary")[0]})
            else:
                raise UsageError(f"unknown query {query!r}")
        except (FileNotFoundError, ValueError) as exc:
            problems.append(str(exc))
    return rows, problems


def cmd_analyze(args) -> int:
    rows, problems = analyze_runs(args.runs, args.query)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    out = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        out = Path(args.out) / f"{args.query}.tsv"
    _emit(rows, out)
    return 1 if problems and not rows else 0


# --------------------------------------------------------------------------
# cache-stats


def cmd_cache_stats(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "cache.lspc"
    if not path.exists():
        print(f"error: no cache file at {path}", file=sys.stderr)
        return 1
    cache = SemanticCache.load(path)
    st = cache.stats()
    hits = np.array([e.hits for e in cache.entries()], dtype=np.int64)
    row = {"path": str(path), "entries": st["entries"], "dim": st["dim"], "tau": st["tau"],
           "entries_with_hits": int((hits > 0).sum()), "total_entry_hits": int(hits.sum()),
           "max_entry_hits": int(hits.max()) if len(hits) else 0}
    _emit([row], args.out)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="socsim", description="Agent-based social simulation with an LLM inference layer.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"socsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-network", help="generate a preferential-attachment graph file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, default=3, help="edges per new node")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--out-of-core", action="store_true", help="spill edges to disk while building")
    g.add_argument("--chunk-nodes", type=int, default=1 << 22)
    g.set_defaults(func=cmd_gen_network)

    s = sub.add_parser("synth-profiles", help="sample synthetic profiles from categorical marginals")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--marginals", help="JSON file of attribute -> {category: weight}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_profiles)

    t = sub.add_parser("train-surrogate", help="distil the opinion-update task into a small classifier")
    t.add_argument("--teacher", default="mock")
    t.add_argument("--n-samples", type=int, default=100_000)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--profiles", help="profile file (default: synthesize --pool-size profiles)")
    t.add_argument("--pool-size", type=int, default=10_000)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_surrogate)

    r = sub.add_parser("run", help="run a configured scenario")
    r.add_argument("--config", help="TOML config file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override (repeatable)")
    r.add_argument("--sweep", metavar="KEY=V1,V2,...", help="one run per value of a dotted key")
    r.add_argument("--output-dir", help="parent directory for run directories")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="compare finished runs")
    a.add_argument("runs", nargs="+")
    a.add_argument("--query", default="summary",
                   choices=("summary", "divergence", "tokens", "token_curve", "scaling"))
    a.add_argument("--out", help="directory for the result table")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("cache-stats", help="inspect a persisted prompt cache")
    c.add_argument("path", help="cache file or run directory")
    c.add_argument("--out", help="write the stats row to this TSV file")
    c.set_defaults(func=cmd_cache_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
