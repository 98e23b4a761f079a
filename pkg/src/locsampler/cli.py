"""Command-line experiment harness.

    locsampler [--config PATH] [--seed U64] [--out DIR] [--jobs N] <command> ...

Commands: stats, generate, shuffle, locality, bench, train, sweep. Data files
depend only on the config and seed; wall-clock measurements and timestamps go
to ``run_meta.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import CacheConfig, compare_runs, rows_to_csv
from .graph import (
    Graph,
    generate_clustered,
    load_csr,
    load_edge_list,
    save_csr,
    save_edge_list,
    shuffle_ids,
    stats,
)
from .locality import (
    LocalityParams,
    construct_locality,
    node_similarities,
    save_weights,
    threshold_for_fraction,
)
from .samplers import SUBGRAPH, SamplerConfig, run_sampler
from .trainer import cluster_task, read_features, read_splits, train, write_features, write_splits

SECTIONS = ("graph", "sampler", "locality", "cache", "train")


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, component: str) -> int:
    """Component seed: first 8 bytes of blake2b("<component>:<seed>") as an unsigned int."""
    digest = hashlib.blake2b(f"{component}:{int(seed)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ------------------------------------------------------------------ config

def parse_config(text: str) -> dict:
    """Flat ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        section = key.split(".", 1)[0]
        if "." in key and section not in SECTIONS:
            raise ConfigError(f"config line {lineno}: unknown section {section!r}")
        if "." not in key and key not in ("seed", "out"):
            raise ConfigError(f"config line {lineno}: key {key!r} needs a section prefix")
        out[key] = value
    return out


def _ints(value: str) -> tuple:
    return tuple(int(v) for v in value.replace(",", " ").split())


def _floats(value: str) -> tuple:
    return tuple(float(v) for v in value.replace(",", " ").split())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class ExperimentConfig:
    seed: int
    out: Path
    values: dict = field(default_factory=dict)
    base: Path = Path(".")
    jobs: int = 1

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def path(self, key: str) -> Optional[Path]:
        v = self.values.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    def seed_for(self, component: str) -> int:
        return derive_seed(self.seed, component)

    def cache(self) -> CacheConfig:
        d = CacheConfig()
        return CacheConfig(
            line_bytes=int(self.get("cache.line_bytes", d.line_bytes)),
            l2_lines=int(self.get("cache.l2_lines", d.l2_lines)),
            l3_lines=int(self.get("cache.l3_lines", d.l3_lines)),
            bytes_per_node_entry=int(self.get("cache.bytes_per_node_entry", d.bytes_per_node_entry)),
        )

    def locality_params(self, g: Graph, n=None, s=None) -> LocalityParams:
        n = int(n if n is not None else self.get("locality.n", 2))
        rho = float(self.get("locality.rho", 0.5))
        if s is None:
            if "locality.s" in self.values:
                s = float(self.values["locality.s"])
            elif "locality.target_fraction" in self.values:
                s = threshold_for_fraction(g, n, float(self.values["locality.target_fraction"]))
            else:
                s = 0.9
        return LocalityParams(n, float(s), rho)

    def sampler(self, locality=None) -> SamplerConfig:
        return SamplerConfig(
            category=self.get("sampler.category", SUBGRAPH),
            batch_size=int(self.get("sampler.batch_size", 64)),
            fanouts=_ints(self.get("sampler.fanouts", "")),
            layer_sizes=_ints(self.get("sampler.layer_sizes", "")),
            subgraph_budget=int(self.get("sampler.subgraph_budget", 0)),
            seed=self.seed_for("sampler"),
            locality=locality,
            shuffle=_bool(self.get("sampler.shuffle", "false")),
        )


def build_config(args) -> ExperimentConfig:
    values, base = {}, Path(".")
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        values = parse_config(cfg_path.read_text())
        base = cfg_path.parent
    seed = args.seed if args.seed is not None else values.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (--seed or 'seed =' in the config)")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out = Path(args.out or values.get("out") or "out")
    cfg = ExperimentConfig(seed=seed, out=out, values=values, base=base, jobs=max(1, args.jobs))
    for key in ("graph.path", "train.features", "train.splits"):
        p = cfg.path(key)
        if p is not None and not p.exists():
            raise ConfigError(f"{key}: file not found: {p}")
    return cfg


# ------------------------------------------------------------------ output

def write_atomic(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{x:.6g}" if isinstance(x, float) else x for x in row])
    return buf.getvalue()


class Run:
    """Collects data files and run metadata for one command."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.meta: dict = {}
        self.data_files: list = []

    def write(self, name: str, data) -> Path:
        path = self.cfg.out / name
        write_atomic(path, data)
        self.data_files.append(name)
        return path

    def save(self, name: str, writer, *args) -> Path:
        """Call ``writer(*args, tmp_path)`` then rename into place."""
        path = self.cfg.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        os.close(fd)
        try:
            writer(*args, tmp)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.data_files.append(name)
        return path

    def finish(self) -> None:
        meta = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "wall_seconds": time.perf_counter() - self.t0,
            "data_files": self.data_files,
            **self.meta,
        }
        write_atomic(self.cfg.out / "run_meta.json", _dump(meta))


# ------------------------------------------------------------------ inputs

def load_graph(cfg: ExperimentConfig, override: Optional[str] = None) -> Graph:
    path = Path(override) if override else cfg.path("graph.path")
    if path is not None:
        if not path.exists():
            raise ConfigError(f"graph file not found: {path}")
        directed = _bool(cfg.get("graph.directed", "false"))
        g = load_csr(path, directed=directed) if path.suffix == ".csr" else load_edge_list(path, directed)
    else:
        kind = cfg.get("graph.generator", "clustered")
        if kind != "clustered":
            raise ConfigError(f"unknown graph generator {kind!r}")
        g = generate_clustered(
            int(cfg.get("graph.clusters", 8)),
            int(cfg.get("graph.nodes_per_cluster", 256)),
            float(cfg.get("graph.p_intra", 0.1)),
            float(cfg.get("graph.p_inter", 0.005)),
            seed=cfg.seed_for("graph"),
        )
    if _bool(cfg.get("graph.shuffle", "false")):
        g = shuffle_ids(g, seed=cfg.seed_for("shuffle"))
    return g


def load_task(cfg: ExperimentConfig, g: Graph):
    fpath, spath = cfg.path("train.features"), cfg.path("train.splits")
    if fpath is not None:
        features, labels = read_features(fpath)
        if len(labels) != g.num_nodes:
            raise ConfigError("feature file row count does not match the graph")
    elif g.labels is not None:
        labels = np.asarray(g.labels)
        features, splits = cluster_task(labels, float(cfg.get("train.noise", 0.1)), seed=cfg.seed_for("task"))
    else:
        raise ConfigError("train.features is required for graphs without labels")
    if spath is not None:
        splits = read_splits(spath)
    elif fpath is not None:
        _, splits = cluster_task(labels, 0.0, seed=cfg.seed_for("task"))
    return features, labels, splits


# ---------------------------------------------------------------- commands

def cmd_stats(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "stats")
    g = load_graph(cfg, args.graph)
    st = stats(g)
    table = "nodes,edges,ann,mnn,nrr\n" + st.csv_row() + "\n"
    print(table, end="")
    run.write("stats.csv", table)
    run.finish()
    return 0


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "generate")
    g = load_graph(cfg)
    run.save("graph.csr", save_csr, g)
    run.save("graph.edges", save_edge_list, g)
    if g.labels is not None:
        features, splits = cluster_task(g.labels, float(cfg.get("train.noise", 0.1)), seed=cfg.seed_for("task"))
        run.save("features.txt", lambda p: write_features(p, features, g.labels))
        run.save("splits.txt", lambda p: write_splits(p, splits))
    print(f"{g.num_nodes} nodes, {g.num_edges} edges -> {cfg.out}")
    run.finish()
    return 0


def cmd_shuffle(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "shuffle")
    g = shuffle_ids(load_graph(cfg, args.graph), seed=cfg.seed_for("shuffle"))
    run.save("graph.csr", save_csr, g)
    run.save("graph.edges", save_edge_list, g)
    run.finish()
    return 0


def cmd_locality(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "locality")
    g = load_graph(cfg, args.graph)
    params = cfg.locality_params(g, n=args.n, s=args.s)
    t0 = time.perf_counter()
    w = construct_locality(g, params, workers=cfg.jobs)
    run.meta["construct_seconds"] = time.perf_counter() - t0
    run.save("weights.gslw", save_weights, w)
    sim = node_similarities(g)
    summary = {
        "n": params.min_neighbors,
        "s": params.similarity_threshold,
        "eligible_fraction": w.eligible_fraction,
        "eligible_nodes": int(len(w.eligible)),
        "mean_similarity": float(np.nanmean(sim)) if np.any(~np.isnan(sim)) else 0.0,
    }
    run.write("locality.json", _dump(summary))
    print(f"eligible fraction {summary['eligible_fraction']:.6g}, mean similarity {summary['mean_similarity']:.6g}")
    run.finish()
    return 0


def _arms(args) -> list:
    arms = [a for a, on in (("vanilla", args.vanilla), ("locality", args.locality)) if on]
    return arms or ["vanilla", "locality"]


def _bench_nodes(cfg: ExperimentConfig, g: Graph) -> np.ndarray:
    nodes = np.arange(g.num_nodes)
    limit = cfg.get("sampler.num_batches")
    if limit is not None:
        nodes = nodes[: int(limit) * int(cfg.get("sampler.batch_size", 64))]
    return nodes


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "bench")
    g = load_graph(cfg, args.graph)
    cache = cfg.cache()
    nodes = _bench_nodes(cfg, g)
    streams, summary, timing = {}, {"arms": {}}, {}
    for arm in _arms(args):
        locality = cfg.locality_params(g) if arm == "locality" else None
        if arm == "locality" and cfg.get("sampler.category", SUBGRAPH) != "layer_wise":
            locality = construct_locality(g, locality, workers=cfg.jobs)
        res = run_sampler(g, nodes, cfg.sampler(locality), jobs=cfg.jobs)
        streams[arm] = res.results
        report = compare_runs(g, res.results, res.results, cache)
        run.write(f"bench_{arm}.csv", rows_to_csv(report.vanilla.rows))
        arm_doc = {
            "batches": len(res.results),
            "fallback_count": res.fallback_count,
            "mean_l2_l3": report.vanilla.mean_l2_l3,
            "mean_l3_dram": report.vanilla.mean_l3_dram,
            "mean_cc": report.vanilla.mean_cc,
            "mean_nct": report.vanilla.mean_nct,
        }
        if arm == "locality" and hasattr(locality, "eligible_fraction"):
            arm_doc["eligible_fraction"] = locality.eligible_fraction
            arm_doc["s"] = locality.params.similarity_threshold
        summary["arms"][arm] = arm_doc
        timing[arm] = {"init_seconds": res.init_seconds,
                       "execute_seconds_mean": float(np.mean(res.execute_seconds)),
                       "execute_seconds": res.execute_seconds}
    if len(streams) == 2:
        summary.update(compare_runs(g, streams["vanilla"], streams["locality"], cache).ratios)
    run.write("bench_summary.json", _dump(summary))
    run.meta["timing"] = timing
    if "vanilla" in timing and "locality" in timing:
        run.meta["execute_time_ratio"] = (timing["locality"]["execute_seconds_mean"]
                                          / max(timing["vanilla"]["execute_seconds_mean"], 1e-12))
    print(_dump(summary), end="")
    run.finish()
    return 0


def _train_arm(cfg: ExperimentConfig, g: Graph, task, arm: str, n=None, s=None):
    features, labels, splits = task
    locality = cfg.locality_params(g, n=n, s=s) if arm == "locality" else None
    return train(
        g, features, labels, splits, cfg.sampler(locality),
        epochs=int(cfg.get("train.epochs", 50)),
        lr=float(cfg.get("train.lr", 0.5)),
        hidden=int(cfg.get("train.hidden", 16)),
        seed=cfg.seed_for("model"),
    )


def cmd_train(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "train")
    g = load_graph(cfg, args.graph)
    task = load_task(cfg, g)
    reports = {}
    for arm in _arms(args):
        rep = _train_arm(cfg, g, task, arm)
        reports[arm] = rep
        run.write(f"train_{arm}.json", rep.to_json())
        run.write(f"train_{arm}.csv", rep.to_csv())
        run.meta[f"timing_{arm}"] = rep.timing()
    if len(reports) == 2:
        v, o = reports["vanilla"], reports["locality"]
        run.write("train_summary.json", _dump({
            "val_accuracy_vanilla": v.final_val_accuracy,
            "val_accuracy_locality": o.final_val_accuracy,
            "accuracy_loss": v.final_val_accuracy - o.final_val_accuracy,
        }))
        run.meta["time_reduction"] = 1.0 - o.train_seconds / v.train_seconds
        run.meta["train_seconds"] = {"vanilla": v.train_seconds, "locality": o.train_seconds}
    for arm, rep in reports.items():
        print(f"{arm}: val {rep.final_val_accuracy:.4f} test {rep.test_accuracy:.4f} "
              f"time {rep.train_seconds:.3f}s fallbacks {rep.fallback_count}")
    run.finish()
    return 0


SWEEP_COLUMNS = ("n", "s", "train_seconds", "val_accuracy", "fallback_count")


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    run = Run(cfg, "sweep")
    g = load_graph(cfg, args.graph)
    task = load_task(cfg, g)
    n_list = _ints(args.n_list) if args.n_list else _ints(cfg.get("locality.n_list", "2"))
    s_list = _floats(args.s_list) if args.s_list else _floats(cfg.get("locality.s_list", "0.9"))
    grid = [(n, s) for n in n_list for s in s_list]
    out = cfg.out / "sweep.csv"
    cfg.out.mkdir(parents=True, exist_ok=True)
    elig_rows = []

    def cell(ns):
        n, s = ns
        rep = _train_arm(cfg, g, task, "locality", n=n, s=s)
        return n, s, rep

    with open(out, "w", newline="") as fh, ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        fh.flush()
        for n, s, rep in pool.map(cell, grid):
            w.writerow([n, f"{s:.6g}", f"{rep.train_seconds:.6g}", f"{rep.final_val_accuracy:.6g}", rep.fallback_count])
            fh.flush()
            elig_rows.append((n, float(s), float(rep.eligible_fraction or 0.0), rep.final_val_accuracy))
    run.data_files.append("sweep.csv")
    run.write("sweep_eligibility.csv", _csv(("n", "s", "eligible_fraction", "val_accuracy"), elig_rows))
    print(out.read_text(), end="")
    run.finish()
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locsampler", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="flat key=value experiment config")
    p.add_argument("--seed", type=int, help="global seed (u64); overrides 'seed' in the config")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def with_graph(sp):
        sp.add_argument("graph", nargs="?", help="edge list or .csr file (default: graph.* config)")
        return sp

    with_graph(sub.add_parser("stats", help="dataset statistics (nodes, edges, ANN, MNN, NRR)"))
    sub.add_parser("generate", help="generate a planted-partition graph with features and splits")
    with_graph(sub.add_parser("shuffle", help="randomly relabel node ids"))
    sp = with_graph(sub.add_parser("locality", help="build and cache locality weights"))
    sp.add_argument("--n", type=int, help="minimum neighbors per node")
    sp.add_argument("--s", type=float, help="similarity threshold")
    for name, helptext in (("bench", "sampling + cache + topology comparison"),
                           ("train", "GCN training run(s)")):
        sp = with_graph(sub.add_parser(name, help=helptext))
        sp.add_argument("--vanilla", action="store_true", help="run the vanilla arm")
        sp.add_argument("--locality", action="store_true", help="run the locality-aware arm")
    sp = with_graph(sub.add_parser("sweep", help="train over an (n, s) grid"))
    sp.add_argument("--n-list", help="comma separated n values")
    sp.add_argument("--s-list", help="comma separated s values")
    return p


COMMANDS = {
    "stats": cmd_stats,
    "generate": cmd_generate,
    "shuffle": cmd_shuffle,
    "locality": cmd_locality,
    "bench": cmd_bench,
    "train": cmd_train,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        out = Path(args.out) if args.out else None
        if out is not None and out.is_dir():
            write_atomic(out / "error.json", json.dumps(err) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
