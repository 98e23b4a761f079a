"""Trace-driven cache simulation and subgraph topology metrics."""
from __future__ import annotations

import csv
import io
import json
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import Graph, induce_subgraph

__all__ = [
    "CacheConfig",
    "CacheStats",
    "TopologyReport",
    "LRUCache",
    "CacheHierarchy",
    "simulate_cache",
    "triangles_per_node",
    "clustering_coefficient",
    "closed_triads",
    "topology",
    "compare_runs",
    "ComparisonReport",
]


@dataclass(frozen=True)
class CacheConfig:
    line_bytes: int = 64
    l2_lines: int = 4096
    l3_lines: int = 32768
    bytes_per_node_entry: int = 256

    def __post_init__(self):
        if self.line_bytes < 1 or self.line_bytes & (self.line_bytes - 1):
            raise ValueError("line_bytes must be a power of two")
        if not 1 <= self.l2_lines <= self.l3_lines:
            raise ValueError("need 1 <= l2_lines <= l3_lines")
        if self.bytes_per_node_entry < 1:
            raise ValueError("bytes_per_node_entry must be >= 1")


@dataclass(frozen=True)
class CacheStats:
    accesses: int = 0
    l2_to_l3: int = 0
    l3_to_dram: int = 0

    def __add__(self, other: "CacheStats") -> "CacheStats":
        return CacheStats(self.accesses + other.accesses, self.l2_to_l3 + other.l2_to_l3,
                          self.l3_to_dram + other.l3_to_dram)


@dataclass(frozen=True)
class TopologyReport:
    avg_clustering_coefficient: float
    closed_triads: int
    num_nodes: int
    num_edges: int


class LRUCache:
    """Fully associative LRU set of line tags."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._lines: OrderedDict = OrderedDict()

    def lookup(self, line: int) -> bool:
        """Return True on a hit (and refresh recency)."""
        if line in self._lines:
            self._lines.move_to_end(line)
            return True
        return False

    def fill(self, line: int) -> None:
        self._lines[line] = None
        if len(self._lines) > self.capacity:
            self._lines.popitem(last=False)


class CacheHierarchy:
    """L2 backed by L3 backed by DRAM. A miss at a level fills that level.

    The hierarchy keeps its contents between :meth:`run` calls, so a stream of
    batch traces can be replayed through one warm cache.
    """

    def __init__(self, config: CacheConfig):
        self.config = config
        self.l2 = LRUCache(config.l2_lines)
        self.l3 = LRUCache(config.l3_lines)

    def run(self, trace) -> CacheStats:
        cfg = self.config
        lines = (np.asarray(trace, dtype=np.int64) * cfg.bytes_per_node_entry) // cfg.line_bytes
        l2, l3 = self.l2, self.l3
        l2_miss = l3_miss = 0
        for line in lines.tolist():
            if l2.lookup(line):
                continue
            l2_miss += 1
            if not l3.lookup(line):
                l3_miss += 1
                l3.fill(line)
            l2.fill(line)
        return CacheStats(len(lines), l2_miss, l3_miss)


def simulate_cache(trace, config: CacheConfig = CacheConfig()) -> CacheStats:
    """Replay ``trace`` (neighbor-array positions) through a cold L2/L3 hierarchy."""
    trace = np.asarray(trace, dtype=np.int64)
    if trace.size and trace.min() < 0:
        raise ValueError("trace positions must be non-negative")
    return CacheHierarchy(config).run(trace)


# --------------------------------------------------------------- topology

def triangles_per_node(g: Graph) -> np.ndarray:
    """Number of triangles through each node of an undirected simple graph."""
    if g.num_entries == 0:
        return np.zeros(g.num_nodes, dtype=np.int64)
    a = g.to_scipy()
    a.setdiag(0)
    a.eliminate_zeros()
    paths = (a @ a).multiply(a)
    return np.asarray(paths.sum(axis=1)).ravel().astype(np.int64) // 2


def clustering_coefficient(g: Graph) -> float:
    """Average local clustering coefficient; nodes of degree < 2 count as 0."""
    if g.directed:
        raise ValueError("clustering coefficient needs an undirected graph")
    if g.num_nodes == 0:
        return 0.0
    tri = triangles_per_node(g)
    deg = _simple_degrees(g)
    pairs = deg * (deg - 1)
    local = np.zeros(g.num_nodes)
    ok = deg >= 2
    local[ok] = 2.0 * tri[ok] / pairs[ok]
    return float(local.mean())


def _simple_degrees(g: Graph) -> np.ndarray:
    loops = np.bincount(g.row_ids()[g.indices == g.row_ids()], minlength=g.num_nodes)
    return g.degrees - loops


def closed_triads(g: Graph) -> int:
    """Number of unordered node triples that form a triangle."""
    if g.directed:
        raise ValueError("closed triads need an undirected graph")
    return int(triangles_per_node(g).sum() // 3)


def topology(g: Graph) -> TopologyReport:
    return TopologyReport(clustering_coefficient(g), closed_triads(g), g.num_nodes, g.num_edges)


def _result_graph(g: Graph, result) -> Graph:
    if result.subgraph is not None:
        return result.subgraph
    return induce_subgraph(g, result.id_map)[0]


# ------------------------------------------------------------- comparison

CSV_COLUMNS = ("batch", "accesses", "l2_l3", "l3_dram", "cc", "nct")


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


@dataclass
class ArmSummary:
    rows: list
    cache: CacheStats
    mean_cc: float
    mean_nct: float
    mean_l3_dram: float
    mean_l2_l3: float


def summarize_stream(g: Graph, results: Sequence, config: CacheConfig, warm: bool = True) -> ArmSummary:
    """Per-batch cache and topology rows for one sampling stream.

    With ``warm`` the hierarchy persists across batches (as hardware caches do);
    otherwise every batch starts cold.
    """
    hier = CacheHierarchy(config)
    rows = []
    total = CacheStats()
    for r in results:
        if not warm:
            hier = CacheHierarchy(config)
        cs = hier.run(r.access_trace)
        total = total + cs
        top = topology(_result_graph(g, r))
        rows.append((r.batch_index, cs.accesses, cs.l2_to_l3, cs.l3_to_dram,
                     top.avg_clustering_coefficient, top.closed_triads))
    arr = np.array([row[1:] for row in rows], dtype=np.float64) if rows else np.zeros((0, 5))
    mean = arr.mean(axis=0) if len(arr) else np.zeros(5)
    return ArmSummary(rows, total, float(mean[3]), float(mean[4]), float(mean[2]), float(mean[1]))


def _ratio(ours: float, vanilla: float) -> Optional[float]:
    return None if vanilla == 0 else ours / vanilla


@dataclass
class ComparisonReport:
    """Vanilla (``a``) versus locality-aware (``b``) aggregate metrics."""

    vanilla: ArmSummary
    ours: ArmSummary
    compared_batches: int

    @property
    def ratios(self) -> dict:
        v, o = self.vanilla, self.ours
        return {
            "cc_ratio": _ratio(o.mean_cc, v.mean_cc),
            "nct_ratio": _ratio(o.mean_nct, v.mean_nct),
            "l3_dram_ratio": _ratio(o.mean_l3_dram, v.mean_l3_dram),
            "l2_l3_ratio": _ratio(o.mean_l2_l3, v.mean_l2_l3),
        }

    def summary(self) -> dict:
        def arm(s: ArmSummary) -> dict:
            return {
                "cache": asdict(s.cache),
                "mean_cc": s.mean_cc,
                "mean_nct": s.mean_nct,
                "mean_l2_l3": s.mean_l2_l3,
                "mean_l3_dram": s.mean_l3_dram,
            }
        return {"batches": self.compared_batches, "vanilla": arm(self.vanilla), "ours": arm(self.ours),
                **self.ratios}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def compare_runs(g: Graph, results_a: Sequence, results_b: Sequence,
                 config: CacheConfig = CacheConfig(), warm: bool = True) -> ComparisonReport:
    """Compare a vanilla stream (``results_a``) with an optimized one (``results_b``).

    Ratios are ours/vanilla; a ratio whose vanilla value is 0 is reported as None.
    """
    if not results_a or not results_b:
        raise ValueError("both result streams must be non-empty")
    n = min(len(results_a), len(results_b))
    if len(results_a) != len(results_b):
        warnings.warn(f"stream lengths differ ({len(results_a)} vs {len(results_b)}); "
                      f"comparing the first {n} batches", stacklevel=2)
    a = summarize_stream(g, list(results_a)[:n], config, warm)
    b = summarize_stream(g, list(results_b)[:n], config, warm)
    return ComparisonReport(a, b, n)
