"""Unified two-stage sampling (INIT, then EXECUTE per batch).

Three representative samplers share one interface:

* ``node_wise``  - per-node recursive neighbor sampling (GraphSAGE style)
* ``layer_wise`` - a fixed number of nodes per layer (FastGCN style)
* ``subgraph``   - node pool + induced subgraph (GraphSAINT node sampler style)

INIT splits the training nodes into batches and loads or builds the locality
weights exactly once; EXECUTE runs the category sampler on every batch with an
RNG stream derived from ``(seed, epoch, batch_index)``.
"""
from __future__ import annotations

import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .graph import Graph, as_nodeset, gather_rows, induce_subgraph
from .locality import (
    LocalityParams,
    LocalityWeights,
    augment_with_parents,
    construct_locality,
    layer_weights,
    load_weights,
    save_weights,
)

__all__ = [
    "NODE_WISE",
    "LAYER_WISE",
    "SUBGRAPH",
    "SamplerConfig",
    "Batch",
    "SampleResult",
    "SamplerRun",
    "UnifiedSampler",
    "BudgetError",
    "batch_rng",
    "get_batches",
    "weighted_choice",
    "node_wise_sample",
    "layer_wise_sample",
    "subgraph_sample",
    "run_sampler",
    "save_trace",
    "load_trace",
]

NODE_WISE = "node_wise"
LAYER_WISE = "layer_wise"
SUBGRAPH = "subgraph"
CATEGORIES = (NODE_WISE, LAYER_WISE, SUBGRAPH)

TRACE_MAGIC = b"GSTR"
TRACE_VERSION = 1


class BudgetError(ValueError):
    """Not enough distinct admissible nodes to fill a subgraph."""


@dataclass(frozen=True)
class SamplerConfig:
    category: str
    batch_size: int
    fanouts: tuple = ()
    layer_sizes: tuple = ()
    subgraph_budget: int = 0
    seed: int = 0
    # LocalityParams -> weights built (or loaded) during INIT; None -> vanilla sampling
    locality: Optional[Union[LocalityParams, LocalityWeights]] = None
    shuffle: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown sampler category {self.category!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        object.__setattr__(self, "layer_sizes", tuple(int(f) for f in self.layer_sizes))
        if self.category == NODE_WISE and (not self.fanouts or min(self.fanouts) < 1):
            raise ValueError("node-wise sampling needs fanouts >= 1")
        if self.category == LAYER_WISE and (not self.layer_sizes or min(self.layer_sizes) < 1):
            raise ValueError("layer-wise sampling needs layer_sizes >= 1")
        if self.category == SUBGRAPH and self.subgraph_budget < 1:
            raise ValueError("subgraph sampling needs subgraph_budget >= 1")

    @property
    def locality_params(self) -> Optional[LocalityParams]:
        if isinstance(self.locality, LocalityWeights):
            return self.locality.params
        return self.locality


class Batch(NamedTuple):
    node_ids: np.ndarray
    batch_index: int


@dataclass
class SampleResult:
    """Output of one EXECUTE step.

    ``layers`` hold original node ids (sorted). ``access_trace`` lists the
    positions in ``g.indices`` read by every neighbor-row scan, in order. For the layered samplers
    ``blocks[h]`` is a 0/1 CSR matrix whose rows index ``layers[h]`` and whose
    columns index ``layers[h + 1]``. For the subgraph sampler ``subgraph`` is the
    induced graph and ``id_map`` its ``local -> original`` ids.
    """

    batch_index: int
    layers: list
    blocks: list
    id_map: np.ndarray
    access_trace: np.ndarray
    fallback_count: int = 0
    subgraph: Optional[Graph] = None
    warnings: list = field(default_factory=list)

    def sampled_nodes(self) -> np.ndarray:
        return self.id_map

    def to_json(self) -> dict:
        return {
            "batch_index": self.batch_index,
            "layers": [layer.tolist() for layer in self.layers],
            "id_map": self.id_map.tolist(),
            "fallback_count": self.fallback_count,
        }

    def same_as(self, other: "SampleResult") -> bool:
        """Bit-level equality of every recorded array."""
        if (self.batch_index, self.fallback_count, len(self.layers), len(self.blocks)) != \
                (other.batch_index, other.fallback_count, len(other.layers), len(other.blocks)):
            return False
        pairs = list(zip(self.layers, other.layers)) + [(self.id_map, other.id_map),
                                                       (self.access_trace, other.access_trace)]
        if not all(np.array_equal(a, b) for a, b in pairs):
            return False
        for a, b in zip(self.blocks, other.blocks):
            if a.shape != b.shape or (a != b).nnz:
                return False
        if (self.subgraph is None) != (other.subgraph is None):
            return False
        return self.subgraph is None or self.subgraph == other.subgraph


def batch_rng(seed: int, batch_index: int, epoch: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one batch of one epoch."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(epoch), int(batch_index)))
    return np.random.Generator(np.random.PCG64(ss))


class BatchPlan(Sequence):
    """Consecutive ``batch_size`` slices of ``nodes``; batches are cut on access."""

    def __init__(self, nodes, batch_size: int):
        nodes = np.asarray(nodes, dtype=np.int64)
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if nodes.size == 0:
            raise ValueError("no training nodes to batch")
        self.nodes = nodes
        self.batch_size = batch_size

    def __len__(self):
        return -(-len(self.nodes) // self.batch_size)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        lo = k * self.batch_size
        return Batch(self.nodes[lo:lo + self.batch_size], k)


def get_batches(train_nodes, batch_size: int) -> list[Batch]:
    """Split ``train_nodes`` in order into consecutive batches of ``batch_size``."""
    return list(BatchPlan(train_nodes, batch_size))


def _weight_array(weights) -> Optional[np.ndarray]:
    if weights is None:
        return None
    if isinstance(weights, LocalityWeights):
        return weights.weights
    return np.asarray(weights, dtype=np.float64)


def weighted_choice(candidates, weights, k: int, replace: bool,
                    rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Draw ``k`` of ``candidates`` with probability proportional to their weights.

    ``weights`` is indexed by node id (``None`` means uniform). When every
    candidate weighs zero the draw is uniform over the candidates and the second
    return value is True.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise ValueError("no candidates to choose from")
    if k < 1:
        raise ValueError("k must be >= 1")
    warr = _weight_array(weights)
    w = np.ones(len(cand)) if warr is None else warr[cand].astype(np.float64)
    fell_back = not np.any(w > 0)
    if fell_back:
        w = np.ones(len(cand))
    if not replace and k > np.count_nonzero(w > 0):
        raise ValueError(f"cannot draw {k} distinct nodes from {np.count_nonzero(w > 0)} admissible candidates")
    picks = rng.choice(len(cand), size=k, replace=replace, p=w / w.sum())
    return cand[picks], fell_back


def _block(rows: np.ndarray, cols: np.ndarray, src, dst) -> sp.csr_matrix:
    r = np.searchsorted(rows, np.asarray(src, dtype=np.int64))
    c = np.searchsorted(cols, np.asarray(dst, dtype=np.int64))
    m = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(len(rows), len(cols)))
    m.sum_duplicates()
    m.data[:] = 1.0
    return m


def node_wise_sample(g: Graph, batch: Batch, config: SamplerConfig, rng: np.random.Generator,
                     weights=None) -> SampleResult:
    """Recursive per-node neighbor sampling.

    At hop ``h`` every node of ``layers[h]`` keeps ``min(fanouts[h], degree)``
    distinct neighbors. Neighbors with positive weight are preferred; slots they
    cannot fill are drawn uniformly from the rest (counted as a fallback).
    ``layers[h + 1]`` is ``layers[h]`` plus the sampled neighbors.
    """
    warr = _weight_array(weights)
    layers = [as_nodeset(batch.node_ids, g.num_nodes)]
    blocks, trace, notes = [], [], []
    fallbacks = 0
    for fanout in config.fanouts:
        frontier = layers[-1]
        src, dst = [frontier], [frontier]  # self edges
        for v in frontier.tolist():
            lo, hi = g.offsets[v], g.offsets[v + 1]
            nbrs = g.indices[lo:hi]
            trace.append(np.arange(lo, hi))
            if nbrs.size == 0:
                notes.append(f"node {v} has no neighbors")
                continue
            k = min(fanout, nbrs.size)
            if warr is None:
                picked, _ = weighted_choice(nbrs, None, k, False, rng)
            else:
                good = warr[nbrs] > 0
                n_good = int(np.count_nonzero(good))
                parts = []
                if n_good:
                    part, _ = weighted_choice(nbrs[good], warr, min(k, n_good), False, rng)
                    parts.append(part)
                if k > n_good:
                    part, fb = weighted_choice(nbrs[~good], warr, k - n_good, False, rng)
                    fallbacks += fb
                    parts.append(part)
                picked = np.concatenate(parts)
            src.append(np.full(picked.size, v, dtype=np.int64))
            dst.append(picked)
        src, dst = np.concatenate(src), np.concatenate(dst)
        nxt = np.union1d(frontier, dst)
        blocks.append(_block(frontier, nxt, src, dst))
        layers.append(nxt)
    return SampleResult(
        batch_index=batch.batch_index,
        layers=layers,
        blocks=blocks,
        id_map=layers[-1],
        access_trace=_concat(trace),
        fallback_count=fallbacks,
        warnings=notes,
    )


def layer_wise_sample(g: Graph, batch: Batch, config: SamplerConfig, params: Optional[LocalityParams],
                      rng: np.random.Generator) -> SampleResult:
    """Top-down layer sampling.

    For each lower layer the candidates are the neighbors of the layer above.
    With ``params`` the candidates are augmented with part of the layer above
    (``parent_reuse_ratio``) and drawn in proportion to degree; without it the
    draw is uniform. At most ``layer_sizes[l]`` nodes are drawn without
    replacement; the drawn layer becomes the parent set of the next one.
    """
    layers = [as_nodeset(batch.node_ids, g.num_nodes)]
    blocks, trace, notes = [], [], []
    fallbacks = 0
    for size in config.layer_sizes:
        parents = layers[-1]
        pos, deg = gather_rows(g, parents)
        trace.append(pos)
        cand = np.unique(g.indices[pos])
        if params is not None and params.parent_reuse_ratio > 0:
            cand = augment_with_parents(cand, parents, params.parent_reuse_ratio, rng)
        if cand.size == 0:
            notes.append(f"layer {len(layers)}: empty candidate set")
            layers.append(cand)
            blocks.append(sp.csr_matrix((len(parents), 0)))
            continue
        if cand.size <= size:
            drawn = cand
        else:
            if params is None:
                w = None
            else:
                lw = layer_weights(g, cand, params)
                fallbacks += lw.uniform_fallback
                w = lw.weights
            drawn, _ = weighted_choice(cand, w, size, False, rng)
            drawn = np.sort(drawn)
        src = np.repeat(parents, deg)
        dst = g.indices[pos]
        hit = np.isin(dst, drawn)
        self_hit = np.isin(parents, drawn)
        src = np.concatenate([src[hit], parents[self_hit]])
        dst = np.concatenate([dst[hit], parents[self_hit]])
        blocks.append(_block(parents, drawn, src, dst))
        layers.append(drawn)
    return SampleResult(
        batch_index=batch.batch_index,
        layers=layers,
        blocks=blocks,
        id_map=np.unique(np.concatenate(layers)),
        access_trace=_concat(trace),
        fallback_count=fallbacks,
        warnings=notes,
    )


def subgraph_sample(g: Graph, config: SamplerConfig, weights, rng: np.random.Generator,
                    roots=None, batch_index: int = 0) -> SampleResult:
    """Fill a node pool by weighted root draws (with replacement), then induce.

    Draws continue until the pool holds ``subgraph_budget`` distinct nodes.
    ``roots`` restricts the draw (default: every node).
    """
    budget = config.subgraph_budget
    roots = np.arange(g.num_nodes, dtype=np.int64) if roots is None else as_nodeset(roots, g.num_nodes)
    if budget > len(roots):
        raise BudgetError(f"budget {budget} exceeds the {len(roots)} available root nodes")
    warr = _weight_array(weights)
    if warr is not None:
        admissible = int(np.count_nonzero(warr[roots] > 0))
        if 0 < admissible < budget:
            raise BudgetError(
                f"only {admissible} nodes have positive weight; budget {budget} is short by {budget - admissible}")
    pool = np.empty(0, dtype=np.int64)
    fallbacks = 0
    while pool.size < budget:
        drawn, fb = weighted_choice(roots, warr, budget - pool.size, True, rng)
        fallbacks += fb
        pool = np.union1d(pool, drawn)  # processing: sort + dedupe
    sub, ids = induce_subgraph(g, pool)
    return SampleResult(
        batch_index=batch_index,
        layers=[ids],
        blocks=[],
        id_map=ids,
        access_trace=gather_rows(g, ids)[0],
        fallback_count=fallbacks,
        subgraph=sub,
    )


def _concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts).astype(np.int64) if len(parts) else np.empty(0, dtype=np.int64)


# ----------------------------------------------------------- two stages

@dataclass
class SamplerRun:
    results: list
    init_seconds: float
    execute_seconds: list

    @property
    def fallback_count(self) -> int:
        return sum(r.fallback_count for r in self.results)


class UnifiedSampler:
    """INIT once, EXECUTE per batch.

    ``weights_cache`` names a ``GSLW`` file: if it exists the weights are loaded
    from it during INIT, otherwise they are constructed and written there.
    """

    def __init__(self, g: Graph, train_nodes, config: SamplerConfig,
                 weights_cache=None, workers: int = 1):
        self.g = g
        self.train_nodes = np.asarray(train_nodes, dtype=np.int64)
        self.config = config
        self.weights_cache = Path(weights_cache) if weights_cache is not None else None
        self.workers = workers
        self.batches: Optional[list] = None
        self.weights: Optional[LocalityWeights] = None
        self.init_seconds = 0.0
        self.execute_seconds: list = []

    def init(self) -> "UnifiedSampler":
        t0 = time.perf_counter()
        cfg = self.config
        nodes = self.train_nodes
        if cfg.shuffle:
            nodes = np.random.default_rng(cfg.seed).permutation(nodes)
        self.batches = BatchPlan(nodes, cfg.batch_size)
        if isinstance(cfg.locality, LocalityWeights):
            self.weights = cfg.locality
        elif cfg.locality is not None and cfg.category != LAYER_WISE:
            if self.weights_cache is not None:
                try:
                    self.weights = load_weights(self.weights_cache, self.g)
                except FileNotFoundError:
                    pass
                else:
                    if self.weights.params != cfg.locality:
                        self.weights = None
            if self.weights is None:
                self.weights = construct_locality(self.g, cfg.locality, workers=self.workers)
                if self.weights_cache is not None:
                    save_weights(self.weights, self.weights_cache)
        self.init_seconds = time.perf_counter() - t0
        return self

    def sample(self, batch: Batch, epoch: int = 0) -> SampleResult:
        cfg = self.config
        rng = batch_rng(cfg.seed, batch.batch_index, epoch)
        if cfg.category == NODE_WISE:
            return node_wise_sample(self.g, batch, cfg, rng, self.weights)
        if cfg.category == LAYER_WISE:
            return layer_wise_sample(self.g, batch, cfg, cfg.locality_params, rng)
        return subgraph_sample(self.g, cfg, self.weights, rng, roots=self.train_nodes,
                               batch_index=batch.batch_index)

    def execute(self, epoch: int = 0, jobs: int = 1) -> Iterator[SampleResult]:
        if self.batches is None:
            self.init()
        self.execute_seconds = []

        def timed(batch):
            t0 = time.perf_counter()
            res = self.sample(batch, epoch)
            return res, time.perf_counter() - t0

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for res, dt in pool.map(timed, self.batches):
                    self.execute_seconds.append(dt)
                    yield res
        else:
            for batch in self.batches:
                res, dt = timed(batch)
                self.execute_seconds.append(dt)
                yield res


def run_sampler(g: Graph, train_nodes, config: SamplerConfig, weights_cache=None,
                epoch: int = 0, jobs: int = 1) -> SamplerRun:
    sampler = UnifiedSampler(g, train_nodes, config, weights_cache=weights_cache).init()
    results = list(sampler.execute(epoch=epoch, jobs=jobs))
    return SamplerRun(results, sampler.init_seconds, list(sampler.execute_seconds))


# ---------------------------------------------------------------- export

_T_HEADER = struct.Struct("<4sIQ")


def save_trace(trace, path) -> None:
    """Write an access trace in the ``GSTR`` format."""
    trace = np.asarray(trace, dtype=np.int64)
    if trace.size and trace.min() < 0:
        raise ValueError("trace positions must be non-negative")
    Path(path).write_bytes(_T_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.size) + trace.astype("<u8").tobytes())


def load_trace(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _T_HEADER.size:
        raise ValueError(f"{path}: truncated trace file")
    magic, version, count = _T_HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != TRACE_VERSION:
        raise ValueError(f"{path}: unsupported trace version {version}")
    if len(raw) != _T_HEADER.size + 8 * count:
        raise ValueError(f"{path}: truncated trace file")
    return np.frombuffer(raw, dtype="<u8", count=count, offset=_T_HEADER.size).astype(np.int64)


def results_to_json(results: Sequence[SampleResult]) -> str:
    return json.dumps([r.to_json() for r in results], separators=(",", ":"))
