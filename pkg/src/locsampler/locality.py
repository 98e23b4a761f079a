"""Locality-aware sampling weights.

A node is considered local when its (sorted) neighbor ids are close to a
contiguous run. The per-node score is the dot-product ratio between the real
neighbor ids and a generated contiguous run anchored at the smallest neighbor::

    score(v) = sum_i real[i] * good[i] / sum_i real[i] ** 2

Binary weights (node-wise and subgraph samplers) keep nodes whose degree and
score clear the ``min_neighbors`` / ``similarity_threshold`` filters. The
layer-wise sampler instead weights candidates by degree and mixes in part of
the previously sampled layer.
"""
from __future__ import annotations

import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, as_nodeset

__all__ = [
    "LocalityParams",
    "LocalityWeights",
    "WeightsFileError",
    "FingerprintMismatch",
    "good_neighbor_generation",
    "similarity",
    "node_similarities",
    "construct_locality",
    "threshold_for_fraction",
    "layer_weights",
    "augment_with_parents",
    "save_weights",
    "load_weights",
]

BINARY = "binary"
PROPORTIONAL = "proportional"
_MODE_CODES = {BINARY: 0, PROPORTIONAL: 1}

WEIGHTS_MAGIC = b"GSLW"
WEIGHTS_VERSION = 1


class WeightsFileError(ValueError):
    """Malformed, truncated or wrong-version weight cache."""


class FingerprintMismatch(WeightsFileError):
    """The weight cache was built for a different graph."""


@dataclass(frozen=True)
class LocalityParams:
    min_neighbors: int = 2
    similarity_threshold: float = 0.9
    parent_reuse_ratio: float = 0.5

    def __post_init__(self):
        if self.min_neighbors < 1:
            raise ValueError("min_neighbors must be >= 1")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in [0, 1]")
        if not 0.0 <= self.parent_reuse_ratio <= 1.0:
            raise ValueError("parent_reuse_ratio must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class LocalityWeights:
    """Per-node sampling weights and the parameters that produced them."""

    mode: str
    weights: np.ndarray
    params: LocalityParams
    graph_fingerprint: int
    uniform_fallback: bool = field(default=False)

    def __post_init__(self):
        if self.mode not in _MODE_CODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def eligible(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @property
    def eligible_fraction(self) -> float:
        return float(np.count_nonzero(self.weights > 0)) / max(len(self.weights), 1)

    def probabilities(self) -> np.ndarray:
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("no node has positive weight")
        return self.weights / total

    def __eq__(self, other):
        if not isinstance(other, LocalityWeights):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.params == other.params
            and self.graph_fingerprint == other.graph_fingerprint
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def good_neighbor_generation(neighbors) -> np.ndarray:
    """Contiguous id run of the same length, starting at the smallest neighbor."""
    neighbors = np.asarray(neighbors, dtype=np.int64)
    if neighbors.size == 0:
        raise ValueError("cannot generate good neighbors for an empty neighbor list")
    return neighbors[0] + np.arange(len(neighbors), dtype=np.int64)


def similarity(real, good=None) -> float:
    """Dot-product ratio between real neighbor ids and their good-neighbor run.

    ``real`` is sorted before scoring. Returns 1.0 for ``real == [0]``.
    """
    real = np.sort(np.asarray(real, dtype=np.int64))
    if good is None:
        good = good_neighbor_generation(real)
    good = np.asarray(good, dtype=np.int64)
    if len(real) != len(good):
        raise ValueError(f"length mismatch: {len(real)} real vs {len(good)} good neighbors")
    if len(real) == 0:
        raise ValueError("empty neighbor sequence")
    # exact integer sums, then a single correctly rounded division
    if int(real[-1]) ** 2 * len(real) < 2**62:
        num, den = int(np.dot(real, good)), int(np.dot(real, real))
    else:
        r, q = real.tolist(), good.tolist()
        num = sum(a * b for a, b in zip(r, q))
        den = sum(a * a for a in r)
    if den == 0:
        return 1.0
    return num / den


def node_similarities(g: Graph, workers: int = 1) -> np.ndarray:
    """Score of every node (NaN for nodes without neighbors)."""
    n = g.num_nodes
    if workers <= 1 or n < 2 * workers:
        return _similarity_block(g, 0, n)
    bounds = np.linspace(0, n, workers + 1).astype(np.int64)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda ab: _similarity_block(g, *ab), zip(bounds[:-1], bounds[1:]))
        return np.concatenate(list(parts))


def _similarity_block(g: Graph, lo: int, hi: int) -> np.ndarray:
    """Vectorized scores for nodes ``lo..hi-1``; integer sums make the result order independent."""
    off = g.offsets[lo:hi + 1]
    deg = np.diff(off)
    out = np.full(hi - lo, np.nan)
    if off[-1] == off[0]:
        return out
    real = g.indices[off[0]:off[-1]]
    if len(real) and int(real.max()) ** 2 * int(deg.max()) >= 2**62:
        for k in np.flatnonzero(deg):
            out[k] = similarity(real[off[k] - off[0]:off[k + 1] - off[0]])
        return out
    rank = np.arange(len(real)) - np.repeat(off[:-1] - off[0], deg)
    has = deg > 0
    starts = (off[:-1] - off[0])[has]
    anchor = np.repeat(real[starts], deg[has])
    num = np.add.reduceat(real * (anchor + rank), starts)
    den = np.add.reduceat(real * real, starts)
    score = np.ones(len(starts))
    nz = den != 0
    score[nz] = num[nz] / den[nz]
    out[has] = score
    return out


def construct_locality(g: Graph, params: LocalityParams, workers: int = 1) -> LocalityWeights:
    """Binary weights: 1 for nodes with ``degree >= n`` and score ``>= s``."""
    score = node_similarities(g, workers=workers)
    keep = (g.degrees >= params.min_neighbors) & (np.nan_to_num(score, nan=-1.0) >= params.similarity_threshold)
    return LocalityWeights(BINARY, keep.astype(np.float64), params, g.fingerprint)


def threshold_for_fraction(g: Graph, min_neighbors: int, fraction: float) -> float:
    """Largest threshold ``s`` keeping at least ``fraction`` of all nodes eligible.

    Nodes below ``min_neighbors`` never qualify, so the reachable fraction may be
    smaller; in that case ``s`` is 0.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    score = node_similarities(g)
    ok = (g.degrees >= min_neighbors) & ~np.isnan(score)
    cand = np.sort(score[ok])[::-1]
    need = math.ceil(fraction * g.num_nodes)
    if need > len(cand) or need == 0:
        return 0.0
    return float(np.clip(cand[need - 1], 0.0, 1.0))


def layer_weights(g: Graph, candidates, params: LocalityParams | None = None) -> LocalityWeights:
    """Degree-proportional weights restricted to ``candidates``.

    If every candidate is isolated, candidates get weight 1 instead and
    ``uniform_fallback`` is set.
    """
    cand = as_nodeset(candidates, g.num_nodes)
    if len(cand) == 0:
        raise ValueError("candidate set is empty")
    w = np.zeros(g.num_nodes)
    w[cand] = g.degrees[cand]
    fallback = not np.any(w[cand] > 0)
    if fallback:
        w[cand] = 1.0
    return LocalityWeights(PROPORTIONAL, w, params or LocalityParams(), g.fingerprint, uniform_fallback=fallback)


def augment_with_parents(candidates, parents, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Union of ``candidates`` with ``ceil(rho * |parents|)`` parents drawn without replacement."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    cand = as_nodeset(candidates)
    par = as_nodeset(parents)
    k = min(math.ceil(rho * len(par)), len(par))
    if k == 0:
        return cand
    return np.union1d(cand, rng.choice(par, size=k, replace=False))


# ------------------------------------------------------------ persistence

_W_HEADER = struct.Struct("<4sIBIddQ")


def save_weights(w: LocalityWeights, path) -> None:
    """Write the ``GSLW`` weight cache."""
    p = w.params
    body = _W_HEADER.pack(
        WEIGHTS_MAGIC, WEIGHTS_VERSION, _MODE_CODES[w.mode], p.min_neighbors,
        p.similarity_threshold, p.parent_reuse_ratio, w.graph_fingerprint,
    ) + w.weights.astype("<f8").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_weights(path, g: Graph) -> LocalityWeights:
    """Read a ``GSLW`` cache and verify it belongs to ``g``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _W_HEADER.size + 4:
        raise WeightsFileError(f"{path}: truncated weight file")
    magic, version, mode, n, s, rho, fp = _W_HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC:
        raise WeightsFileError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise WeightsFileError(f"{path}: weight file version {version}, expected {WEIGHTS_VERSION}")
    payload = len(raw) - _W_HEADER.size - 4
    if payload % 8:
        raise WeightsFileError(f"{path}: truncated weight array")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise WeightsFileError(f"{path}: checksum mismatch")
    if fp != g.fingerprint or payload // 8 != g.num_nodes:
        raise FingerprintMismatch(f"{path}: weights were built for a different graph")
    modes = {v: k for k, v in _MODE_CODES.items()}
    if mode not in modes:
        raise WeightsFileError(f"{path}: unknown mode code {mode}")
    weights = np.frombuffer(raw, dtype="<f8", count=payload // 8, offset=_W_HEADER.size)
    params = LocalityParams(min_neighbors=n, similarity_threshold=s, parent_reuse_ratio=rho)
    return LocalityWeights(modes[mode], weights.astype(np.float64), params, fp)
