"""Immutable CSR graph storage, loaders, generators and dataset statistics."""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "Graph",
    "GraphStats",
    "GraphFormatError",
    "from_edges",
    "as_nodeset",
    "load_edge_list",
    "save_edge_list",
    "generate_clustered",
    "shuffle_ids",
    "stats",
    "induce_subgraph",
    "gather_rows",
    "save_csr",
    "load_csr",
]

CSR_MAGIC = b"GSMP"
CSR_VERSION = 1


class GraphFormatError(ValueError):
    """Raised for malformed edge lists and corrupt binary CSR files."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Adjacency in CSR form.

    ``offsets`` has ``num_nodes + 1`` entries and ``indices[offsets[v]:offsets[v+1]]``
    is the strictly ascending neighbor row of ``v``. Undirected graphs are stored
    with both directions present. ``labels`` and ``features`` are optional per-node
    payloads carried through relabelings.
    """

    offsets: np.ndarray
    indices: np.ndarray
    directed: bool = False
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    features: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        offsets.flags.writeable = False
        indices.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "indices", indices)

    @property
    def num_nodes(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_entries(self) -> int:
        return len(self.indices)

    @property
    def num_edges(self) -> int:
        """Edge count; each undirected edge counted once."""
        if self.directed:
            return self.num_entries
        loops = int(np.count_nonzero(self.indices == self.row_ids()))
        return (self.num_entries - loops) // 2 + loops

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.diff(self.offsets)
        deg.flags.writeable = False
        return deg

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.offsets[v]:self.offsets[v + 1]]

    def row_ids(self) -> np.ndarray:
        """Source node of every entry of ``indices``."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)

    @cached_property
    def fingerprint(self) -> int:
        """64-bit checksum of the CSR arrays (and direction flag)."""
        lo = zlib.crc32(self.offsets.tobytes())
        hi = zlib.crc32(self.indices.tobytes(), zlib.crc32(bytes([self.directed])))
        return (hi << 32) | lo

    def check(self) -> None:
        """Raise ``AssertionError`` if any CSR invariant is violated."""
        off, idx, n = self.offsets, self.indices, self.num_nodes
        assert n >= 0 and off[0] == 0 and off[-1] == len(idx)
        assert np.all(np.diff(off) >= 0), "offsets must be non-decreasing"
        if len(idx):
            assert idx.min() >= 0 and idx.max() < n, "index out of range"
            rows = self.row_ids()
            same_row = rows[1:] == rows[:-1]
            assert np.all(idx[1:][same_row] > idx[:-1][same_row]), "rows must be strictly ascending"
        if not self.directed:
            assert _is_symmetric(self), "undirected graph must be stored symmetrically"

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.directed == other.directed
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None

    def to_scipy(self):
        import scipy.sparse as sp

        data = np.ones(self.num_entries, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.offsets), shape=(self.num_nodes, self.num_nodes))


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    ann: int
    mnn: int
    nrr: float

    def csv_row(self) -> str:
        return f"{self.num_nodes},{self.num_edges},{self.ann},{self.mnn},{self.nrr:.4f}"


def _is_symmetric(g: Graph) -> bool:
    src = g.row_ids()
    fwd = src * g.num_nodes + g.indices
    rev = np.sort(g.indices * g.num_nodes + src)
    return np.array_equal(fwd, rev)


def from_edges(src, dst, num_nodes: int, directed: bool = False, **payload) -> Graph:
    """Build a well-formed CSR graph from (possibly duplicated) edge arrays."""
    src = np.asarray(src, dtype=np.int64).ravel()
    dst = np.asarray(dst, dtype=np.int64).ravel()
    if src.shape != dst.shape:
        raise ValueError("src and dst must have equal length")
    if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
        raise ValueError("edge endpoint out of range")
    if not directed:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    keys = np.unique(src * num_nodes + dst)
    rows, cols = np.divmod(keys, num_nodes) if num_nodes else (keys, keys)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
    return Graph(offsets, cols, directed=directed, **payload)


def as_nodeset(ids, num_nodes: Optional[int] = None) -> np.ndarray:
    """Return ``ids`` as a sorted, deduplicated int64 array, validating the range."""
    if isinstance(ids, (set, frozenset)) or not hasattr(ids, "__len__"):
        ids = list(ids)
    out = np.unique(np.asarray(ids, dtype=np.int64))
    if num_nodes is not None and len(out) and (out[0] < 0 or out[-1] >= num_nodes):
        raise ValueError(f"node ids must lie in [0, {num_nodes})")
    return out


def gather_rows(g: Graph, rows) -> tuple[np.ndarray, np.ndarray]:
    """Positions into ``g.indices`` covered by ``rows`` (in order) and each row's length."""
    rows = np.asarray(rows, dtype=np.int64)
    starts = g.offsets[rows]
    lengths = g.offsets[rows + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), lengths
    shift = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    return np.arange(total, dtype=np.int64) + shift, lengths


# ---------------------------------------------------------------- loaders

def load_edge_list(path, directed: bool = False) -> Graph:
    """Read a whitespace separated ``src dst`` edge list (``#`` starts a comment line)."""
    src, dst = [], []
    with open(path, "r", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id in {line!r}")
            src.append(u)
            dst.append(v)
    if not src:
        raise GraphFormatError(f"{path}: no edges found")
    num_nodes = 1 + max(max(src), max(dst))
    return from_edges(src, dst, num_nodes, directed=directed)


def save_edge_list(g: Graph, path) -> None:
    src = g.row_ids()
    dst = g.indices
    if not g.directed:
        keep = src <= dst
        src, dst = src[keep], dst[keep]
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# nodes {g.num_nodes}\n")
        fh.writelines(f"{u} {v}\n" for u, v in zip(src.tolist(), dst.tolist()))


# ------------------------------------------------------------- generators

def generate_clustered(num_clusters: int, nodes_per_cluster: int, p_intra: float,
                       p_inter: float, seed: int) -> Graph:
    """Planted-partition graph with cluster ``c`` occupying ids ``[c*k, (c+1)*k)``.

    Every unordered pair is an edge independently with probability ``p_intra``
    (same cluster) or ``p_inter``. The returned graph carries the cluster labels.
    """
    if num_clusters < 1 or nodes_per_cluster < 1:
        raise ValueError("cluster counts must be >= 1")
    for p in (p_intra, p_inter):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    n = num_clusters * nodes_per_cluster
    labels = np.repeat(np.arange(num_clusters, dtype=np.int64), nodes_per_cluster)
    rng = np.random.default_rng(seed)
    src, dst = [], []
    # one uniform draw per pair, row by row, so the output depends only on the seed
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        p = np.where(labels[j] == labels[i], p_intra, p_inter)
        hit = j[rng.random(n - i - 1) < p]
        src.append(np.full(len(hit), i, dtype=np.int64))
        dst.append(hit)
    src = np.concatenate(src) if src else np.empty(0, np.int64)
    dst = np.concatenate(dst) if dst else np.empty(0, np.int64)
    return from_edges(src, dst, n, directed=False, labels=labels)


def shuffle_ids(g: Graph, seed: int, permutation=None) -> Graph:
    """Relabel nodes by a uniform random permutation (``new = perm[old]``).

    Passing ``permutation`` explicitly bypasses the random draw.
    """
    if permutation is None:
        perm = np.random.default_rng(seed).permutation(g.num_nodes)
    else:
        perm = np.asarray(permutation, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(g.num_nodes)):
            raise ValueError("permutation must be a rearrangement of 0..num_nodes-1")
    inv = np.argsort(perm)
    payload = {}
    if g.labels is not None:
        payload["labels"] = np.asarray(g.labels)[inv]
    if g.features is not None:
        payload["features"] = np.asarray(g.features)[inv]
    return from_edges(perm[g.row_ids()], perm[g.indices], g.num_nodes, directed=g.directed, **payload)


# ----------------------------------------------------------------- stats

def stats(g: Graph) -> GraphStats:
    """Node/edge counts plus ANN, MNN and NRR.

    ANN is the mean out-degree rounded half-up, MNN the smallest degree bound
    covering at least 90% of the nodes, and NRR the fraction of neighbor-list
    entries whose target appears in two or more neighbor lists.
    """
    n = g.num_nodes
    deg = g.degrees
    if n == 0:
        return GraphStats(0, 0, 0, 0, 0.0)
    ann = int(math.floor(g.num_entries / n + 0.5))
    cover = math.ceil(0.9 * n - 1e-9)
    mnn = int(np.sort(deg)[max(cover, 1) - 1])
    if g.num_entries == 0:
        nrr = 0.0
    else:
        # rows are deduplicated, so occurrence count == number of lists holding the target
        lists_holding = np.bincount(g.indices, minlength=n)
        nrr = float(np.count_nonzero(lists_holding[g.indices] >= 2)) / g.num_entries
    return GraphStats(n, g.num_edges, ann, mnn, nrr)


def induce_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph on ``nodes`` relabeled by rank.

    Returns the subgraph and the ``local -> original`` id array (``ids[local]``);
    ``np.searchsorted(ids, original)`` gives the inverse direction.
    """
    ids = as_nodeset(nodes, g.num_nodes)
    if len(ids) == 0:
        raise ValueError("cannot induce a subgraph on an empty node set")
    local = np.full(g.num_nodes, -1, dtype=np.int64)
    local[ids] = np.arange(len(ids))
    pos, lengths = gather_rows(g, ids)
    nbr_local = local[g.indices[pos]]
    keep = nbr_local >= 0
    row_local = np.repeat(np.arange(len(ids)), lengths)[keep]
    offsets = np.zeros(len(ids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(row_local, minlength=len(ids)), out=offsets[1:])
    payload = {}
    if g.labels is not None:
        payload["labels"] = np.asarray(g.labels)[ids]
    if g.features is not None:
        payload["features"] = np.asarray(g.features)[ids]
    # rows of g are ascending and the relabeling is monotone, so rows stay sorted
    return Graph(offsets, nbr_local[keep], directed=g.directed, **payload), ids


# ------------------------------------------------------------ binary CSR

_HEADER = struct.Struct("<4sIQQ")


def save_csr(g: Graph, path) -> None:
    """Write the little-endian ``GSMP`` binary CSR cache."""
    if g.num_entries and g.indices.max() > 0xFFFFFFFF:
        raise ValueError("node ids exceed the u32 index range of the CSR cache")
    body = b"".join([
        _HEADER.pack(CSR_MAGIC, CSR_VERSION, g.num_nodes, g.num_entries),
        g.offsets.astype("<u8").tobytes(),
        g.indices.astype("<u4").tobytes(),
    ])
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_csr(path, directed: Optional[bool] = None) -> Graph:
    """Read a ``GSMP`` file written by :func:`save_csr`.

    The format carries no direction flag; when ``directed`` is None it is
    inferred (a symmetric adjacency loads as undirected).
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise GraphFormatError(f"{path}: truncated CSR file")
    magic, version, n, m = _HEADER.unpack_from(raw)
    if magic != CSR_MAGIC:
        raise GraphFormatError(f"{path}: bad magic {magic!r}")
    if version != CSR_VERSION:
        raise GraphFormatError(f"{path}: unsupported CSR format version {version}")
    expected = _HEADER.size + 8 * (n + 1) + 4 * m + 4
    if len(raw) != expected:
        raise GraphFormatError(f"{path}: truncated CSR file ({len(raw)} of {expected} bytes)")
    (crc,) = struct.unpack_from("<I", raw, expected - 4)
    if zlib.crc32(raw[:expected - 4]) != crc:
        raise GraphFormatError(f"{path}: checksum mismatch")
    offsets = np.frombuffer(raw, dtype="<u8", count=n + 1, offset=_HEADER.size).astype(np.int64)
    indices = np.frombuffer(raw, dtype="<u4", count=m, offset=_HEADER.size + 8 * (n + 1)).astype(np.int64)
    g = Graph(offsets, indices, directed=False)
    if directed is None:
        directed = not _is_symmetric(g)
    if directed:
        g = Graph(offsets, indices, directed=True)
    try:
        g.check()
    except AssertionError as exc:
        raise GraphFormatError(f"{path}: malformed CSR payload ({exc})") from None
    return g
