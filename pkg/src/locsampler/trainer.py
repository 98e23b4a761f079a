"""Two-layer GCN with hand-written backpropagation, trained on sampler output.

The model computes ``logits = A_out . relu(A_in . X . W0) . W1``. For
full-graph and subgraph training both propagation matrices are the
renormalized adjacency ``D^-1/2 (A + I) D^-1/2`` of the (sub)graph; for the
layered samplers they are the row-normalized sampled blocks.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .samplers import SUBGRAPH, SamplerConfig, UnifiedSampler

__all__ = [
    "ModelParams",
    "EpochStats",
    "TrainReport",
    "normalize_adj",
    "row_normalize",
    "init_params",
    "gcn_forward",
    "softmax_cross_entropy",
    "loss_and_grad",
    "accuracy",
    "train",
    "cluster_task",
    "read_features",
    "write_features",
    "read_splits",
    "write_splits",
]


@dataclass
class ModelParams:
    w0: np.ndarray
    w1: np.ndarray
    seed: Optional[int] = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.w0.copy(), self.w1.copy(), self.seed)


def normalize_adj(g: Graph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    if g.directed:
        raise ValueError("normalize_adj expects an undirected graph")
    a = g.to_scipy()
    a = (a + sp.identity(g.num_nodes, format="csr")).tocsr()
    a.data[:] = 1.0  # an existing self loop stays weight 1
    d = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(d))
    out = (inv_sqrt @ a @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


def row_normalize(block: sp.spmatrix) -> sp.csr_matrix:
    """Divide each row by its sum (empty rows stay zero)."""
    block = sp.csr_matrix(block, dtype=np.float64)
    s = np.asarray(block.sum(axis=1)).ravel()
    scale = np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)
    return (sp.diags(scale) @ block).tocsr()


def init_params(in_dim: int, hidden: int, classes: int, seed: int) -> ModelParams:
    """Glorot-uniform initialisation, seeded."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=(fan_in, fan_out))

    return ModelParams(glorot(in_dim, hidden), glorot(hidden, classes), seed)


def _split_adj(adj):
    if isinstance(adj, tuple):
        return adj
    return adj, adj


def gcn_forward(adj, X: np.ndarray, params: ModelParams) -> np.ndarray:
    """Logits of the two-layer model.

    ``adj`` is one square propagation matrix or an ``(outer, inner)`` pair of
    rectangular blocks, ``inner`` being applied first.
    """
    outer, inner = _split_adj(adj)
    X = np.asarray(X, dtype=np.float64)
    if inner.shape[1] != X.shape[0] or X.shape[1] != params.w0.shape[0] \
            or outer.shape[1] != inner.shape[0] or params.w0.shape[1] != params.w1.shape[0]:
        raise ValueError("dimension mismatch between adjacency, features and weights")
    hidden = np.maximum(inner @ (X @ params.w0), 0.0)
    return outer @ (hidden @ params.w1)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the masked rows and its gradient w.r.t. ``logits``."""
    idx = _mask_index(mask, len(logits))
    if idx.size == 0:
        raise ValueError("mask selects no nodes")
    z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = np.asarray(labels)[idx]
    loss = -float(logp[np.arange(idx.size), y].mean())
    grad = np.zeros_like(logits, dtype=np.float64)
    p = np.exp(logp)
    p[np.arange(idx.size), y] -= 1.0
    grad[idx] = p / idx.size
    return loss, grad


def _mask_index(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ValueError("boolean mask length must equal the number of rows")
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def loss_and_grad(adj, X: np.ndarray, params: ModelParams, labels, mask) -> tuple[float, tuple]:
    """Masked cross-entropy of :func:`gcn_forward` and exact gradients for (W0, W1)."""
    outer, inner = _split_adj(adj)
    X = np.asarray(X, dtype=np.float64)
    ax = inner @ X
    pre = ax @ params.w0
    hidden = np.maximum(pre, 0.0)
    ah = outer @ hidden
    logits = ah @ params.w1
    loss, d_logits = softmax_cross_entropy(logits, labels, mask)
    g_w1 = ah.T @ d_logits
    d_hidden = outer.T @ (d_logits @ params.w1.T)
    d_pre = d_hidden * (pre > 0)
    g_w0 = ax.T @ d_pre
    return loss, (g_w0, g_w1)


def accuracy(logits: np.ndarray, labels, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits[idx], axis=1) == np.asarray(labels)[idx]))


# ----------------------------------------------------------------- training

@dataclass
class EpochStats:
    epoch: int
    sampling_seconds: float
    compute_seconds: float
    total_seconds: float
    loss: float
    val_accuracy: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    test_accuracy: float = 0.0
    total_seconds: float = 0.0
    init_seconds: float = 0.0
    fallback_count: int = 0
    eligible_fraction: Optional[float] = None

    @property
    def final_val_accuracy(self) -> float:
        return self.epochs[-1].val_accuracy if self.epochs else 0.0

    @property
    def best_val_accuracy(self) -> float:
        return max((e.val_accuracy for e in self.epochs), default=0.0)

    @property
    def train_seconds(self) -> float:
        return self.init_seconds + sum(e.total_seconds for e in self.epochs)

    def losses(self) -> list:
        return [e.loss for e in self.epochs]

    def data(self) -> dict:
        """Seed-determined content only (no wall-clock values)."""
        return {
            "epochs": [{"epoch": e.epoch, "loss": e.loss, "val_accuracy": e.val_accuracy} for e in self.epochs],
            "test_accuracy": self.test_accuracy,
            "fallback_count": self.fallback_count,
            "eligible_fraction": self.eligible_fraction,
        }

    def timing(self) -> dict:
        return {
            "init_seconds": self.init_seconds,
            "total_seconds": self.total_seconds,
            "epochs": [{k: v for k, v in asdict(e).items() if k.endswith("seconds") or k == "epoch"}
                       for e in self.epochs],
        }

    def to_json(self, with_timing: bool = False) -> str:
        doc = self.data()
        if with_timing:
            doc["timing"] = self.timing()
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self, with_timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["epoch", "loss", "val_accuracy"]
        if with_timing:
            cols += ["sampling_seconds", "compute_seconds", "total_seconds"]
        w.writerow(cols)
        for e in self.epochs:
            w.writerow([e.epoch] + [f"{getattr(e, c):.6g}" for c in cols[1:]])
        return buf.getvalue()


def _batch_problem(g: Graph, features, labels, train_mask, res, category):
    """(adj, X, labels, mask) for one sampled batch, or None if nothing to train on."""
    if category == SUBGRAPH:
        ids = res.id_map
        mask = train_mask[ids]
        if not mask.any():
            return None
        return normalize_adj(res.subgraph), features[ids], labels[ids], mask
    if len(res.blocks) != 2:
        raise ValueError("the two-layer model needs exactly two sampled hops/layers")
    top = res.layers[0]
    mask = train_mask[top]
    if not mask.any():
        return None
    adj = (row_normalize(res.blocks[0]), row_normalize(res.blocks[1]))
    return adj, features[res.layers[2]], labels[top], mask


def train(g: Graph, features, labels, splits, sampler_config: Optional[SamplerConfig],
          epochs: int, lr: float, hidden: int = 16, seed: int = 0,
          weights_cache=None) -> TrainReport:
    """Gradient-descent training; ``sampler_config=None`` trains on the full graph.

    ``splits`` is ``(train, val, test)`` node-id arrays. Validation and test
    accuracy are measured with full-graph propagation.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    train_idx, val_idx, test_idx = (np.asarray(s, dtype=np.int64) for s in splits)
    if len(np.intersect1d(train_idx, val_idx)) or len(np.intersect1d(train_idx, test_idx)) \
            or len(np.intersect1d(val_idx, test_idx)):
        raise ValueError("train/val/test splits must be disjoint")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = int(labels.max()) + 1
    params = init_params(features.shape[1], hidden, classes, seed)
    full_adj = normalize_adj(g)
    train_mask = np.zeros(g.num_nodes, dtype=bool)
    train_mask[train_idx] = True

    report = TrainReport()
    t_run = time.perf_counter()
    sampler = None
    if sampler_config is not None:
        sampler = UnifiedSampler(g, train_idx, sampler_config, weights_cache=weights_cache).init()
        report.init_seconds = sampler.init_seconds
        if sampler.weights is not None:
            report.eligible_fraction = sampler.weights.eligible_fraction

    for epoch in range(epochs):
        t_epoch = time.perf_counter()
        compute = 0.0
        losses = []
        if sampler is None:
            t0 = time.perf_counter()
            loss, grads = loss_and_grad(full_adj, features, params, labels, train_mask)
            _step(params, grads, lr)
            losses.append(loss)
            compute += time.perf_counter() - t0
            sampling = 0.0
        else:
            for res in sampler.execute(epoch=epoch):
                report.fallback_count += res.fallback_count
                t0 = time.perf_counter()
                prob = _batch_problem(g, features, labels, train_mask, res, sampler_config.category)
                if prob is not None:
                    loss, grads = loss_and_grad(*prob[:2], params, *prob[2:])
                    _step(params, grads, lr)
                    losses.append(loss)
                compute += time.perf_counter() - t0
            sampling = float(sum(sampler.execute_seconds))
        val = accuracy(gcn_forward(full_adj, features, params), labels, val_idx)
        report.epochs.append(EpochStats(
            epoch=epoch,
            sampling_seconds=sampling,
            compute_seconds=compute,
            total_seconds=time.perf_counter() - t_epoch,
            loss=float(np.mean(losses)) if losses else float("nan"),
            val_accuracy=val,
        ))
    report.test_accuracy = accuracy(gcn_forward(full_adj, features, params), labels, test_idx)
    report.total_seconds = time.perf_counter() - t_run
    return report


def _step(params: ModelParams, grads, lr: float) -> None:
    params.w0 -= lr * grads[0]
    params.w1 -= lr * grads[1]


# ---------------------------------------------------------- task and files

def cluster_task(labels, noise: float, seed: int, fractions=(0.6, 0.2, 0.2)):
    """One-hot cluster features plus Gaussian noise, and a random train/val/test split."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    classes = int(labels.max()) + 1
    features = np.eye(classes)[labels] + rng.normal(0.0, noise, size=(len(labels), classes))
    order = rng.permutation(len(labels))
    n_train = int(round(fractions[0] * len(labels)))
    n_val = int(round(fractions[1] * len(labels)))
    splits = (np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
              np.sort(order[n_train + n_val:]))
    return features, splits


def write_features(path, features, labels) -> None:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, dim = features.shape
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{n} {dim} {int(labels.max()) + 1}\n")
        for row, y in zip(features, labels):
            fh.write(" ".join(repr(float(x)) for x in row) + f" {int(y)}\n")


def read_features(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'nodes dim classes'")
        n, dim, classes = (int(x) for x in header)
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n or any(len(r) != dim + 1 for r in rows):
        raise ValueError(f"{path}: expected {n} rows of {dim} values plus a label")
    features = np.array([[float(x) for x in r[:dim]] for r in rows])
    labels = np.array([int(r[dim]) for r in rows], dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"{path}: label outside [0, {classes})")
    return features, labels


def write_splits(path, splits: Sequence) -> None:
    with open(path, "w", newline="\n") as fh:
        for part in splits:
            fh.write(" ".join(str(int(v)) for v in part) + "\n")


def read_splits(path) -> tuple:
    with open(path) as fh:
        lines = fh.read().split("\n")
    lines = (lines + ["", "", ""])[:3]
    return tuple(np.array([int(x) for x in line.split()], dtype=np.int64) for line in lines)
