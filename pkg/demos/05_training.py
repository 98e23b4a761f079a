"""Two-layer GCN on the planted-cluster task, full graph versus sampled minibatches."""
import numpy as np

from locsampler import (LocalityParams, SamplerConfig, construct_locality, generate_clustered, shuffle_ids,
                        threshold_for_fraction, train)
from locsampler.trainer import cluster_task

g = generate_clustered(4, 50, 0.3, 0.01, seed=0)
X, splits = cluster_task(g.labels, 0.1, seed=1)


def run(graph, features, labels, cfg, label):
    rep = train(graph, features, labels, splits, cfg, epochs=200, lr=0.5, seed=3)
    print(f"{label:>26}: best val {rep.best_val_accuracy:.3f}, final val {rep.final_val_accuracy:.3f}, "
          f"test {rep.test_accuracy:.3f}, {rep.train_seconds:.2f}s")
    return rep


# %% full graph and uniform subgraph minibatches
run(g, X, g.labels, None, "full graph")
sub = SamplerConfig("subgraph", batch_size=40, subgraph_budget=40, seed=2)
run(g, X, g.labels, sub, "subgraph, vanilla")

# %% locality weights on contiguous ids leave cluster 0 out of training
w = construct_locality(g, LocalityParams(2, threshold_for_fraction(g, 2, 0.4)))
print("eligible per cluster:", np.bincount(g.labels[w.eligible], minlength=4).tolist())
run(g, X, g.labels, SamplerConfig("subgraph", 40, subgraph_budget=40, seed=2, locality=w), "subgraph, locality")

# %% after shuffling ids, eligibility no longer tracks clusters
perm = np.random.default_rng(1).permutation(g.num_nodes)
h = shuffle_ids(g, seed=1, permutation=perm)
Xh = np.empty_like(X)
Xh[perm] = X
splits = tuple(np.sort(perm[s]) for s in splits)
wh = construct_locality(h, LocalityParams(2, threshold_for_fraction(h, 2, 0.4)))
print("eligible per cluster (shuffled):", np.bincount(h.labels[wh.eligible], minlength=4).tolist())
run(h, Xh, h.labels, SamplerConfig("subgraph", 40, subgraph_budget=40, seed=2, locality=wh),
    "subgraph, locality shuffled")
