"""Replay sampler access traces through an L2/L3 model and compare subgraph topology."""
import math

import numpy as np

from locsampler import (CacheConfig, LocalityParams, SamplerConfig, compare_runs, construct_locality,
                        generate_clustered, run_sampler, shuffle_ids, threshold_for_fraction)

g = shuffle_ids(generate_clustered(8, 256, 0.1, 0.005, seed=0), seed=1)
nodes = np.arange(g.num_nodes)
batch = math.ceil(g.num_nodes / 50)

# %% pick s so that 40% of the nodes stay eligible
s = threshold_for_fraction(g, 2, 0.4)
w = construct_locality(g, LocalityParams(2, s))
print(f"s = {s:.4f}, eligible {w.eligible_fraction:.3f}")

vanilla = run_sampler(g, nodes, SamplerConfig("subgraph", batch, subgraph_budget=200, seed=2))
ours = run_sampler(g, nodes, SamplerConfig("subgraph", batch, subgraph_budget=200, seed=2, locality=w))

# %% one warm hierarchy per stream
rep = compare_runs(g, vanilla.results, ours.results, CacheConfig())
for k, v in rep.ratios.items():
    print(f"{k:>14}: {v:.4f}")

# %% per-batch cold caches only see reuse inside a batch
cold = compare_runs(g, vanilla.results, ours.results, CacheConfig(), warm=False)
print("cold l3_dram_ratio:", round(cold.ratios["l3_dram_ratio"], 4))
