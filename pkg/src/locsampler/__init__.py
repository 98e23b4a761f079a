"""Locality-aware minibatch sampling for GNN training on CSR graphs."""

__version__ = "0.1.0"

from .graph import (  # noqa: E402
    Graph,
    GraphFormatError,
    GraphStats,
    from_edges,
    generate_clustered,
    induce_subgraph,
    load_csr,
    load_edge_list,
    save_csr,
    save_edge_list,
    shuffle_ids,
    stats,
)
from .locality import (  # noqa: E402
    LocalityParams,
    LocalityWeights,
    construct_locality,
    layer_weights,
    load_weights,
    save_weights,
    similarity,
    threshold_for_fraction,
)
from .samplers import SamplerConfig, UnifiedSampler, run_sampler  # noqa: E402
from .analysis import CacheConfig, compare_runs, simulate_cache, topology  # noqa: E402
from .trainer import train  # noqa: E402
