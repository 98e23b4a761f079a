import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from locsampler.graph import Graph, from_edges


def make(edges, n, directed=False):
    if not edges:
        return from_edges(np.empty(0, int), np.empty(0, int), n, directed=directed)
    src, dst = zip(*edges)
    return from_edges(np.array(src), np.array(dst), n, directed=directed)


@pytest.fixture
def path3():
    return make([(0, 1), (1, 2)], 3)


@pytest.fixture
def triangle():
    return make([(0, 1), (1, 2), (0, 2)], 3)


@pytest.fixture
def chorded4():
    return make([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4)


@pytest.fixture
def two_triangles():
    return make([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], 6)


@st.composite
def small_graphs(draw, max_nodes=64):
    n = draw(st.integers(1, max_nodes))
    p = draw(st.floats(0.0, 1.0))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_graph(n, p, seed)


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) < p, 1)
    src, dst = np.nonzero(a)
    return from_edges(src, dst, n)


# -------------------------------------------------------- brute-force oracles

def dense(g: Graph) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes), dtype=bool)
    for v in range(g.num_nodes):
        a[v, g.neighbors(v)] = True
    return a


def oracle_induce(a: np.ndarray, nodes) -> np.ndarray:
    nodes = sorted(nodes)
    k = len(nodes)
    out = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(k):
            out[i, j] = a[nodes[i], nodes[j]]
    return out


def oracle_triads(a: np.ndarray) -> int:
    n = len(a)
    return sum(1 for i, j, k in itertools.combinations(range(n), 3) if a[i, j] and a[j, k] and a[i, k])


def oracle_cc(a: np.ndarray) -> float:
    n = len(a)
    if n == 0:
        return 0.0
    total = 0.0
    for v in range(n):
        nb = [u for u in range(n) if a[v, u] and u != v]
        d = len(nb)
        if d < 2:
            continue
        links = sum(1 for x, y in itertools.combinations(nb, 2) if a[x, y])
        total += 2.0 * links / (d * (d - 1))
    return total / n


def oracle_lru(trace, capacity):
    """Miss count of a fully associative LRU of ``capacity`` entries."""
    stack, misses = [], 0
    for x in trace:
        if x in stack:
            stack.remove(x)
        else:
            misses += 1
            if len(stack) == capacity:
                stack.pop(0)
        stack.append(x)
    return misses
