"""Two-domain stochastic-block-model benchmark with a density shift."""

from __future__ import annotations

import numpy as np

from .config import SyntheticSpec
from .graph import Dataset, Graph, degree_onehot


def _sample_graph(n: int, label: int, intra: float, inter: float, max_degree: int,
                  rng: np.random.Generator) -> Graph:
    if label == 0:
        block = (np.arange(n) >= n // 2).astype(int)
    else:
        block = np.zeros(n, dtype=int)
    same = block[:, None] == block[None, :]
    prob = np.where(same, intra, inter)
    draw = rng.random((n, n)) < prob
    iu, ju = np.nonzero(np.triu(draw, k=1))
    g = Graph(n, list(zip(iu.tolist(), ju.tolist())), np.zeros((n, 0)), label)
    return Graph(n, g.edges, degree_onehot(g, max_degree), label)


def sample_domain(spec: SyntheticSpec, intra: float, inter: float, count: int,
                  rng: np.random.Generator) -> Dataset:
    """``count`` graphs, classes exactly balanced (class 0 gets the odd one)."""
    labels = np.arange(count) % 2
    rng.shuffle(labels)
    graphs = []
    for y in labels:
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        graphs.append(_sample_graph(n, int(y), intra, inter, spec.max_degree, rng))
    return Dataset(tuple(graphs), 2, spec.max_degree + 1)


def generate_synthetic_benchmark(spec: SyntheticSpec = None, seed: int = 0):
    """Return ``(source, target)`` datasets.

    Class 0 is a two-block SBM, class 1 a single Erdos-Renyi block at the
    intra-block probability.  Node attributes are degree one-hot vectors.
    """
    spec = spec or SyntheticSpec()
    src = sample_domain(spec, spec.source_intra, spec.source_inter, spec.graphs_per_domain,
                        np.random.default_rng([seed, 0]))
    tgt = sample_domain(spec, spec.target_intra, spec.target_inter, spec.graphs_per_domain,
                        np.random.default_rng([seed, 1]))
    return src, tgt
