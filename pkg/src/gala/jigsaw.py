"""Louvain communities, subgraph exchange between graphs, and consistency loss."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError
from .graph import Graph, adjacency_matrix

MIN_GAIN = 1e-9


@dataclass(frozen=True)
class Partition:
    community_of: tuple

    def __post_init__(self):
        labels = tuple(int(c) for c in self.community_of)
        if labels and set(labels) != set(range(max(labels) + 1)):
            raise ContractError("community ids must be contiguous from 0")
        object.__setattr__(self, "community_of", labels)

    @property
    def num_communities(self) -> int:
        return max(self.community_of) + 1 if self.community_of else 0

    def members(self, c: int) -> list:
        return [i for i, k in enumerate(self.community_of) if k == c]

    def sizes(self) -> list:
        return np.bincount(self.community_of, minlength=self.num_communities).tolist()

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        """Relabel arbitrary ids contiguously in order of first appearance."""
        remap: dict = {}
        return cls(tuple(remap.setdefault(c, len(remap)) for c in labels))


def modularity(g: Graph, p: Partition) -> float:
    m = g.num_edges
    if m == 0:
        return 0.0
    comm = np.asarray(p.community_of)
    deg = g.degrees()
    k = p.num_communities
    internal = np.zeros(k)
    for i, j in g.edges:
        if comm[i] == comm[j]:
            internal[comm[i]] += 1
    deg_c = np.bincount(comm, weights=deg, minlength=k)
    return float(np.sum(internal / m - (deg_c / (2.0 * m)) ** 2))


def _local_moving(W: np.ndarray, labels: np.ndarray, order: np.ndarray) -> bool:
    """Greedy node moves on weighted graph ``W`` (diagonal = internal weight).
    Mutates ``labels``; returns whether anything moved."""
    n = W.shape[0]
    k = W.sum(1)
    two_m = W.sum()
    m = two_m / 2.0
    tot = np.bincount(labels, weights=k, minlength=n).astype(float)
    size = np.bincount(labels, minlength=n)
    moved_any = False
    while True:
        moved = False
        for i in order:
            old = labels[i]
            tot[old] -= k[i]
            size[old] -= 1
            nbrs = np.flatnonzero(W[i])
            nbrs = nbrs[nbrs != i]
            k_in: dict = {}
            for j in nbrs:
                k_in[labels[j]] = k_in.get(labels[j], 0.0) + W[i, j]

            def gain(c):
                return k_in.get(c, 0.0) / m - tot[c] * k[i] / (2.0 * m * m)

            best, best_gain = old, gain(old)
            for c in sorted(k_in):
                gc = gain(c)
                if gc > best_gain + MIN_GAIN:
                    best, best_gain = c, gc
            # leaving for an empty community scores 0
            if best_gain < -MIN_GAIN:
                best, best_gain = (old if size[old] == 0 else int(np.flatnonzero(size == 0)[0])), 0.0
            labels[i] = best
            tot[best] += k[i]
            size[best] += 1
            if best != old:
                moved = moved_any = True
        if not moved:
            return moved_any


def louvain_communities(g: Graph, seed: int = 0) -> Partition:
    """Two-phase Louvain modularity optimisation (local moving + aggregation)."""
    n = g.node_count
    if n == 0:
        return Partition(())
    if g.num_edges == 0:
        return Partition(tuple(range(n)))
    rng = np.random.default_rng(seed)
    W = adjacency_matrix(g)
    membership = np.arange(n)
    while True:
        size = W.shape[0]
        labels = np.arange(size)
        if not _local_moving(W, labels, rng.permutation(size)):
            break
        _, labels = np.unique(labels, return_inverse=True)
        membership = labels[membership]
        P = np.zeros((size, labels.max() + 1))
        P[np.arange(size), labels] = 1.0
        W = P.T @ W @ P
        if W.shape[0] == 1:
            break
    return Partition.from_labels(membership.tolist())


# --------------------------------------------------------------------------
# splitting and exchange


def induced_subgraph(g: Graph, nodes: Sequence[int]) -> Graph:
    pos = {v: k for k, v in enumerate(nodes)}
    edges = [(pos[i], pos[j]) for i, j in g.edges if i in pos and j in pos]
    x = g.node_attributes[list(nodes)] if nodes else np.zeros((0, g.attribute_dim))
    return Graph(len(nodes), edges, x)


@dataclass(frozen=True)
class GraphSplit:
    complement: Graph
    subgraph: Graph
    cut_edges: tuple          # (complement-side node, subgraph-side node), original ids
    complement_nodes: tuple
    subgraph_nodes: tuple


def _bfs_region(g: Graph, size: int, rng: np.random.Generator) -> list:
    adj: dict = {i: [] for i in range(g.node_count)}
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    start = int(rng.integers(g.node_count))
    seen, queue, out = {start}, deque([start]), []
    while queue and len(out) < size:
        v = queue.popleft()
        out.append(v)
        for w in sorted(adj[v]):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return out


def split_graph(g: Graph, p: Partition, rng: np.random.Generator,
                community: Optional[int] = None) -> GraphSplit:
    """Cut one community out of ``g``.

    The community is drawn uniformly unless given.  A single-community
    partition falls back to a BFS-grown connected region of ``ceil(n/4)`` nodes.
    """
    if p.num_communities < 1:
        raise ContractError("partition has no communities")
    if p.num_communities == 1:
        chosen = set(_bfs_region(g, math.ceil(g.node_count / 4), rng))
    else:
        c = int(rng.integers(p.num_communities)) if community is None else community
        chosen = set(p.members(c))
    sub_nodes = tuple(sorted(chosen))
    comp_nodes = tuple(i for i in range(g.node_count) if i not in chosen)
    cut = []
    for i, j in g.edges:
        if (i in chosen) != (j in chosen):
            cut.append((j, i) if i in chosen else (i, j))
    return GraphSplit(induced_subgraph(g, comp_nodes), induced_subgraph(g, sub_nodes),
                      tuple(cut), comp_nodes, sub_nodes)


def _draw_sigma(n_removed: int, n_incoming: int, rng: np.random.Generator) -> np.ndarray:
    if n_incoming >= n_removed:
        return rng.choice(n_incoming, size=n_removed, replace=False)
    return rng.integers(n_incoming, size=n_removed)


def _assemble(host: GraphSplit, incoming: GraphSplit, sigma: np.ndarray) -> Graph:
    a = host.complement.node_count
    comp_pos = {v: k for k, v in enumerate(host.complement_nodes)}
    sub_pos = {v: k for k, v in enumerate(host.subgraph_nodes)}
    edges = list(host.complement.edges)
    edges += [(i + a, j + a) for i, j in incoming.subgraph.edges]
    edges += [(comp_pos[u], a + int(sigma[sub_pos[v]])) for u, v in host.cut_edges]
    x = np.concatenate([host.complement.node_attributes, incoming.subgraph.node_attributes], axis=0)
    return Graph(a + incoming.subgraph.node_count, edges, x)


@dataclass(frozen=True)
class JigsawPair:
    host_confident: Graph
    host_unconfident: Graph
    split_confident: GraphSplit
    split_unconfident: GraphSplit
    sigma_confident: tuple      # removed confident-subgraph node -> incoming node
    sigma_unconfident: tuple
    augmented_confident: Graph
    augmented_unconfident: Graph
    partitions: tuple

    @property
    def outputs(self) -> tuple:
        return self.augmented_confident, self.augmented_unconfident

    def trace(self) -> dict:
        return {
            "community_sizes": [list(p.sizes()) for p in self.partitions],
            "cut_edge_counts": [len(self.split_confident.cut_edges), len(self.split_unconfident.cut_edges)],
            "sigma": [list(self.sigma_confident), list(self.sigma_unconfident)],
        }


def jigsaw_exchange(confident: Graph, unconfident: Graph, rng: np.random.Generator,
                    partitions: Optional[tuple] = None) -> JigsawPair:
    """Swap one community between a confident and an unconfident graph.

    Cut edges of each host are re-attached to the incoming subgraph through a
    random map ``sigma``; attribute rows travel with their nodes.
    """
    if confident.node_count == 0 or unconfident.node_count == 0:
        raise ContractError("jigsaw needs two non-empty graphs")
    if partitions is None:
        partitions = (louvain_communities(confident, int(rng.integers(2**31))),
                      louvain_communities(unconfident, int(rng.integers(2**31))))
    sc = split_graph(confident, partitions[0], rng)
    su = split_graph(unconfident, partitions[1], rng)
    sigma_c = _draw_sigma(sc.subgraph.node_count, su.subgraph.node_count, rng)
    sigma_u = _draw_sigma(su.subgraph.node_count, sc.subgraph.node_count, rng)
    return JigsawPair(
        confident, unconfident, sc, su,
        tuple(int(s) for s in sigma_c), tuple(int(s) for s in sigma_u),
        _assemble(sc, su, sigma_c), _assemble(su, sc, sigma_u), tuple(partitions),
    )


# --------------------------------------------------------------------------
# consistency loss


def kl_divergence(p_aug: torch.Tensor, p_orig: torch.Tensor) -> torch.Tensor:
    """Row-wise ``KL(p_aug || p_orig)`` from probability rows."""
    log_aug = torch.log(p_aug.clamp_min(1e-300))
    log_orig = torch.log(p_orig.clamp_min(1e-300))
    return (p_aug * (log_aug - log_orig)).sum(-1)


def consistency_terms(conf_logits: torch.Tensor, conf_labels, unconf_logits: torch.Tensor,
                      unconf_orig_probs: torch.Tensor) -> tuple:
    """``(ce, kl)`` halves of the consistency loss; empty sides contribute 0.

    ``unconf_orig_probs`` is treated as a fixed teacher (no gradient).
    """
    if conf_logits.shape[0]:
        y = torch.as_tensor(np.asarray(conf_labels), dtype=torch.long)
        ce = F.cross_entropy(conf_logits, y)
    else:
        ce = conf_logits.sum() * 0.0
    if unconf_logits.shape[0]:
        log_aug = F.log_softmax(unconf_logits, dim=-1)
        teacher = unconf_orig_probs.detach().to(log_aug.dtype)
        kl = (log_aug.exp() * (log_aug - torch.log(teacher.clamp_min(1e-300)))).sum(-1).mean()
    else:
        kl = unconf_logits.sum() * 0.0
    return ce, kl


def consistency_loss(model, conf_augmented: Sequence[Graph], conf_labels,
                     unconf_augmented: Sequence[Graph], unconf_original: Sequence[Graph]) -> torch.Tensor:
    def logits(gs):
        if len(gs) == 0:
            return torch.zeros((0, model.num_classes), dtype=model.dtype)
        return model.logits(gs)

    with torch.no_grad():
        teacher = F.softmax(logits(unconf_original), dim=-1)
    ce, kl = consistency_terms(logits(conf_augmented), conf_labels, logits(unconf_augmented), teacher)
    return ce + kl
