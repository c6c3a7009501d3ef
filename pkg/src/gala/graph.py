"""Graph data model, TUDataset ingestion, density and domain splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, ContractError, DegenerateInputError, FormatError, IntegrityError

DEFAULT_MAX_DEGREE = 10


def _canonical_edges(edges: Iterable[Sequence[int]], node_count: int) -> tuple:
    out = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise ContractError(f"edge ({i}, {j}) has an endpoint outside [0, {node_count})")
        if i == j:
            raise ContractError(f"self-loop ({i}, {i}) is not allowed")
        out.add((i, j) if i < j else (j, i))
    return tuple(sorted(out))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    Edges are stored once per unordered pair as ``(i, j)`` with ``i < j``.
    A zero-node graph is tolerated so that graph splitting can return an
    empty complement; datasets never contain one.
    """

    node_count: int
    edges: tuple
    node_attributes: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        n = int(self.node_count)
        if n < 0:
            raise ContractError("node_count must be non-negative")
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", _canonical_edges(self.edges, n))
        x = np.array(self.node_attributes, dtype=np.float64)
        if x.ndim == 1 and n == 0:
            x = x.reshape(0, 0)
        if x.ndim != 2 or x.shape[0] != n:
            raise ContractError(f"node_attributes must have {n} rows, got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "node_attributes", x)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def attribute_dim(self) -> int:
        return self.node_attributes.shape[1]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def with_label(self, label: Optional[int]) -> "Graph":
        return Graph(self.node_count, self.edges, self.node_attributes, label)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.node_count, edges, self.node_attributes, self.label)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.edges == other.edges
            and self.label == other.label
            and self.node_attributes.shape == other.node_attributes.shape
            and np.array_equal(self.node_attributes, other.node_attributes)
        )

    __hash__ = None

    def to_json(self) -> dict:
        """Canonical export: ``{"n", "edges", "x", "y"}``."""
        return {
            "n": self.node_count,
            "edges": [[i, j] for i, j in self.edges],
            "x": self.node_attributes.tolist(),
            "y": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Graph":
        n = int(obj["n"])
        x = np.asarray(obj["x"], dtype=np.float64).reshape(n, -1) if n else np.zeros((0, 0))
        return cls(n, [tuple(e) for e in obj["edges"]], x, obj.get("y"))


@dataclass(frozen=True)
class Dataset:
    graphs: tuple
    num_classes: int
    attribute_dim: int

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if self.num_classes < 1:
            raise ContractError("num_classes must be positive")
        for g in self.graphs:
            if g.attribute_dim != self.attribute_dim:
                raise ContractError(
                    f"graph attribute width {g.attribute_dim} != dataset width {self.attribute_dim}"
                )
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise ContractError(f"label {g.label} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.graphs[i] for i in indices), self.num_classes, self.attribute_dim)

    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.graphs], dtype=np.int64)

    def unlabeled(self) -> "Dataset":
        return Dataset(tuple(g.with_label(None) for g in self.graphs), self.num_classes, self.attribute_dim)

    def densities(self) -> np.ndarray:
        return np.array([graph_density(g) for g in self.graphs])


@dataclass(frozen=True)
class DomainSplit:
    """Density-ordered partition of a dataset into ``k`` sub-datasets.

    ``indices[i]`` holds the parent-dataset indices of sub-dataset ``i`` and
    ``train_test[i]`` is a ``(train, test)`` pair of positions local to it.
    """

    sub_datasets: tuple
    density_boundaries: tuple
    indices: tuple
    train_test: tuple

    def train(self, i: int) -> Dataset:
        return self.sub_datasets[i].subset(self.train_test[i][0])

    def test(self, i: int) -> Dataset:
        return self.sub_datasets[i].subset(self.train_test[i][1])


# --------------------------------------------------------------------------
# TUDataset layout


def _find_prefix(directory: Path) -> str:
    hits = sorted(directory.glob("*_A.txt"))
    if not hits:
        raise FormatError(f"no *_A.txt edge file in {directory}")
    if len(hits) > 1:
        raise FormatError(f"ambiguous dataset prefix in {directory}: {[h.name for h in hits]}")
    return hits[0].name[: -len("_A.txt")]


def _read_rows(path: Path, dtype) -> np.ndarray:
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise FormatError(f"missing file {path.name}") from exc
    rows = [ln for ln in text.splitlines() if ln.strip()]
    try:
        data = [[dtype(tok) for tok in ln.replace(" ", "").split(",")] for ln in rows]
    except ValueError as exc:
        raise FormatError(f"malformed value in {path.name}: {exc}") from exc
    if not data:
        return np.zeros((0, 0), dtype=dtype)
    widths = {len(r) for r in data}
    if len(widths) != 1:
        raise FormatError(f"ragged rows in {path.name}")
    return np.asarray(data, dtype=dtype)


def parse_tu_dataset(directory_path) -> Dataset:
    """Read a dataset in the TUDataset text layout.

    Node labels are one-hot encoded and appended after any continuous
    attributes.  Graph labels are remapped to a contiguous ``[0, C)`` in
    sorted order.  Self-loops in the edge file are dropped.
    """
    directory = Path(directory_path)
    if not directory.is_dir():
        raise FormatError(f"{directory} is not a directory")
    prefix = _find_prefix(directory)
    f = lambda name: directory / f"{prefix}_{name}.txt"  # noqa: E731

    indicator = _read_rows(f("graph_indicator"), int).ravel()
    graph_labels_raw = _read_rows(f("graph_labels"), int).ravel()
    edges = _read_rows(f("A"), int)
    has_node_labels = f("node_labels").exists()
    has_node_attrs = f("node_attributes").exists()
    if not (has_node_labels or has_node_attrs):
        raise FormatError("need node_labels or node_attributes file")

    num_nodes = len(indicator)
    num_graphs = len(graph_labels_raw)
    # graph ids must appear as contiguous runs 1, 2, ..., N
    if num_nodes == 0:
        raise IntegrityError("graph indicator is empty")
    if indicator[0] != 1 or np.any(np.diff(indicator) < 0) or np.any(np.diff(indicator) > 1):
        raise IntegrityError("graph indicator is not contiguous from 1")
    if indicator[-1] != num_graphs:
        raise IntegrityError(f"indicator names {indicator[-1]} graphs but {num_graphs} labels given")

    feats = []
    if has_node_attrs:
        attrs = _read_rows(f("node_attributes"), float)
        if attrs.shape[0] != num_nodes:
            raise IntegrityError("node_attributes row count differs from graph indicator")
        feats.append(attrs)
    if has_node_labels:
        nl = _read_rows(f("node_labels"), int)
        if nl.shape[0] != num_nodes:
            raise IntegrityError("node_labels row count differs from graph indicator")
        nl = nl[:, 0]
        values = np.unique(nl)
        onehot = np.zeros((num_nodes, len(values)))
        onehot[np.arange(num_nodes), np.searchsorted(values, nl)] = 1.0
        feats.append(onehot)
    x_all = np.concatenate(feats, axis=1)

    starts = np.concatenate([[0], np.flatnonzero(np.diff(indicator)) + 1])
    ends = np.append(starts[1:], num_nodes)
    edge_lists = [[] for _ in range(num_graphs)]
    if edges.size:
        if edges.shape[1] != 2:
            raise FormatError("edge rows must hold two node ids")
        for u, v in edges:
            u0, v0 = u - 1, v - 1
            if not (0 <= u0 < num_nodes and 0 <= v0 < num_nodes):
                raise IntegrityError(f"edge ({u}, {v}) references an unknown node")
            gu, gv = indicator[u0], indicator[v0]
            if gu != gv:
                raise IntegrityError(f"edge ({u}, {v}) crosses graphs {gu} and {gv}")
            if u0 == v0:
                continue
            base = starts[gu - 1]
            edge_lists[gu - 1].append((u0 - base, v0 - base))

    label_values = np.unique(graph_labels_raw)
    labels = np.searchsorted(label_values, graph_labels_raw)
    graphs = [
        Graph(int(ends[g] - starts[g]), edge_lists[g], x_all[starts[g]: ends[g]], int(labels[g]))
        for g in range(num_graphs)
    ]
    return Dataset(tuple(graphs), len(label_values), x_all.shape[1])


def write_tu_dataset(dataset: Dataset, directory_path, name: str = "DS") -> Path:
    """Write ``dataset`` in TUDataset layout (attributes only, no node labels)."""
    directory = Path(directory_path)
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, lab_lines, attr_lines = [], [], [], []
    offset = 0
    for gi, g in enumerate(dataset.graphs, start=1):
        if g.label is None:
            raise ContractError("TUDataset layout requires every graph to carry a label")
        for i, j in g.edges:
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_lines.extend([str(gi)] * g.node_count)
        lab_lines.append(str(g.label))
        attr_lines.extend(", ".join(repr(float(v)) for v in row) for row in g.node_attributes)
        offset += g.node_count
    for suffix, lines in (("A", a_lines), ("graph_indicator", ind_lines),
                          ("graph_labels", lab_lines), ("node_attributes", attr_lines)):
        (directory / f"{name}_{suffix}.txt").write_text("\n".join(lines) + "\n")
    return directory


def write_graphs_jsonl(graphs: Iterable[Graph], path, extra: Optional[Sequence[dict]] = None) -> None:
    """Dump graphs as canonical JSON objects, one per line."""
    lines = []
    for k, g in enumerate(graphs):
        obj = g.to_json()
        if extra is not None:
            obj.update(extra[k])
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_graphs_jsonl(path) -> list:
    return [Graph.from_json(json.loads(ln)) for ln in Path(path).read_text().splitlines() if ln.strip()]


# --------------------------------------------------------------------------
# structural quantities


def graph_density(g: Graph) -> float:
    n = g.node_count
    if n < 2:
        raise DegenerateInputError("density needs at least two nodes")
    return 2.0 * g.num_edges / (n * (n - 1))


def adjacency_matrix(g: Graph) -> np.ndarray:
    a = np.zeros((g.node_count, g.node_count))
    if g.edges:
        idx = np.asarray(g.edges)
        a[idx[:, 0], idx[:, 1]] = 1.0
        a[idx[:, 1], idx[:, 0]] = 1.0
    return a


def degree_onehot(g: Graph, max_degree: int = DEFAULT_MAX_DEGREE) -> np.ndarray:
    deg = np.minimum(g.degrees(), max_degree)
    out = np.zeros((g.node_count, max_degree + 1))
    out[np.arange(g.node_count), deg] = 1.0
    return out


def graph_from_adjacency(adj: np.ndarray, node_attributes: np.ndarray, label=None) -> Graph:
    """Build a graph from the strict upper triangle of a binary matrix."""
    iu, ju = np.nonzero(np.triu(adj, k=1))
    return Graph(adj.shape[0], list(zip(iu.tolist(), ju.tolist())), node_attributes, label)


# --------------------------------------------------------------------------
# domain splits


def stratified_split(labels: np.ndarray, train_ratio: float, seed: int) -> tuple:
    """Seeded per-class shuffle-and-cut; unlabeled entries (-1) form their own stratum."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        n_train = int(math.floor(train_ratio * len(members) + 0.5))
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return tuple(sorted(train)), tuple(sorted(test))


def split_by_density(d: Dataset, k: int, seed: int = 0, train_ratio: float = 0.8) -> DomainSplit:
    if k < 2:
        raise ArgumentError("k must be at least 2")
    if len(d) < k:
        raise ArgumentError(f"dataset of {len(d)} graphs cannot form {k} sub-datasets")
    dens = d.densities()
    order = np.argsort(dens, kind="stable")
    q, r = divmod(len(d), k)
    sizes = [q] * (k - r) + [q + 1] * r
    cuts = np.cumsum([0] + sizes)
    subs, idx, tt, bounds = [], [], [], []
    for i in range(k):
        members = tuple(int(m) for m in order[cuts[i]: cuts[i + 1]])
        sub = d.subset(members)
        subs.append(sub)
        idx.append(members)
        tt.append(stratified_split(sub.labels(), train_ratio, seed + i))
        if i > 0:
            bounds.append(float(dens[order[cuts[i]]]))
    return DomainSplit(tuple(subs), tuple(bounds), tuple(idx), tuple(tt))
