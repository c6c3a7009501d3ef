"""GCN graph classifier with global pooling and an MLP head."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, DegenerateInputError, ModelError, ShapeError
from .graph import Dataset, Graph


@dataclass
class ClassifierConfig:
    num_layers: int = 3
    hidden_dim: int = 64
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    pooling: str = "mean"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class GraphBatch:
    x: torch.Tensor            # (total_nodes, d_f)
    adj: torch.Tensor          # sparse normalized adjacency with self-loops
    graph_index: torch.Tensor  # (total_nodes,) owning graph of each node
    num_graphs: int


def normalized_adjacency(g: Graph) -> tuple:
    """COO entries of D^-1/2 (A + I) D^-1/2 for one graph."""
    n = g.node_count
    deg = g.degrees().astype(np.float64) + 1.0
    if g.edges:
        e = np.asarray(g.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
        cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    else:
        rows = cols = np.arange(n)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return rows, cols, vals


def collate(graphs: Sequence[Graph], dtype=torch.float32) -> GraphBatch:
    rows, cols, vals, xs, owner = [], [], [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        r, c, v = normalized_adjacency(g)
        rows.append(r + offset)
        cols.append(c + offset)
        vals.append(v)
        xs.append(g.node_attributes)
        owner.append(np.full(g.node_count, k, dtype=np.int64))
        offset += g.node_count
    idx = torch.from_numpy(np.stack([np.concatenate(rows), np.concatenate(cols)]))
    adj = torch.sparse_coo_tensor(idx, torch.from_numpy(np.concatenate(vals)).to(dtype), (offset, offset),
                                  check_invariants=False)
    return GraphBatch(
        x=torch.from_numpy(np.concatenate(xs, axis=0)).to(dtype),
        adj=adj.coalesce(),
        graph_index=torch.from_numpy(np.concatenate(owner)),
        num_graphs=len(graphs),
    )


def global_pool(node_embeddings: torch.Tensor, kind: str = "mean",
                graph_index: Optional[torch.Tensor] = None, num_graphs: int = 1) -> torch.Tensor:
    """Mean or sum readout.  Without ``graph_index`` all rows belong to one graph."""
    if node_embeddings.shape[0] == 0:
        raise DegenerateInputError("cannot pool an empty embedding matrix")
    if kind not in ("mean", "sum"):
        raise ContractError(f"unknown pooling kind {kind!r}")
    if graph_index is None:
        return node_embeddings.mean(0) if kind == "mean" else node_embeddings.sum(0)
    out = node_embeddings.new_zeros(num_graphs, node_embeddings.shape[1])
    out = out.index_add(0, graph_index, node_embeddings)
    if kind == "mean":
        counts = torch.bincount(graph_index, minlength=num_graphs).clamp(min=1)
        out = out / counts.unsqueeze(1).to(out.dtype)
    return out


class GCNClassifier(nn.Module):
    def __init__(self, attribute_dim: int, num_classes: int, num_layers: int = 3,
                 hidden_dim: int = 64, pooling: str = "mean", dtype=torch.float32):
        super().__init__()
        if pooling not in ("mean", "sum"):
            raise ContractError(f"unknown pooling kind {pooling!r}")
        self.attribute_dim = attribute_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.pooling = pooling
        widths = [attribute_dim] + [hidden_dim] * num_layers
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1], dtype=dtype) for i in range(num_layers)
        )
        self.head = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim, dtype=dtype),
            nn.ReLU(),
            nn.Linear(hidden_dim, num_classes, dtype=dtype),
        )
        self.config_hash = ""

    @property
    def dtype(self):
        return self.head[0].weight.dtype

    def encode(self, batch: GraphBatch) -> torch.Tensor:
        if batch.x.shape[1] != self.attribute_dim:
            raise ShapeError(f"attribute width {batch.x.shape[1]} != model input {self.attribute_dim}")
        h = batch.x
        for layer in self.layers:
            h = F.relu(layer(torch.sparse.mm(batch.adj, h)))
        return h

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        """Class logits, one row per graph."""
        h = self.encode(batch)
        z = global_pool(h, self.pooling, batch.graph_index, batch.num_graphs)
        return self.head(z)

    def logits(self, graphs: Sequence[Graph]) -> torch.Tensor:
        return self(collate(graphs, self.dtype))


def encode_nodes(g: Graph, m: GCNClassifier) -> torch.Tensor:
    return m.encode(collate([g], m.dtype))


def stable_softmax(logits: torch.Tensor) -> torch.Tensor:
    z = logits - logits.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def classify(g: Graph, m: GCNClassifier) -> np.ndarray:
    """Label distribution for one graph."""
    with torch.no_grad():
        return stable_softmax(m.logits([g]))[0].double().numpy()


def predict_proba(graphs: Sequence[Graph], m: GCNClassifier, batch_size: int = 256) -> np.ndarray:
    if not graphs:
        return np.zeros((0, m.num_classes))
    out = []
    with torch.no_grad():
        for s in range(0, len(graphs), batch_size):
            out.append(stable_softmax(m.logits(graphs[s: s + batch_size])).double().numpy())
    return np.concatenate(out)


def accuracy(graphs: Sequence[Graph], labels: Sequence[int], m: GCNClassifier) -> float:
    if len(graphs) == 0:
        return float("nan")
    pred = predict_proba(graphs, m).argmax(1)
    return float(np.mean(pred == np.asarray(labels)))


def batch_loss(graphs: Sequence[Graph], labels, m: GCNClassifier) -> torch.Tensor:
    """Mean cross-entropy of ``graphs`` against integer ``labels``."""
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    return F.cross_entropy(m.logits(graphs), y)


def gradients(batch, m: nn.Module, loss_fn=None) -> dict:
    """Reverse-mode gradients of the batch loss for every named parameter.

    ``batch`` is a ``(graphs, labels)`` pair for the default cross-entropy
    loss; a custom ``loss_fn(batch, m)`` may be supplied.  Parameters that do
    not influence the loss get zero gradients.
    """
    if loss_fn is None:
        graphs, labels = batch
        if len(graphs) == 0:
            raise ContractError("gradient batch is empty")
        loss = batch_loss(graphs, labels, m)
    else:
        loss = loss_fn(batch, m)
    names, params = zip(*m.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads)}


def pretrain_source(d: Dataset, cfg: Optional[ClassifierConfig] = None, seed: int = 0,
                    dtype=torch.float32):
    """Fit a classifier on labelled source graphs.

    Returns ``(model, loss_trace)`` where the trace holds the mean training
    cross-entropy of every epoch.
    """
    cfg = cfg or ClassifierConfig()
    if any(g.label is None for g in d.graphs):
        raise ContractError("every source graph must be labelled")
    if len(d) == 0:
        raise ContractError("source dataset is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = GCNClassifier(d.attribute_dim, d.num_classes, cfg.num_layers, cfg.hidden_dim,
                          cfg.pooling, dtype=dtype)
    model.config_hash = cfg.digest()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    graphs, labels = list(d.graphs), d.labels()
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(graphs))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            loss = batch_loss([graphs[i] for i in idx], labels[idx], model)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        trace.append(total / len(order))
    return model, trace


def clone_model(m: nn.Module) -> nn.Module:
    return copy.deepcopy(m)


# --------------------------------------------------------------------------
# checkpoints


def state_to_json(module: nn.Module) -> dict:
    return {
        name: {"shape": list(t.shape), "data": t.detach().double().reshape(-1).tolist()}
        for name, t in module.state_dict().items()
    }


def load_state_from_json(module: nn.Module, params: dict) -> None:
    state = module.state_dict()
    if set(params) != set(state):
        raise ModelError(f"checkpoint parameters {sorted(set(params) ^ set(state))} do not match the model")
    new = {}
    for name, ref in state.items():
        entry = params[name]
        if list(entry["shape"]) != list(ref.shape):
            raise ModelError(f"shape mismatch for {name}: {entry['shape']} vs {list(ref.shape)}")
        data = torch.tensor(entry["data"], dtype=torch.float64).reshape(ref.shape)
        new[name] = data.to(ref.dtype)
    module.load_state_dict(new)


def save_classifier(m: GCNClassifier, path) -> None:
    blob = {
        "kind": "gcn-classifier",
        "attribute_dim": m.attribute_dim,
        "num_classes": m.num_classes,
        "num_layers": len(m.layers),
        "hidden_dim": m.hidden_dim,
        "pooling": m.pooling,
        "config_hash": m.config_hash,
        "params": state_to_json(m),
    }
    Path(path).write_text(json.dumps(blob))


def load_classifier(path, dtype=torch.float32, expect: Optional[dict] = None) -> GCNClassifier:
    """Load a classifier checkpoint; ``expect`` pins architecture fields."""
    try:
        blob = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"unreadable checkpoint {path}: {exc}") from exc
    if blob.get("kind") != "gcn-classifier":
        raise ModelError(f"{path} is not a classifier checkpoint")
    for key, value in (expect or {}).items():
        if blob.get(key) != value:
            raise ModelError(f"checkpoint {key}={blob.get(key)} but expected {value}")
    m = GCNClassifier(blob["attribute_dim"], blob["num_classes"], blob["num_layers"],
                      blob["hidden_dim"], blob["pooling"], dtype=dtype)
    load_state_from_json(m, blob["params"])
    m.config_hash = blob.get("config_hash", "")
    return m
