"""Random-walk message-passing score network and denoising score matching."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .classifier import load_state_from_json, state_to_json
from .errors import ArgumentError, ModelError
from .graph import Dataset, adjacency_matrix
from .sde import NoiseSchedule, symmetric_noise


@dataclass
class DiffusionConfig:
    num_layers: int = 4
    walk_length: int = 4
    hidden_dim: int = 32
    max_degree: int = 10
    attention: bool = False
    heads: int = 8
    lr: float = 2e-5
    batch_size: int = 128
    ema: float = 0.9999
    epochs: int = 200
    draws_per_graph: int = 1
    eps_t: float = 1e-3
    beta_min: float = 0.1
    beta_max: float = 20.0
    dt: float = 0.001
    steps: int = 0  # 0: derive the step count from dt
    t_recon: float = 0.1

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.beta_min, self.beta_max)

    @property
    def step_override(self) -> Optional[int]:
        return self.steps or None


def random_walk_features(A_t, r: int) -> torch.Tensor:
    """Stack ``[R, R^2, ..., R^r]`` along a trailing axis.

    ``R = Adot @ diag(1/deg)`` with ``Adot = 1[A_t > 1/2]``; columns of
    isolated nodes are zero.  Works on ``(n, n)`` or ``(B, n, n)`` input.
    """
    a = torch.as_tensor(A_t)
    if not a.is_floating_point():
        a = a.double()
    adot = (a > 0.5).to(a.dtype)
    deg = adot.sum(-2, keepdim=True)
    inv = torch.where(deg > 0, 1.0 / deg.clamp(min=1.0), torch.zeros_like(deg))
    R = adot * inv
    powers, P = [], R
    for _ in range(r):
        powers.append(P)
        P = P @ R
    return torch.stack(powers, dim=-1)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
    ang = 1000.0 * t.reshape(-1, 1) * freqs
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def _mlp(sizes, dtype, act=nn.SiLU):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1], dtype=dtype))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


class ScoreNetwork(nn.Module):
    """Estimate of the adjacency score ``grad log p_t(A_t)``.

    The edge encoder sees the random-walk stack plus two continuous channels:
    the noisy entry ``A_t`` and the noise it implies if the discretised graph
    were the clean one, ``(A_t - m(t) Adot) / sqrt(v(t))``.  The output head
    predicts noise, and the score is ``-noise_hat / sqrt(v(t))``.
    """

    def __init__(self, schedule: NoiseSchedule = NoiseSchedule(), num_layers: int = 4,
                 walk_length: int = 4, hidden_dim: int = 32, max_degree: int = 10,
                 attention: bool = False, heads: int = 8, dtype=torch.float32):
        super().__init__()
        self.schedule = schedule
        self.num_layers = num_layers
        self.walk_length = walk_length
        self.hidden_dim = hidden_dim
        self.max_degree = max_degree
        self.attention = attention
        self.heads = heads
        F = hidden_dim
        self.edge_encoder = _mlp([walk_length + 2, F, F], dtype)
        self.node_in = nn.Linear(F + max_degree + 1, F, dtype=dtype)
        self.node_com = nn.ModuleList(_mlp([2 * F, F, F], dtype) for _ in range(num_layers))
        self.edge_com = nn.ModuleList(_mlp([3 * F, F, F], dtype) for _ in range(num_layers))
        if attention:
            if F % heads:
                raise ArgumentError("hidden_dim must be divisible by heads")
            self.att_logits = nn.ModuleList(nn.Linear(F, heads, dtype=dtype) for _ in range(num_layers))
            self.att_values = nn.ModuleList(nn.Linear(F, F, dtype=dtype) for _ in range(num_layers))
        self.time_proj = nn.Linear(F, F, dtype=dtype)
        self.head = _mlp([F, F, F, 1], dtype)

    @property
    def dtype(self):
        return self.time_proj.weight.dtype

    def encode_edges(self, adj: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        t3 = t.reshape(-1, 1, 1)
        adot = (adj > 0.5).to(adj.dtype)
        implied = (adj - self.schedule.mean_scale(t3) * adot) / torch.sqrt(self.schedule.variance(t3))
        walks = random_walk_features(adj, self.walk_length)
        return self.edge_encoder(torch.cat([adj.unsqueeze(-1), implied.unsqueeze(-1), walks], dim=-1))

    def _aggregate(self, k: int, f: torch.Tensor, e: torch.Tensor, adot: torch.Tensor) -> torch.Tensor:
        if not self.attention:
            return adot @ f
        B, n, F = f.shape
        h = self.heads
        logits = self.att_logits[k](e)                               # (B, n, n, h)
        mask = (adot > 0).unsqueeze(-1)
        logits = logits.masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(logits, dim=2).nan_to_num(0.0)         # isolated rows -> 0
        v = self.att_values[k](f).reshape(B, n, h, F // h)
        return torch.einsum("bijh,bjhd->bihd", alpha, v).reshape(B, n, F)

    def forward(self, adj: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        adj = adj.to(self.dtype)
        t = t.to(self.dtype).reshape(-1)
        B, n, _ = adj.shape
        adot = (adj > 0.5).to(adj.dtype)
        adot = adot - torch.diag_embed(torch.diagonal(adot, dim1=-2, dim2=-1))
        e = self.encode_edges(adj, t)
        deg = adot.sum(-1).long().clamp(max=self.max_degree)
        d = torch.nn.functional.one_hot(deg, self.max_degree + 1).to(adj.dtype)
        f = self.node_in(torch.cat([torch.diagonal(e, dim1=1, dim2=2).transpose(1, 2), d], dim=-1))
        for k in range(self.num_layers):
            agg = self._aggregate(k, f, e, adot)
            f = f + self.node_com[k](torch.cat([f, agg], dim=-1))
            fi, fj = f.unsqueeze(2).expand(B, n, n, -1), f.unsqueeze(1).expand(B, n, n, -1)
            e = e + self.edge_com[k](torch.cat([e, fi + fj, fi * fj], dim=-1))
        temb = self.time_proj(sinusoidal_embedding(t, self.hidden_dim)).reshape(B, 1, 1, -1)
        noise_hat = self.head(e + temb).squeeze(-1)
        noise_hat = 0.5 * (noise_hat + noise_hat.transpose(1, 2))
        noise_hat = noise_hat - torch.diag_embed(torch.diagonal(noise_hat, dim1=1, dim2=2))
        return -noise_hat / torch.sqrt(self.schedule.variance(t)).reshape(-1, 1, 1)


def build_score_network(cfg: DiffusionConfig, dtype=torch.float32) -> ScoreNetwork:
    return ScoreNetwork(cfg.schedule, cfg.num_layers, cfg.walk_length, cfg.hidden_dim,
                        cfg.max_degree, cfg.attention, cfg.heads, dtype=dtype)


def score_forward(A_t, t: float, net: ScoreNetwork) -> np.ndarray:
    adj = torch.tensor(np.asarray(A_t), dtype=net.dtype).unsqueeze(0)
    with torch.no_grad():
        return net(adj, torch.tensor([t], dtype=net.dtype))[0].double().numpy()


# --------------------------------------------------------------------------
# training


def _offdiag_mean(x: torch.Tensor) -> torch.Tensor:
    n = x.shape[-1]
    if n < 2:
        return x.sum(dim=(-1, -2)) * 0.0
    return x.sum(dim=(-1, -2)) / (n * (n - 1))


def score_matching_loss(score_fn, a0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor,
                        schedule: NoiseSchedule) -> torch.Tensor:
    """Weighted loss ``mean_b v(t_b) * mean_offdiag (rho - target)^2`` at fixed draws.

    ``a0`` and ``noise`` are ``(B, n, n)``; ``noise`` must be symmetric with
    zero diagonal.  With the weighting ``v(t)`` the zero score scores exactly
    the mean squared noise.
    """
    t3 = t.reshape(-1, 1, 1)
    var = schedule.variance(t3)
    a_t = schedule.mean_scale(t3) * a0 + torch.sqrt(var) * noise
    target = -noise / torch.sqrt(var)
    rho = score_fn(a_t, t)
    return (var.reshape(-1) * _offdiag_mean((rho - target) ** 2)).mean()


def sample_training_draws(a0: np.ndarray, rng: np.random.Generator, eps_t: float, draws: int = 1):
    """Replicate a ``(B, n, n)`` stack ``draws`` times with fresh ``t`` and noise."""
    a0 = np.repeat(a0, draws, axis=0)
    B, n, _ = a0.shape
    t = rng.uniform(eps_t, 1.0, size=B)
    noise = np.stack([symmetric_noise(n, rng) for _ in range(B)])
    return a0, t, noise


class EMA:
    """Parameter moving average with the usual ``(1+k)/(10+k)`` warm-up cap."""

    def __init__(self, module: nn.Module, momentum: float):
        self.momentum = momentum
        self.shadow = copy.deepcopy(module)
        self.updates = 0

    @torch.no_grad()
    def update(self, module: nn.Module) -> None:
        self.updates += 1
        decay = min(self.momentum, (1 + self.updates) / (10 + self.updates))
        for s, p in zip(self.shadow.parameters(), module.parameters()):
            s.mul_(decay).add_(p, alpha=1 - decay)


def _size_batches(graphs, batch_size: int, rng: np.random.Generator) -> list:
    by_size: dict = {}
    for i, g in enumerate(graphs):
        by_size.setdefault(g.node_count, []).append(i)
    batches = []
    for members in by_size.values():
        members = list(rng.permutation(members))
        batches.extend(members[s: s + batch_size] for s in range(0, len(members), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def train_score_network(source: Dataset, schedule: Optional[NoiseSchedule] = None,
                        cfg: Optional[DiffusionConfig] = None, seed: int = 0, dtype=torch.float32,
                        net: Optional[ScoreNetwork] = None):
    """Denoising score matching on source adjacency matrices.

    Returns ``(ema_network, loss_trace)``; the trace holds the mean weighted
    loss of every epoch, measured on the raw (non-averaged) parameters.
    """
    cfg = cfg or DiffusionConfig()
    if len(source) == 0:
        raise ArgumentError("cannot train a score network on an empty dataset")
    schedule = schedule or cfg.schedule
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if net is None:
        net = ScoreNetwork(schedule, cfg.num_layers, cfg.walk_length, cfg.hidden_dim,
                           cfg.max_degree, cfg.attention, cfg.heads, dtype=dtype)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    ema = EMA(net, cfg.ema)
    adjs = [adjacency_matrix(g) for g in source.graphs]
    trace = []
    for _ in range(cfg.epochs):
        total, count = 0.0, 0
        for batch in _size_batches(source.graphs, cfg.batch_size, rng):
            a0, t, noise = sample_training_draws(np.stack([adjs[i] for i in batch]), rng,
                                                 cfg.eps_t, cfg.draws_per_graph)
            loss = score_matching_loss(net, torch.as_tensor(a0, dtype=net.dtype),
                                       torch.as_tensor(t, dtype=net.dtype),
                                       torch.as_tensor(noise, dtype=net.dtype), schedule)
            opt.zero_grad()
            loss.backward()
            opt.step()
            ema.update(net)
            total += loss.item() * len(t)
            count += len(t)
        trace.append(total / count)
    return ema.shadow, trace


def evaluate_score_loss(score_fn, graphs, schedule: NoiseSchedule, seed: int = 0,
                        draws: int = 16, eps_t: float = 1e-3, dtype=torch.float64) -> float:
    """Weighted score-matching loss on a fixed, seeded evaluation batch."""
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    by_size: dict = {}
    for g in graphs:
        by_size.setdefault(g.node_count, []).append(adjacency_matrix(g))
    for n in sorted(by_size):
        a0, t, noise = sample_training_draws(np.stack(by_size[n]), rng, eps_t, draws)
        with torch.no_grad():
            loss = score_matching_loss(score_fn, torch.as_tensor(a0, dtype=dtype),
                                       torch.as_tensor(t, dtype=dtype),
                                       torch.as_tensor(noise, dtype=dtype), schedule)
        total += loss.item() * len(t)
        count += len(t)
    return total / count


def zero_score(adj: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    return torch.zeros_like(adj)


# --------------------------------------------------------------------------
# checkpoints

_ARCH_FIELDS = ("num_layers", "walk_length", "hidden_dim", "max_degree", "attention", "heads")


def save_score_network(net: ScoreNetwork, path, ema: bool = True) -> None:
    blob = {
        "kind": "score-network",
        **{k: getattr(net, k) for k in _ARCH_FIELDS},
        "beta_min": net.schedule.beta_min,
        "beta_max": net.schedule.beta_max,
        "ema": ema,
        "params": state_to_json(net),
    }
    Path(path).write_text(json.dumps(blob))


def load_score_network(path, dtype=torch.float32, expect: Optional[dict] = None) -> ScoreNetwork:
    try:
        blob = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"unreadable checkpoint {path}: {exc}") from exc
    if blob.get("kind") != "score-network":
        raise ModelError(f"{path} is not a score-network checkpoint")
    for key, value in (expect or {}).items():
        if blob.get(key) != value:
            raise ModelError(f"checkpoint {key}={blob.get(key)} but expected {value}")
    net = ScoreNetwork(NoiseSchedule(blob["beta_min"], blob["beta_max"]),
                       **{k: blob[k] for k in _ARCH_FIELDS}, dtype=dtype)
    load_state_from_json(net, blob["params"])
    return net
