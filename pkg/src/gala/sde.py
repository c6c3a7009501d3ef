"""Variance-preserving SDE over adjacency matrices.

Forward marginal: ``A(t) ~ N(m(t) A0, v(t))`` entrywise with
``m(t) = exp(-B(t)/2)``, ``v(t) = 1 - exp(-B(t))`` and ``B(t) = int_0^t beta``.
Noise is always symmetric with a zero diagonal: the strict upper triangle is
drawn i.i.d. standard normal and mirrored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .errors import ContractError, ModelError
from .graph import Graph, adjacency_matrix, graph_from_adjacency

ScoreFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > self.beta_min):
            raise ContractError("need 0 < beta_min < beta_max")

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def integral(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def mean_scale(self, t):
        if isinstance(t, torch.Tensor):
            return torch.exp(-0.5 * self.integral(t))
        return np.exp(-0.5 * self.integral(t))

    def variance(self, t):
        if isinstance(t, torch.Tensor):
            return -torch.expm1(-self.integral(t))
        return -np.expm1(-self.integral(t))


def _check_symmetric(a: np.ndarray, what: str = "matrix") -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"{what} must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError(f"{what} must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ContractError(f"{what} must have a zero diagonal")


@dataclass(frozen=True, eq=False)
class DiffusionState:
    adj: np.ndarray
    t: float

    def __post_init__(self):
        a = np.array(self.adj, dtype=np.float64)
        _check_symmetric(a, "diffusion state")
        a.setflags(write=False)
        object.__setattr__(self, "adj", a)
        if not 0.0 <= self.t <= 1.0 + 1e-12:
            raise ContractError(f"time {self.t} outside [0, 1]")


def symmetric_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    z = np.triu(rng.standard_normal((n, n)), k=1)
    return z + z.T


def forward_perturb(A0: np.ndarray, t: float, rng: np.random.Generator,
                    schedule: NoiseSchedule = NoiseSchedule()) -> DiffusionState:
    A0 = np.asarray(A0, dtype=np.float64)
    _check_symmetric(A0, "A0")
    if not 0.0 < t <= 1.0:
        raise ContractError(f"t={t} must lie in (0, 1]")
    eps = symmetric_noise(A0.shape[0], rng)
    return DiffusionState(A0 * schedule.mean_scale(t) + eps * math.sqrt(schedule.variance(t)), t)


def analytic_score(A_t, A0, t: float, schedule: NoiseSchedule = NoiseSchedule()):
    """Conditional score ``-(A_t - m(t) A0) / v(t)`` of the Gaussian transition."""
    if t <= 0:
        raise ContractError("the transition variance vanishes at t = 0")
    return -(A_t - A0 * schedule.mean_scale(t)) / schedule.variance(t)


class AnalyticScore:
    """Score of a point-mass data distribution at ``A0``; usable wherever a network is.

    ``A0`` may be a single ``(n, n)`` matrix or a ``(B, n, n)`` stack.
    """

    def __init__(self, A0, schedule: NoiseSchedule = NoiseSchedule()):
        self.A0 = torch.as_tensor(np.asarray(A0), dtype=torch.float64)
        self.schedule = schedule

    def __call__(self, adj: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        t = t.to(adj.dtype).reshape(-1, 1, 1)
        a0 = self.A0.to(adj.dtype)
        return -(adj - a0 * self.schedule.mean_scale(t)) / self.schedule.variance(t)


def _zero_diag_sym(a: torch.Tensor) -> torch.Tensor:
    a = 0.5 * (a + a.transpose(-1, -2))
    return a - torch.diag_embed(torch.diagonal(a, dim1=-2, dim2=-1))


def euler_maruyama_step(adj: torch.Tensor, t: float, dt: float, score: torch.Tensor,
                        noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """One reverse-time step from ``t`` to ``t - dt`` (batched or single)."""
    b = schedule.beta(t)
    nxt = adj + (0.5 * b * adj + b * score) * dt + math.sqrt(b) * math.sqrt(dt) * noise
    return _zero_diag_sym(nxt)


def _eval_score(score_fn: ScoreFn, adj: torch.Tensor, t: float) -> torch.Tensor:
    batched = adj.dim() == 3
    a = adj if batched else adj.unsqueeze(0)
    tt = torch.full((a.shape[0],), float(t), dtype=a.dtype)
    with torch.no_grad():
        s = score_fn(a, tt)
    return s if batched else s[0]


def reverse_step(state: DiffusionState, dt: float, net: ScoreFn, rng: np.random.Generator,
                 schedule: NoiseSchedule = NoiseSchedule()) -> DiffusionState:
    if dt <= 0:
        raise ContractError("dt must be positive")
    if state.t < dt - 1e-12:
        raise ContractError(f"cannot step back {dt} from t={state.t}")
    dtype = _score_dtype(net)
    adj = torch.tensor(state.adj, dtype=dtype)
    score = _eval_score(net, adj, state.t)
    noise = torch.as_tensor(symmetric_noise(adj.shape[0], rng), dtype=dtype)
    nxt = euler_maruyama_step(adj, state.t, dt, score, noise, schedule)
    return DiffusionState(nxt.double().numpy(), max(state.t - dt, 0.0))


def _score_dtype(net) -> torch.dtype:
    if isinstance(net, torch.nn.Module):
        for p in net.parameters():
            return p.dtype
    return torch.float64


def _check_finite(net) -> None:
    if isinstance(net, torch.nn.Module):
        for name, p in net.named_parameters():
            if not torch.isfinite(p).all():
                raise ModelError(f"parameter {name} holds non-finite values")


def resolve_steps(t_start: float, dt: float, steps: Optional[int] = None) -> tuple:
    """Return ``(steps, dt)``; an explicit step count overrides ``dt``."""
    if steps is not None:
        if steps < 1:
            raise ContractError("steps must be positive")
        return int(steps), t_start / steps
    if dt <= 0:
        raise ContractError("dt must be positive")
    n = round(t_start / dt)
    if n < 1 or abs(n * dt - t_start) > 1e-9:
        raise ContractError(f"dt={dt} does not divide t={t_start}")
    return int(n), dt


def integrate_reverse(adj: torch.Tensor, t_start: float, dt: float, steps: int, score_fn: ScoreFn,
                      rngs: Sequence[np.random.Generator], schedule: NoiseSchedule) -> torch.Tensor:
    """Run ``steps`` reverse steps on a ``(B, n, n)`` stack; noise for graph
    ``b`` always comes from ``rngs[b]`` so results do not depend on batching."""
    n = adj.shape[-1]
    for k in range(steps):
        t = max(t_start - k * dt, dt)
        score = _eval_score(score_fn, adj, t)
        noise = torch.as_tensor(np.stack([symmetric_noise(n, r) for r in rngs]), dtype=adj.dtype)
        adj = euler_maruyama_step(adj, t, dt, score, noise, schedule)
    return adj


def _threshold(adj: torch.Tensor) -> np.ndarray:
    a = (adj.double().numpy() > 0.5).astype(np.float64)
    a = np.triu(a, 1)
    return a + np.swapaxes(a, -1, -2)


def reconstruct_graphs(graphs: Sequence[Graph], net: ScoreFn, schedule: NoiseSchedule,
                       t_recon: float = 0.1, dt: float = 0.001, seed: int = 0,
                       steps: Optional[int] = None, batch_size: int = 128,
                       rngs: Optional[Sequence[np.random.Generator]] = None) -> list:
    """Noise every graph to ``t_recon`` and integrate back to ``t = 0``.

    Graphs are batched by node count.  Graph ``i`` draws all of its noise
    from its own stream, seeded by ``(seed, i)`` unless ``rngs`` is given.
    Attributes and node counts pass through; labels are dropped.
    """
    if not 0.0 < t_recon < 1.0 + 1e-12:
        raise ContractError("t_recon must lie in (0, 1]")
    n_steps, dt = resolve_steps(t_recon, dt, steps)
    _check_finite(net)
    if rngs is None:
        rngs = [np.random.default_rng([seed, i]) for i in range(len(graphs))]
    dtype = _score_dtype(net)
    m, sd = schedule.mean_scale(t_recon), math.sqrt(schedule.variance(t_recon))
    out: list = [None] * len(graphs)
    by_size: dict = {}
    for i, g in enumerate(graphs):
        by_size.setdefault(g.node_count, []).append(i)
    for n, members in sorted(by_size.items()):
        for s in range(0, len(members), batch_size):
            chunk = members[s: s + batch_size]
            chunk_rngs = [rngs[i] for i in chunk]
            a0 = np.stack([adjacency_matrix(graphs[i]) for i in chunk])
            eps = np.stack([symmetric_noise(n, r) for r in chunk_rngs])
            adj = torch.as_tensor(a0 * m + sd * eps, dtype=dtype)
            score_fn = net
            if isinstance(net, AnalyticScore) and net.A0.dim() == 3:
                score_fn = AnalyticScore(net.A0[chunk], net.schedule)
            adj = integrate_reverse(adj, t_recon, dt, n_steps, score_fn, chunk_rngs, schedule)
            binary = _threshold(adj)
            for k, i in enumerate(chunk):
                out[i] = graph_from_adjacency(binary[k], graphs[i].node_attributes)
    return out


def adapt_target_graph(g: Graph, net: ScoreFn, schedule: NoiseSchedule = NoiseSchedule(),
                       t_recon: float = 0.1, dt: float = 0.001,
                       rng: Optional[np.random.Generator] = None, steps: Optional[int] = None) -> Graph:
    if not 0.0 < t_recon < 1.0:
        raise ContractError("t_recon must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng()
    return reconstruct_graphs([g], net, schedule, t_recon, dt, steps=steps, rngs=[rng])[0]


def sample_prior(n_nodes: int, net: ScoreFn, schedule: NoiseSchedule = NoiseSchedule(),
                 dt: float = 0.001, rng: Optional[np.random.Generator] = None,
                 node_attributes: Optional[np.ndarray] = None) -> Graph:
    """Generate a graph by integrating the reverse SDE from the t = 1 prior."""
    _check_finite(net)
    rng = rng if rng is not None else np.random.default_rng()
    n_steps, dt = resolve_steps(1.0, dt)
    adj = torch.as_tensor(symmetric_noise(n_nodes, rng)[None], dtype=_score_dtype(net))
    adj = integrate_reverse(adj, 1.0, dt, n_steps, net, [rng], schedule)
    x = node_attributes if node_attributes is not None else np.zeros((n_nodes, 0))
    return graph_from_adjacency(_threshold(adj)[0], x)
