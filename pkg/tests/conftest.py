import numpy as np
import pytest
import torch
from hypothesis import settings

from gala.graph import Graph, degree_onehot

torch.set_num_threads(1)
settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_graph(n, edges, label=None, max_degree=None, dim=None):
    """Graph whose attributes are degree one-hots (or zeros of width ``dim``)."""
    g = Graph(n, edges, np.zeros((n, dim or 0)), label)
    if dim is None:
        return Graph(n, g.edges, degree_onehot(g, max_degree or 10), label)
    return g


def triangle(label=None):
    return make_graph(3, [(0, 1), (1, 2), (0, 2)], label)


def path3(label=None):
    return make_graph(3, [(0, 1), (1, 2)], label)


def random_graph(rng, n, p, label=None, max_degree=10):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return make_graph(n, list(zip(iu[keep].tolist(), ju[keep].tolist())), label, max_degree)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_relative_errors(module, loss_fn, n_coords, rng, step=1e-5):
    """Central differences on ``n_coords`` random parameter coordinates versus autograd.

    Returns the relative error of every probed coordinate.
    """
    params = [p for p in module.parameters()]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = np.array([p.numel() for p in params])
    errors = []
    for _ in range(n_coords):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = int(rng.integers(sizes[k]))
        flat = params[k].data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + step
            up = loss_fn().item()
            flat[idx] = orig - step
            down = loss_fn().item()
            flat[idx] = orig
        fd = (up - down) / (2 * step)
        an = grads[k].view(-1)[idx].item()
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return np.array(errors)


def tiny_config(**overrides):
    """Seconds-scale experiment: small corpus, small networks, few epochs."""
    from gala.config import ExperimentConfig, set_value
    cfg = ExperimentConfig()
    for key, value in {
        "seeds": 2, "synthetic.graphs_per_domain": 40, "synthetic.min_nodes": 8, "synthetic.max_nodes": 12,
        "classifier.epochs": 40, "classifier.hidden_dim": 16,
        "diffusion.epochs": 2, "diffusion.num_layers": 1, "diffusion.hidden_dim": 8, "diffusion.lr": 1e-3,
        "diffusion.ema": 0.9, "diffusion.t_recon": 0.02, "adapt.epochs": 2, "adapt.batch_size": 16,
        **overrides,
    }.items():
        set_value(cfg, key, value)
    return cfg


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
