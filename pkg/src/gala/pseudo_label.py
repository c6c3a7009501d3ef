"""Class-specific confidence thresholds with a linear curriculum."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ArgumentError, ContractError

#: Marks a class that no record predicts in ``class_max`` output.
ABSENT = float("nan")


@dataclass(frozen=True)
class ConfidenceRecord:
    graph_index: int
    probs: tuple

    @property
    def confidence(self) -> float:
        return max(self.probs)

    @property
    def predicted_class(self) -> int:
        # first maximum wins, so ties go to the lowest class index
        return int(np.argmax(self.probs))


def make_records(probs: np.ndarray, indices: Sequence[int] = None) -> list:
    probs = np.asarray(probs, dtype=np.float64)
    if indices is None:
        indices = range(len(probs))
    return [ConfidenceRecord(int(i), tuple(p.tolist())) for i, p in zip(indices, probs)]


@dataclass(frozen=True)
class CurriculumSchedule:
    alpha_start: float = 0.95
    alpha_end: float = 0.99
    total_epochs: int = 50

    def __post_init__(self):
        if self.alpha_end < self.alpha_start:
            raise ContractError("alpha_end must not be below alpha_start")
        if self.total_epochs < 1:
            raise ContractError("total_epochs must be positive")

    def alpha(self, e: int) -> float:
        # a single-epoch schedule stays at alpha_start
        if self.total_epochs == 1:
            return self.alpha_start
        a = self.alpha_start + (self.alpha_end - self.alpha_start) * e / (self.total_epochs - 1)
        return float(min(max(a, self.alpha_start), self.alpha_end))


def class_max(records: Sequence[ConfidenceRecord], num_classes: int) -> np.ndarray:
    """Highest confidence among the records predicted as each class (``ABSENT`` if none)."""
    if not records:
        raise ArgumentError("class_max needs at least one record")
    M = np.full(num_classes, ABSENT)
    for r in records:
        c = r.predicted_class
        if math.isnan(M[c]) or r.confidence > M[c]:
            M[c] = r.confidence
    return M


def thresholds(M: np.ndarray, e: int, sched: CurriculumSchedule) -> np.ndarray:
    a = sched.alpha(e)
    M = np.asarray(M, dtype=np.float64)
    return np.where(np.isnan(M), a, M * a)


def select_confident(records: Sequence[ConfidenceRecord], tau: np.ndarray) -> list:
    """``(graph_index, pseudo_label)`` for every record strictly above its class threshold."""
    out = []
    for r in records:
        c = r.predicted_class
        if r.confidence > tau[c]:
            out.append((r.graph_index, c))
    return out


def fixed_threshold_select(records: Sequence[ConfidenceRecord], threshold: float) -> list:
    """Plain confidence cut shared by all classes, for comparison."""
    return [(r.graph_index, r.predicted_class) for r in records if r.confidence > threshold]


def class_shares(confident: Sequence[tuple], num_classes: int) -> np.ndarray:
    counts = np.bincount([c for _, c in confident], minlength=num_classes).astype(float)
    total = counts.sum()
    return counts / total if total else counts


def share_entropy(confident: Sequence[tuple], num_classes: int) -> float:
    p = class_shares(confident, num_classes)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) + 0.0  # + 0.0 turns -0.0 into 0.0


def pseudo_label_nll(log_probs: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log-probability of the pseudo-labels; 0 for an empty set."""
    if log_probs.shape[0] == 0:
        return log_probs.sum() * 0.0
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    return -log_probs.gather(1, y.unsqueeze(1)).mean()


def sup_loss(graphs, labels, model) -> torch.Tensor:
    """Pseudo-label cross-entropy of ``model`` on the given (source-style) graphs."""
    if len(graphs) == 0:
        p = next(model.parameters())
        return torch.zeros((), dtype=p.dtype)
    return pseudo_label_nll(F.log_softmax(model.logits(graphs), dim=-1), labels)
