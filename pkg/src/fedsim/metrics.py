"""Run records and the summary statistics computed over them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RoundRecord:
    trial: int
    T: int
    strategy: str
    selected_ids: tuple[int, ...]
    mean_score: float
    test_accuracy: float
    test_loss: float
    local_accuracies: tuple[float, ...] = ()
    local_losses: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if self.test_loss < 0:
            raise ValueError("loss must be non-negative")


def sigma_tilde(groups) -> float:
    """Mean over (trial, T) groups of the population std across clients.

    ``groups`` is either an array shaped (trials, rounds, clients) or any
    nested sequence whose innermost lists are the per-client values of one
    (trial, T) group; ragged groups are allowed.
    """
    leaves = list(_leaf_groups(groups))
    if not leaves:
        raise ValueError("sigma_tilde of an empty grid")
    return float(np.mean([np.std(np.asarray(g, dtype=np.float64)) for g in leaves]))


def _leaf_groups(groups):
    for g in groups:
        if len(g) == 0:
            continue
        if np.ndim(g[0]) == 0:
            yield g
        else:
            yield from _leaf_groups(g)


def success_rate(accuracies: Sequence[float], threshold: float = 0.2) -> float:
    """Fraction of evaluations with accuracy strictly above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("success_rate of an empty list")
    return float(np.mean(acc > threshold))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length series of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def mse_proportions(proportions: Sequence[float], success_rates: Sequence[float]) -> float:
    p = np.asarray(proportions, dtype=np.float64)
    s = np.asarray(success_rates, dtype=np.float64)
    if p.shape != s.shape:
        raise ValueError("length mismatch")
    if p.size == 0:
        raise ValueError("empty series")
    return float(np.mean((p - s) ** 2))
