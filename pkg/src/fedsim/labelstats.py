"""Label-multiset statistics: variance scoring, KL divergence, cluster topology.

Labels are categorical.  Before any arithmetic a multiset is remapped so
that its sorted unique labels become ``0..k-1``; ``{1, 5, 10}`` and
``{0, 1, 2}`` therefore score identically.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

DEFAULT_KL_EPSILON = 1e-9
DEFAULT_LOG_BASE = 10.0


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64).ravel()
    if arr.size == 0:
        raise ValueError("label multiset must be non-empty")
    return arr


def remap_labels(labels) -> np.ndarray:
    """Replace each label by the rank of its value among the unique labels."""
    arr = _as_labels(labels)
    _, inverse = np.unique(arr, return_inverse=True)
    return inverse.astype(np.int64).ravel()


def label_variance_exact(labels) -> Fraction:
    """Population variance of the remapped multiset as an exact rational."""
    ranks = remap_labels(labels)
    n = int(ranks.size)
    s1 = int(ranks.sum())
    s2 = int((ranks * ranks).sum())
    return Fraction(n * s2 - s1 * s1, n * n)


def label_variance(labels) -> float:
    """Population variance of the remapped multiset; 0 iff a single label.

    Correctly rounded from the exact value, so multisets with equal variance
    always compare equal.
    """
    return float(label_variance_exact(labels))


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    probs: np.ndarray
    universe: tuple[int, ...]

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        universe = tuple(int(u) for u in self.universe)
        if probs.shape != (len(universe),):
            raise ValueError("one probability per universe label required")
        if len(set(universe)) != len(universe):
            raise ValueError("universe labels must be unique")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "universe", universe)

    def to_csv_rows(self) -> list[tuple[int, float]]:
        return [(label, float(p)) for label, p in zip(self.universe, self.probs)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "probability"])
            writer.writerows(self.to_csv_rows())


def label_distribution(labels, universe: Sequence[int] | None = None) -> LabelDistribution:
    """Normalized histogram of ``labels`` over ``universe`` (default: its unique labels)."""
    arr = _as_labels(labels)
    if universe is None:
        universe = np.unique(arr).tolist()
    universe = [int(u) for u in universe]
    position = {u: i for i, u in enumerate(universe)}
    counts = np.zeros(len(universe))
    for label, count in zip(*np.unique(arr, return_counts=True)):
        if int(label) not in position:
            raise ValueError(f"label {label} not in universe")
        counts[position[int(label)]] = count
    return LabelDistribution(counts / arr.size, tuple(universe))


def uniform_reference(universe: Sequence[int]) -> LabelDistribution:
    universe = tuple(int(u) for u in universe)
    if not universe:
        raise ValueError("universe must be non-empty")
    return LabelDistribution(np.full(len(universe), 1.0 / len(universe)), universe)


def kl_divergence(p: LabelDistribution, q: LabelDistribution,
                  log_base: float = DEFAULT_LOG_BASE,
                  epsilon: float = DEFAULT_KL_EPSILON) -> float:
    """KL(p || q) after adding ``epsilon`` to every bin and renormalizing.

    With ``epsilon=0`` the exact divergence is returned; terms with p_k = 0
    contribute nothing and p_k > 0 against q_k = 0 gives ``inf``.
    """
    if p.universe != q.universe:
        raise ValueError("distributions are defined over different universes")
    if log_base <= 1:
        raise ValueError("log_base must exceed 1")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    ps = p.probs + epsilon
    qs = q.probs + epsilon
    ps = ps / ps.sum()
    qs = qs / qs.sum()
    support = ps > 0
    if np.any(qs[support] == 0):
        return math.inf
    terms = ps[support] * np.log(ps[support] / qs[support])
    return max(float(terms.sum()) / math.log(log_base), 0.0)


def kl_to_uniform(labels, universe: Sequence[int],
                  log_base: float = DEFAULT_LOG_BASE,
                  epsilon: float = DEFAULT_KL_EPSILON) -> float:
    """Pre-training quality estimate: divergence of a shard's labels from uniform."""
    return kl_divergence(label_distribution(labels, universe), uniform_reference(universe),
                         log_base=log_base, epsilon=epsilon)


def area_upper_bound(tau: int) -> int:
    """Maximum number of distinct coverage areas for ``tau`` unique labels."""
    if int(tau) != tau or tau < 1:
        raise ValueError("tau must be a positive integer")
    tau = int(tau)
    return 1 + tau * (tau - 1)


@dataclass(frozen=True)
class ClusterTopology:
    q: int
    cluster_members: dict[int, tuple[int, ...]]
    area_of: dict[int, int]

    def areas(self) -> dict[int, tuple[int, ...]]:
        """Client ids grouped by area index p, ascending."""
        grouped: dict[int, list[int]] = defaultdict(list)
        for cid, p in sorted(self.area_of.items()):
            grouped[p].append(cid)
        return {p: tuple(grouped[p]) for p in sorted(grouped)}


def build_topology(label_sets: Mapping[int, Sequence[int]]) -> ClusterTopology:
    """Clusters C_k (clients holding label k) and areas A_p.

    A client with m distinct labels out of q lies in area p = q - m + 1, so
    A_1 holds the clients that cover every label and A_q the single-label
    ones.
    """
    if not label_sets:
        raise ValueError("need at least one client")
    unique = {cid: set(np.unique(_as_labels(labels)).tolist())
              for cid, labels in label_sets.items()}
    universe = sorted(set().union(*unique.values()))
    q = len(universe)
    members = {k: tuple(sorted(cid for cid, labs in unique.items() if k in labs))
               for k in universe}
    area_of = {cid: q - len(labs) + 1 for cid, labs in unique.items()}
    return ClusterTopology(q, members, area_of)
