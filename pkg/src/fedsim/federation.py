"""Client selection, aggregation and the global training loop.

Three strategies are available:

``fedavg_random``
    uniform random client sampling, local training, size-weighted averaging.
``fedsgd``
    uniform random sampling; every selected client contributes one
    full-shard gradient and the server takes one averaged SGD step.
``labelwise``
    clients whose round labels are all identical are ineligible; the rest
    are ranked by label variance divided by shard size and the top ``n``
    are trained and averaged without weights.  If fewer than ``n`` clients
    are eligible the round uses all of them.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .data import ClientDataset, Dataset, PartitionPlan, realize_round
from .labelstats import label_variance_exact
from .metrics import RoundRecord
from .model import (ArchitectureSpec, ModelParams, TrainingHyper, check_same_shapes,
                    evaluate, init_params, loss_and_grads, local_train, sgd_step)

log = logging.getLogger(__name__)

STRATEGIES = ("fedavg_random", "fedsgd", "labelwise")
AGGREGATIONS = ("weighted", "unweighted")
SCORE_MODES = ("size_normalized", "raw")


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class ClientState:
    client_id: int
    size: int
    label_variance: float | Fraction
    eligible: bool = True
    shard: ClientDataset | None = field(default=None, repr=False)

    @classmethod
    def from_shard(cls, shard: ClientDataset, require_variance: bool) -> "ClientState":
        var = label_variance_exact(shard.labels)
        return cls(shard.client_id, len(shard), var,
                   var != 0 if require_variance else True, shard)

    def exact_score(self, mode: str = "size_normalized") -> Fraction:
        """Score as a rational so equal scores tie exactly."""
        var = Fraction(self.label_variance)
        return var if mode == "raw" else var / self.size

    def score(self, mode: str = "size_normalized") -> float:
        return float(self.exact_score(mode))


@dataclass(frozen=True)
class SelectionResult:
    T: int
    selected: tuple[int, ...]
    scores: tuple[float, ...]
    requested_n: int

    @property
    def effective_n(self) -> int:
        return len(self.selected)

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores)) if self.scores else math.nan


def select_random(clients: Sequence[ClientState], n: int, seed: int, T: int = 0,
                  score_mode: str = "size_normalized") -> SelectionResult:
    """Uniform sample of ``min(n, len(clients))`` clients without replacement."""
    if not clients:
        raise ValueError("no clients to select from")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(clients), size=min(n, len(clients)), replace=False)
    chosen = [clients[i] for i in picked]
    return SelectionResult(T, tuple(c.client_id for c in chosen),
                           tuple(c.score(score_mode) for c in chosen), n)


def select_labelwise(clients: Sequence[ClientState], n: int, T: int = 0,
                     score_mode: str = "size_normalized") -> SelectionResult:
    """Greedy top-``n`` eligible clients by score, ties to the lower client id.

    Repeatedly taking the argmax of the remaining pool is the same as one
    stable sort on (-score, client_id), which is what this does.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if score_mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {score_mode!r}")
    pool = [c for c in clients if c.eligible and c.label_variance != 0]
    ranked = sorted(pool, key=lambda c: (-c.exact_score(score_mode), c.client_id))[:n]
    return SelectionResult(T, tuple(c.client_id for c in ranked),
                           tuple(c.score(score_mode) for c in ranked), n)


def aggregate_unweighted(param_sets: Sequence[ModelParams]) -> ModelParams:
    """Element-wise mean, summed in the order given."""
    if not param_sets:
        raise ValueError("nothing to aggregate")
    total = param_sets[0]
    for params in param_sets[1:]:
        total = total.zip_with(params, np.add)
    k = len(param_sets)
    return total.map(lambda a: a / k)


def aggregate_weighted(param_sets: Sequence[ModelParams], sizes: Sequence[float]) -> ModelParams:
    """Sum of ``(n_i / sum(n)) * M_i`` in the order given."""
    if not param_sets:
        raise ValueError("nothing to aggregate")
    if len(param_sets) != len(sizes):
        raise ValueError("one size per parameter set required")
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValueError("sizes must be positive")
    weights = sizes / sizes.sum()
    total = param_sets[0].map(lambda a: weights[0] * a)
    for w, params in zip(weights[1:], param_sets[1:]):
        check_same_shapes(total, params)
        total = total.zip_with(params, lambda acc, a, w=w: acc + w * a)
    return total


def fedsgd_round(global_params: ModelParams, shards: Sequence[ClientDataset],
                 lr: float) -> ModelParams:
    """One server SGD step along the size-weighted mean of full-shard gradients."""
    if not shards:
        raise ValueError("fedsgd needs at least one shard")
    grads = [loss_and_grads(global_params, s.features, s.labels)[1] for s in shards]
    mean_grad = aggregate_weighted(grads, [len(s) for s in shards])
    return sgd_step(global_params, mean_grad, lr)


@dataclass(frozen=True)
class ExperimentConfig:
    plan: PartitionPlan
    strategy: str = "fedavg_random"
    aggregation: str | None = None  # None: unweighted for labelwise, weighted otherwise
    clients_per_round: int = 30
    hyper: TrainingHyper = TrainingHyper()
    hidden: tuple[int, ...] = (64,)
    trials: int = 1
    seed: int = 0
    score_mode: str = "size_normalized"
    fallback: str | None = None
    evaluate_selected: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.aggregation is not None and self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if not 1 <= self.clients_per_round <= self.plan.num_clients:
            raise ValueError("clients_per_round must lie in 1..num_clients")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.fallback not in (None, "random"):
            raise ValueError("fallback must be None or 'random'")

    @property
    def num_rounds(self) -> int:
        return self.plan.num_rounds

    @property
    def resolved_aggregation(self) -> str:
        if self.aggregation is not None:
            return self.aggregation
        return "unweighted" if self.strategy == "labelwise" else "weighted"

    def architecture(self, feature_dim: int, num_classes: int) -> ArchitectureSpec:
        return ArchitectureSpec((feature_dim, *self.hidden, num_classes))


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    initial: list[tuple[float, float]]  # (accuracy, loss) before round 1, per trial
    final_params: list[ModelParams] = field(default_factory=list, repr=False)
    trained_clients: list[tuple[int, int, int]] = field(default_factory=list, repr=False)

    def trial_records(self, trial: int) -> list[RoundRecord]:
        return [r for r in self.records if r.trial == trial]

    def final_metrics(self) -> list[tuple[float, float]]:
        """(accuracy, loss) after the last round of every trial."""
        out = []
        for trial in range(self.config.trials):
            recs = self.trial_records(trial)
            if recs:
                out.append((recs[-1].test_accuracy, recs[-1].test_loss))
            else:
                out.append(self.initial[trial])
        return out

    @property
    def mean_final_accuracy(self) -> float:
        return float(np.mean([a for a, _ in self.final_metrics()]))

    @property
    def mean_final_loss(self) -> float:
        return float(np.mean([l for _, l in self.final_metrics()]))

    def selected_accuracies(self) -> list[float]:
        return [a for r in self.records for a in r.local_accuracies]


def _train_one(args):
    params, shard, hyper, seed = args
    return local_train(params, shard.features, shard.labels, hyper, seed=seed)


def run_experiment(config: ExperimentConfig, train: Dataset, test: Dataset,
                   jobs: int = 1) -> RunResult:
    """Run every trial of ``config``; a pure function of its inputs.

    Only the selected clients train in a round.  Local models are collected
    and reduced in ascending client-id order whatever order the workers
    finish in.
    """
    if train.feature_dim != test.feature_dim:
        raise ValueError("train and test feature dimensions differ")
    arch = config.architecture(train.feature_dim, max(train.num_classes, test.num_classes))
    aggregation = config.resolved_aggregation
    hyper = config.hyper
    records: list[RoundRecord] = []
    initial, finals, trained = [], [], []
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for trial in range(config.trials):
            plan = PartitionPlan(config.plan.case_spec, config.plan.num_clients,
                                 config.plan.num_rounds,
                                 derive_seed(config.plan.seed, trial),
                                 config.plan.with_replacement)
            params = init_params(arch, derive_seed(config.seed, trial, 0))
            initial.append(evaluate(params, test.features, test.labels))
            for T in range(1, config.num_rounds + 1):
                params, record = _run_round(config, plan, params, train, test, trial, T,
                                            aggregation, hyper, pool, trained)
                records.append(record)
                log.debug("trial %d T %d acc %.4f loss %.4f", trial, T,
                          record.test_accuracy, record.test_loss)
            finals.append(params)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(config, records, initial, finals, trained)


def _run_round(config, plan, params, train, test, trial, T, aggregation, hyper, pool, trained):
    shards = realize_round(plan, train, T)
    by_id = {s.client_id: s for s in shards}
    states = [ClientState.from_shard(s, config.strategy == "labelwise") for s in shards]
    select_seed = derive_seed(config.seed, trial, T, 1)

    if config.strategy == "labelwise":
        selection = select_labelwise(states, config.clients_per_round, T, config.score_mode)
        if selection.effective_n == 0 and config.fallback == "random":
            log.warning("trial %d T %d: no eligible clients, falling back to random", trial, T)
            selection = select_random(states, config.clients_per_round, select_seed, T,
                                      config.score_mode)
    else:
        selection = select_random(states, config.clients_per_round, select_seed, T,
                                  config.score_mode)

    ids = sorted(selection.selected)
    local_acc: tuple[float, ...] = ()
    local_loss: tuple[float, ...] = ()
    if not ids:
        log.warning("trial %d T %d: no eligible clients, global model unchanged", trial, T)
    elif config.strategy == "fedsgd":
        params = fedsgd_round(params, [by_id[i] for i in ids], hyper.learning_rate)
        trained.extend((trial, T, i) for i in ids)
    else:
        jobs = [(params, by_id[i], hyper, derive_seed(config.seed, trial, T, 2, i)) for i in ids]
        local = list(pool.map(_train_one, jobs)) if pool is not None else [_train_one(j) for j in jobs]
        trained.extend((trial, T, i) for i in ids)
        if aggregation == "weighted":
            params = aggregate_weighted(local, [len(by_id[i]) for i in ids])
        else:
            params = aggregate_unweighted(local)
        if config.evaluate_selected:
            evals = [evaluate(m, test.features, test.labels) for m in local]
            local_acc = tuple(a for a, _ in evals)
            local_loss = tuple(l for _, l in evals)

    acc, loss = evaluate(params, test.features, test.labels)
    return params, RoundRecord(trial, T, config.strategy, tuple(ids), selection.mean_score,
                               acc, loss, local_acc, local_loss)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

ROUNDS_HEADER = ["trial", "T", "strategy", "selected_ids", "mean_score",
                 "test_accuracy", "test_loss"]
SELECTED_HEADER = ["trial", "T", "client_id", "local_accuracy", "local_loss"]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def write_run(result: RunResult, out_dir, config_echo: dict | None = None) -> None:
    """Write ``config.json``, ``rounds.csv`` and ``selected_evals.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    echo = config_echo if config_echo is not None else config_to_dict(result.config)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "rounds.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUNDS_HEADER)
        for r in result.records:
            writer.writerow([r.trial, r.T, r.strategy, " ".join(map(str, r.selected_ids)),
                             _fmt(r.mean_score), _fmt(r.test_accuracy), _fmt(r.test_loss)])
    with open(os.path.join(out_dir, "selected_evals.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SELECTED_HEADER)
        for r in result.records:
            for cid, acc, loss in zip(r.selected_ids, r.local_accuracies, r.local_losses):
                writer.writerow([r.trial, r.T, cid, _fmt(acc), _fmt(loss)])


def read_rounds(run_dir) -> list[RoundRecord]:
    """Rebuild round records from ``rounds.csv`` and ``selected_evals.csv``."""
    local: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
    sel_path = os.path.join(run_dir, "selected_evals.csv")
    if os.path.exists(sel_path):
        with open(sel_path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (int(row["trial"]), int(row["T"]))
                loss = float(row["local_loss"]) if row.get("local_loss") else math.nan
                local.setdefault(key, []).append(
                    (int(row["client_id"]), float(row["local_accuracy"]), loss))
    records = []
    with open(os.path.join(run_dir, "rounds.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["trial"]), int(row["T"]))
            ids = tuple(int(i) for i in row["selected_ids"].split())
            evals = local.get(key, [])
            records.append(RoundRecord(
                key[0], key[1], row["strategy"], ids,
                float(row["mean_score"]) if row["mean_score"] else math.nan,
                float(row["test_accuracy"]), float(row["test_loss"]),
                tuple(a for _, a, _ in evals), tuple(l for _, _, l in evals)))
    return records
