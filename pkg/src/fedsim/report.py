"""Summary tables and figures for finished runs.

Everything here is computed from round records alone, so a report can be
rebuilt from ``rounds.csv`` + ``selected_evals.csv`` on disk.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .federation import RunResult, read_rounds
from .metrics import RoundRecord, mse_proportions, pearson, sigma_tilde, success_rate
from .plotting import plot_curves, plot_proportions
from .svg import Series, line_chart_svg

SUMMARY_HEADER = ["config_id", "strategy", "case_id", "p_biased", "mean_final_accuracy",
                  "sigma_tilde_accuracy", "mean_final_loss", "sigma_tilde_loss", "success_rate"]
TABLE2_HEADER = ["noniid_share", "iid_share", "fedavg_sr", "labelwise_sr",
                 "fedavg_final_accuracy", "labelwise_final_accuracy"]
SR_THRESHOLD = 0.2


@dataclass
class RunView:
    config_id: str
    strategy: str
    case_id: str
    p_biased: float
    records: list[RoundRecord]

    @classmethod
    def from_result(cls, config_id: str, result: RunResult) -> "RunView":
        spec = result.config.plan.case_spec
        return cls(config_id, result.config.strategy, spec.case_id, spec.p_biased,
                   list(result.records))

    @classmethod
    def from_dir(cls, run_dir) -> "RunView":
        with open(os.path.join(run_dir, "config.json")) as fh:
            cfg = json.load(fh)
        return cls(cfg.get("name") or os.path.basename(os.path.normpath(run_dir)),
                   cfg["fed.strategy"], cfg["partition.case"], float(cfg["partition.p_biased"]),
                   read_rounds(run_dir))

    def trials(self) -> list[int]:
        return sorted({r.trial for r in self.records})

    def final_records(self) -> list[RoundRecord]:
        last: dict[int, RoundRecord] = {}
        for r in self.records:
            if r.trial not in last or r.T > last[r.trial].T:
                last[r.trial] = r
        return [last[t] for t in sorted(last)]

    def mean_curve(self) -> tuple[list[int], list[float], list[float]]:
        acc, loss = defaultdict(list), defaultdict(list)
        for r in self.records:
            acc[r.T].append(r.test_accuracy)
            loss[r.T].append(r.test_loss)
        rounds = sorted(acc)
        return rounds, [float(np.mean(acc[T])) for T in rounds], [float(np.mean(loss[T])) for T in rounds]

    def local_accuracies(self) -> list[float]:
        return [a for r in self.records for a in r.local_accuracies]

    def summary_row(self, threshold: float = SR_THRESHOLD) -> dict:
        finals = self.final_records()
        acc_groups = [r.local_accuracies for r in self.records if r.local_accuracies]
        loss_groups = [r.local_losses for r in self.records if r.local_losses]
        local = self.local_accuracies()
        return {
            "config_id": self.config_id,
            "strategy": self.strategy,
            "case_id": self.case_id,
            "p_biased": self.p_biased,
            "mean_final_accuracy": float(np.mean([r.test_accuracy for r in finals])) if finals else math.nan,
            "std_final_accuracy": float(np.std([r.test_accuracy for r in finals])) if finals else math.nan,
            "sigma_tilde_accuracy": sigma_tilde(acc_groups) if acc_groups else math.nan,
            "mean_final_loss": float(np.mean([r.test_loss for r in finals])) if finals else math.nan,
            "sigma_tilde_loss": sigma_tilde(loss_groups) if loss_groups else math.nan,
            "success_rate": success_rate(local, threshold) if local else math.nan,
        }


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row[h]) for h in header])


def curves_svg(views: Sequence[RunView], title: str = "") -> str:
    acc_series, loss_series = [], []
    for v in views:
        rounds, acc, loss = v.mean_curve()
        acc_series.append(Series(v.config_id, rounds, acc))
        loss_series.append(Series(v.config_id, rounds, loss))
    return line_chart_svg([
        ("accuracy", "Test accuracy", "global epoch T", "accuracy", acc_series),
        ("loss", "Test loss", "global epoch T", "cross-entropy", loss_series),
    ], title)


def emit_report(views: Sequence[RunView], out_dir, title: str = "") -> list[str]:
    """Write ``summary.csv``, ``curves.svg`` and ``curves.png`` into ``out_dir``."""
    if not views:
        raise ValueError("need at least one run to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, n) for n in ("summary.csv", "curves.svg", "curves.png")]
    write_csv(paths[0], SUMMARY_HEADER, [v.summary_row() for v in views])
    with open(paths[1], "w") as fh:
        fh.write(curves_svg(views, title))
    plot_curves([(v.config_id, *v.mean_curve()) for v in views], paths[2])
    return paths


def proportion_table(views: Sequence[RunView], threshold: float = SR_THRESHOLD):
    """Per-proportion success rates for FedAvg and label-wise selection.

    Returns ``(rows, stats)``; ``stats`` maps strategy to Pearson r and MSE of
    its success rate against the IID share, or ``None`` where undefined.
    """
    by_key = {(round(v.p_biased, 10), v.strategy): v for v in views}
    props = sorted({p for p, _ in by_key})
    rows = []
    for p in props:
        row = {"noniid_share": p, "iid_share": round(1.0 - p, 10)}
        for strategy, short in (("fedavg_random", "fedavg"), ("labelwise", "labelwise")):
            v = by_key.get((p, strategy))
            summary = v.summary_row(threshold) if v else None
            row[f"{short}_sr"] = summary["success_rate"] if summary else math.nan
            row[f"{short}_final_accuracy"] = summary["mean_final_accuracy"] if summary else math.nan
        rows.append(row)
    stats = {}
    iid = [r["iid_share"] for r in rows]
    for short in ("fedavg", "labelwise"):
        sr = [r[f"{short}_sr"] for r in rows]
        try:
            r_val = pearson(iid, sr)
        except ValueError:
            r_val = None
        stats[short] = {"pearson_r": r_val,
                        "mse": mse_proportions(iid, sr) if rows else None}
    return rows, stats


def write_table2(views: Sequence[RunView], out_dir, threshold: float = SR_THRESHOLD):
    os.makedirs(out_dir, exist_ok=True)
    rows, stats = proportion_table(views, threshold)
    write_csv(os.path.join(out_dir, "table2.csv"), TABLE2_HEADER, rows)
    with open(os.path.join(out_dir, "table2_stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["statistic", "fedavg", "labelwise"])
        for name in ("pearson_r", "mse"):
            writer.writerow([name] + ["" if stats[s][name] is None or math.isnan(stats[s][name])
                                      else f"{stats[s][name]:.6f}" for s in ("fedavg", "labelwise")])
    plot_proportions([v.summary_row(threshold) for v in views],
                     os.path.join(out_dir, "proportions.png"))
    return rows, stats
