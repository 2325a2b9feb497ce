"""Command-line entry point: ``fedsim {partition,run,sweep,stats,report}``.

Exit codes: 0 success, 2 usage or config error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as fconfig
from .config import ConfigError
from .data import DataError, PartitionPlan, realize_round, shards_to_csv
from .federation import derive_seed, run_experiment, write_run
from .labelstats import (LabelDistribution, area_upper_bound, kl_divergence, kl_to_uniform,
                         label_variance)
from .report import RunView, emit_report, write_table2

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3

log = logging.getLogger("fedsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--preset", help="named preset (see `fedsim run --list-presets`)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedsim", description="Deterministic federated-learning simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("partition", help="realize a partition and print per-client label stats")
    _add_config_flags(p)
    p.add_argument("--round", type=int, default=1, help="global epoch T to realize")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--dump", metavar="CSV", help="write the shards to a CSV file")

    for name, text in (("run", "run one experiment or every run of a preset"),
                       ("sweep", "sweep p_biased for several strategies and build table2.csv")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.add_argument("--out", help="output directory (default runs/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="max concurrent client trainings")
        p.add_argument("--list-presets", action="store_true", help="print preset names and exit")

    p = sub.add_parser("stats", help="label variance, KL to uniform and the area bound")
    p.add_argument("--labels", help="comma-separated label list")
    p.add_argument("--labels-csv", help="CSV file with a 'label' column")
    p.add_argument("--classes", type=int, help="label universe size for KL (default: max label + 1)")
    p.add_argument("--p", help="comma-separated distribution p (with --q)")
    p.add_argument("--q", help="comma-separated distribution q (with --p)")
    p.add_argument("--tau", type=int, help="number of unique labels for the area bound")
    p.add_argument("--log-base", type=float, default=10.0)

    p = sub.add_parser("report", help="rebuild summary.csv and curves from run directories")
    p.add_argument("runs", nargs="+", help="run directories (or parents of run directories)")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--table2", action="store_true", help="also write the proportion table")
    return parser


# -- helpers ---------------------------------------------------------------------------------

def _resolve(args) -> list[dict]:
    overrides = fconfig.parse_overrides(args.overrides)
    return fconfig.resolve(args.preset, args.config, overrides, args.seed)


def _run_name(cfg: dict, index: int) -> str:
    if cfg["name"]:
        return cfg["name"]
    name = f"{cfg['partition.case']}-{cfg['fed.strategy']}"
    if cfg["partition.case"] == "MIXED":
        name += f"-p{cfg['partition.p_biased']:g}"
    return name if index < 0 else f"{index:02d}-{name}"


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v) -> str:
    return "undefined" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def _execute(cfg: dict, out_dir: str, jobs: int) -> RunView:
    train, test = fconfig.load_datasets(cfg)
    result = run_experiment(fconfig.experiment_config(cfg), train, test, jobs=jobs)
    os.makedirs(out_dir, exist_ok=True)
    write_run(result, out_dir, config_echo=cfg)
    view = RunView.from_result(cfg["name"] or os.path.basename(out_dir), result)
    emit_report([view], out_dir, title=view.config_id)
    print(f"{view.config_id}: strategy={view.strategy} case={view.case_id} "
          f"final_accuracy={result.mean_final_accuracy:.4f} "
          f"final_loss={result.mean_final_loss:.4f}")
    return view


def _run_many(cfgs: list[dict], out: str, jobs: int, title: str) -> list[RunView]:
    if len(cfgs) == 1:
        return [_execute(cfgs[0], out, jobs)]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.json"), {"runs": cfgs})
    views = []
    for i, cfg in enumerate(cfgs):
        cfg = dict(cfg, name=_run_name(cfg, -1))
        cfgs[i] = cfg
        views.append(_execute(cfg, os.path.join(out, _run_name(cfg, i)), jobs))
    _write_json(os.path.join(out, "config.json"), {"runs": cfgs})
    emit_report(views, out, title=title)
    return views


# -- subcommands -----------------------------------------------------------------------------

def cmd_partition(args) -> int:
    cfg = _resolve(args)[0]
    train, _ = fconfig.load_datasets(cfg)
    plan = fconfig.experiment_config(cfg).plan
    if not 1 <= args.round <= plan.num_rounds:
        raise ConfigError(f"--round must lie in 1..{plan.num_rounds}")
    plan = PartitionPlan(plan.case_spec, plan.num_clients, plan.num_rounds,
                         derive_seed(plan.seed, args.trial), plan.with_replacement)
    shards = realize_round(plan, train, args.round)
    k = train.num_classes
    print("client_id,size," + ",".join(f"n{c}" for c in range(k)) + ",label_variance,kl_uniform")
    for s in shards:
        hist = np.bincount(s.labels, minlength=k)
        print(f"{s.client_id},{len(s.labels)}," + ",".join(str(int(h)) for h in hist)
              + f",{label_variance(s.labels):.6f},{kl_to_uniform(s.labels, range(k)):.6f}")
    if args.dump:
        shards_to_csv(shards, args.dump)
    return EXIT_OK


def cmd_run(args) -> int:
    if args.list_presets:
        for name in fconfig.preset_names():
            print(f"{name}: {fconfig.load_preset(name).get('description', '')}")
        return EXIT_OK
    cfgs = _resolve(args)
    out = args.out or os.path.join("runs", args.preset or _run_name(cfgs[0], -1))
    _run_many(cfgs, out, args.jobs, args.preset or "")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.list_presets:
        return cmd_run(args)
    base = _resolve(args)[0]
    props, strategies = base["sweep.p_biased"], base["sweep.strategies"]
    if not props or not strategies:
        raise ConfigError("sweep needs at least one p_biased value and one strategy")
    if any(not isinstance(p, (int, float)) or not 0 <= p <= 1 for p in props):
        raise ConfigError("sweep.p_biased values must lie in [0, 1]")
    cfgs = []
    for p in props:
        for strategy in strategies:
            cfg = fconfig.apply(base, {"partition.case": "MIXED", "partition.p_biased": p,
                                       "fed.strategy": strategy, "name": ""})
            fconfig.validate(cfg)
            cfgs.append(cfg)
    out = args.out or os.path.join("runs", args.preset or "sweep")
    views = _run_many(cfgs, out, args.jobs, args.preset or "sweep")
    _write_json(os.path.join(out, "sweep.json"), base)
    rows, stats = write_table2(views, out, base["report.sr_threshold"])
    for row in rows:
        print(f"p={row['noniid_share']:.2f} fedavg_sr={_fmt(row['fedavg_sr'])} "
              f"labelwise_sr={_fmt(row['labelwise_sr'])}")
    for short in ("fedavg", "labelwise"):
        print(f"{short}: pearson_r={_fmt(stats[short]['pearson_r'])} mse={_fmt(stats[short]['mse'])}")
    return EXIT_OK


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"malformed {what}: {text!r}") from exc


def cmd_stats(args) -> int:
    if not (args.labels or args.labels_csv or args.p or args.tau is not None):
        raise UsageError("give --labels, --labels-csv, --p/--q or --tau")
    labels = None
    if args.labels:
        vals = _floats(args.labels, "label list")
        if any(v != int(v) or v < 0 for v in vals):
            raise UsageError("labels must be non-negative integers")
        labels = [int(v) for v in vals]
    elif args.labels_csv:
        try:
            with open(args.labels_csv, newline="") as fh:
                labels = [int(row["label"]) for row in csv.DictReader(fh)]
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read labels from {args.labels_csv}: {exc}") from exc
    if labels is not None:
        if not labels:
            raise UsageError("empty label list")
        classes = args.classes or max(labels) + 1
        if max(labels) >= classes:
            raise UsageError("label outside --classes universe")
        print(f"label_variance={label_variance(labels):.12g}")
        print(f"kl_uniform={kl_to_uniform(labels, range(classes), log_base=args.log_base):.12g}")
        print(f"area_upper_bound={area_upper_bound(len(set(labels)))}")
    if args.p or args.q:
        if not (args.p and args.q):
            raise UsageError("--p and --q go together")
        p, q = _floats(args.p, "--p"), _floats(args.q, "--q")
        if len(p) != len(q) or min(p + q) < 0 or sum(p) <= 0 or sum(q) <= 0:
            raise UsageError("--p and --q must be non-negative, non-empty and the same length")
        univ = tuple(range(len(p)))
        kl = kl_divergence(LabelDistribution(np.asarray(p) / sum(p), univ),
                           LabelDistribution(np.asarray(q) / sum(q), univ), log_base=args.log_base)
        print(f"kl={kl:.12g}")
    if args.tau is not None:
        try:
            print(f"area_upper_bound={area_upper_bound(args.tau)}")
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return EXIT_OK


def _find_runs(paths) -> list[str]:
    found = []
    for path in paths:
        if os.path.exists(os.path.join(path, "rounds.csv")):
            found.append(path)
        elif os.path.isdir(path):
            found += sorted(os.path.join(path, d) for d in os.listdir(path)
                            if os.path.exists(os.path.join(path, d, "rounds.csv")))
        else:
            raise FileNotFoundError(f"no run directory at {path}")
    if not found:
        raise FileNotFoundError("no run directories found")
    return found


def cmd_report(args) -> int:
    views = [RunView.from_dir(d) for d in _find_runs(args.runs)]
    for path in emit_report(views, args.out, args.title):
        print(path)
    if args.table2:
        write_table2(views, args.out)
        print(os.path.join(args.out, "table2.csv"))
    return EXIT_OK


COMMANDS = {"partition": cmd_partition, "run": cmd_run, "sweep": cmd_sweep,
            "stats": cmd_stats, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"fedsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
