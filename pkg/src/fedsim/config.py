"""Flat dotted-key configuration, presets and dataset resolution."""

from __future__ import annotations

import copy
import json
import os
from importlib import resources

from . import data as fdata
from .data import CaseSpec, Dataset, PartitionPlan
from .federation import ExperimentConfig
from .model import TrainingHyper

DEFAULTS: dict = {
    "name": "",
    "seed": 0,
    "data.source": "mnist",
    "data.train_size": 10000,
    "data.test_size": 2000,
    "data.subset_seed": 0,
    "data.synthetic.classes": 10,
    "data.synthetic.per_class": 600,
    "data.synthetic.dim": 32,
    "data.synthetic.spread": 0.25,
    "data.synthetic.seed": 0,
    "partition.case": "IID",
    "partition.num_clients": 100,
    "partition.per_client_total": 290,
    "partition.major_count": 200,
    "partition.minor_count": 90,
    "partition.p_biased": 0.0,
    "partition.n_min": 30,
    "partition.n_max": 270,
    "partition.with_replacement": True,
    "fed.strategy": "fedavg_random",
    "fed.aggregation": "auto",
    "fed.clients_per_round": 30,
    "fed.rounds": 30,
    "fed.trials": 3,
    "fed.score": "size_normalized",
    "fed.fallback": "none",
    "model.hidden": [64],
    "train.optimizer": "adam",
    "train.lr": None,
    "train.epochs": 4,
    "train.batch_size": 32,
    "sweep.p_biased": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "sweep.strategies": ["fedavg_random", "labelwise"],
    "report.sr_threshold": 0.2,
}

DATA_DIR_ENV = "FEDSIM_DATA_DIR"


class ConfigError(Exception):
    """Invalid configuration or usage; maps to exit code 2."""


def parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if value is None or default is None:
        if key == "train.lr" and value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, (int, float, str)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return list(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def apply(cfg: dict, overrides: dict) -> dict:
    out = dict(cfg)
    for key, value in overrides.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        out[key.strip()] = parse_value(raw)
    return out


def preset_names() -> list[str]:
    root = resources.files("fedsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("fedsim") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    doc = json.loads(path.read_text())
    if "extends" in doc:
        parent = load_preset(doc["extends"])
        merged = copy.deepcopy(parent)
        merged["base"] = {**parent.get("base", {}), **doc.get("base", {})}
        if "runs" in doc:
            merged["runs"] = doc["runs"]
        merged["description"] = doc.get("description", parent.get("description", ""))
        return merged
    return doc


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    if "base" in doc or "runs" in doc:
        return doc
    return {"base": doc}


def resolve(preset: str | None = None, config_path=None, overrides: dict | None = None,
            seed: int | None = None) -> list[dict]:
    """Fully resolved flat configs, one per run.

    Precedence: defaults < preset base < config file < per-run entries <
    ``--set`` overrides < ``--seed``.
    """
    base = dict(DEFAULTS)
    runs: list[dict] = [{}]
    for doc in (load_preset(preset) if preset else None,
                load_config_file(config_path) if config_path else None):
        if doc is None:
            continue
        base = apply(base, doc.get("base", {}))
        if "runs" in doc:
            runs = list(doc["runs"])
    extra = dict(overrides or {})
    if seed is not None:
        extra["seed"] = seed
    resolved = []
    for entry in runs:
        cfg = apply(apply(base, entry), extra)
        validate(cfg)
        resolved.append(cfg)
    return resolved


def validate(cfg: dict) -> None:
    try:
        experiment_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["data.train_size"] < 1 or cfg["data.test_size"] < 1:
        raise ConfigError("data sizes must be positive")


def case_spec(cfg: dict) -> CaseSpec:
    return CaseSpec(cfg["partition.case"], cfg["partition.per_client_total"],
                    cfg["partition.major_count"], cfg["partition.minor_count"],
                    cfg["partition.p_biased"], (cfg["partition.n_min"], cfg["partition.n_max"]))


def experiment_config(cfg: dict) -> ExperimentConfig:
    plan = PartitionPlan(case_spec(cfg), cfg["partition.num_clients"], cfg["fed.rounds"],
                         cfg["seed"], cfg["partition.with_replacement"])
    hyper = TrainingHyper(lr=cfg["train.lr"], epochs=cfg["train.epochs"],
                          batch_size=cfg["train.batch_size"], optimizer=cfg["train.optimizer"],
                          seed=cfg["seed"])
    return ExperimentConfig(
        plan, strategy=cfg["fed.strategy"],
        aggregation=None if cfg["fed.aggregation"] == "auto" else cfg["fed.aggregation"],
        clients_per_round=cfg["fed.clients_per_round"], hyper=hyper,
        hidden=tuple(int(h) for h in cfg["model.hidden"]), trials=cfg["fed.trials"],
        seed=cfg["seed"], score_mode=cfg["fed.score"],
        fallback=None if cfg["fed.fallback"] == "none" else cfg["fed.fallback"])


def data_root() -> str:
    return os.environ.get(DATA_DIR_ENV, os.path.join(os.getcwd(), "data"))


def _idx_dir(name: str) -> str:
    root = data_root()
    for candidate in (os.path.join(root, name), root):
        if any(os.path.exists(os.path.join(candidate, f"train-images-idx3-ubyte{ext}"))
               for ext in ("", ".gz")):
            return candidate
    raise FileNotFoundError(f"no {name} IDX files under {root} (set {DATA_DIR_ENV})")


def _cifar_dir() -> str:
    root = data_root()
    for candidate in (os.path.join(root, "cifar-10-batches-bin"), root):
        if os.path.exists(os.path.join(candidate, "test_batch.bin")):
            return candidate
    raise FileNotFoundError(f"no CIFAR-10 binary batches under {root} (set {DATA_DIR_ENV})")


_CACHE: dict = {}


def load_datasets(cfg: dict) -> tuple[Dataset, Dataset]:
    """Train/test pools for a config, stratified down to the requested sizes."""
    source = cfg["data.source"]
    key = (source, data_root(), cfg["data.train_size"], cfg["data.test_size"],
           cfg["data.subset_seed"], *(cfg[k] for k in sorted(cfg) if k.startswith("data.synthetic.")))
    if key in _CACHE:
        return _CACHE[key]
    if source in ("mnist", "fmnist"):
        directory = _idx_dir("mnist" if source == "mnist" else "fashion-mnist")
        train = fdata.load_idx_dir(directory, "train")
        test = fdata.load_idx_dir(directory, "t10k")
    elif source == "cifar10":
        directory = _cifar_dir()
        batches = sorted(f for f in os.listdir(directory) if f.startswith("data_batch_"))
        train = fdata.concat([fdata.load_cifar10_binary(os.path.join(directory, f)) for f in batches])
        test = fdata.load_cifar10_binary(os.path.join(directory, "test_batch.bin"))
    elif source == "synthetic":
        pool = fdata.synth_dataset(cfg["data.synthetic.classes"], cfg["data.synthetic.per_class"],
                                   cfg["data.synthetic.dim"], cfg["data.synthetic.spread"],
                                   cfg["data.synthetic.seed"])
        train, test = fdata.stratified_split(pool, cfg["data.test_size"], cfg["data.subset_seed"])
    else:
        raise ConfigError(f"unknown data.source {source!r}")
    seed = cfg["data.subset_seed"]
    if len(train) > cfg["data.train_size"]:
        train = train.subset(fdata.stratified_indices(train.labels, train.num_classes,
                                                      cfg["data.train_size"], seed))
    if len(test) > cfg["data.test_size"]:
        test = test.subset(fdata.stratified_indices(test.labels, test.num_classes,
                                                    cfg["data.test_size"], seed + 1))
    _CACHE[key] = (train, test)
    return train, test
