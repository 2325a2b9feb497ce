"""Datasets, binary ingestion and the non-IID partition scenarios.

A :class:`Dataset` is a pair of arrays (features scaled into [0, 1] and
integer labels).  Client shards never copy features; a
:class:`ClientDataset` holds indices into the shared pool, so realizing a
round for 100 clients is cheap and only selected clients ever touch the
feature matrix.
"""

from __future__ import annotations

import csv
import gzip
import io
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, NamedTuple, Sequence, Union

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072

CASE_IDS = ("1A", "1B", "2A", "2B", "3A", "3B", "IID", "MIXED")
SINGLE_LABEL_CASES = ("1A", "2A", "3A")
MINOR_LABEL_CASES = ("1B", "2B", "3B")
# 1x cases and the size-varying cases keep one shard per client for the whole run.
STATIC_CASES = ("1A", "1B", "IID", "MIXED")

Source = Union[bytes, bytearray, str, os.PathLike, BinaryIO]

# Independent RNG streams; mixed into every SeedSequence so that changing one
# draw never shifts another.
_STREAM_LABEL = 1
_STREAM_MINOR = 2
_STREAM_DRAW = 3
_STREAM_ORDER = 4
_STREAM_SIZE = 5
_STREAM_BIAS = 6


class DataError(Exception):
    """Base class for dataset ingestion and partitioning failures."""


class IdxFormatError(DataError):
    pass


class MagicMismatchError(IdxFormatError):
    pass


class TruncatedStreamError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class RecordLengthError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class InsufficientClassExamplesError(DataError):
    pass


class LabeledExample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError("one label per feature row required")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if not np.all(np.isfinite(features)):
            raise ValueError("non-finite feature value")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def examples(self) -> Iterator[LabeledExample]:
        for x, y in zip(self.features, self.labels):
            yield LabeledExample(x, int(y))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def class_pools(self) -> list[np.ndarray]:
        """Indices of every class, ascending."""
        return [np.flatnonzero(self.labels == k) for k in range(self.num_classes)]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


# --------------------------------------------------------------------------
# Binary ingestion
# --------------------------------------------------------------------------

def _read_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedStreamError("truncated stream: missing IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise MagicMismatchError(
            f"magic mismatch: expected 0x{expected_magic:08x}, got 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedStreamError("truncated stream: incomplete IDX dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedStreamError(
            f"truncated stream: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_source: Source, labels_source: Source,
             num_classes: int = 10) -> Dataset:
    """Decode an IDX image/label pair (plain or gzip) into a Dataset.

    Pixels are flattened row-major and scaled by 1/255.
    """
    images = _parse_idx(_read_bytes(images_source), IDX_IMAGES_MAGIC)
    labels = _parse_idx(_read_bytes(labels_source), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes)


def encode_idx_images(images: np.ndarray) -> bytes:
    """Encode a (count, rows, cols) uint8 array as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
    return header + images.tobytes(order="C")


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_cifar10_binary(source: Source, num_classes: int = 10) -> Dataset:
    raw = _read_bytes(source)
    if len(raw) == 0:
        raise EmptyDatasetError("empty dataset: zero-length CIFAR-10 source")
    if len(raw) % CIFAR_RECORD_BYTES:
        raise RecordLengthError(
            f"record length: {len(raw)} bytes is not a multiple of {CIFAR_RECORD_BYTES}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    features = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(features, records[:, 0].astype(np.int64), num_classes)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise EmptyDatasetError("nothing to concatenate")
    return Dataset(np.concatenate([d.features for d in datasets]),
                   np.concatenate([d.labels for d in datasets]),
                   max(d.num_classes for d in datasets))


def synth_dataset(num_classes: int, per_class: int, feature_dim: int,
                  spread: float, seed: int) -> Dataset:
    """Gaussian blobs around class-specific means, clipped into [0, 1].

    Examples are grouped by class in ascending order.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1 or feature_dim < 1:
        raise ValueError("per_class and feature_dim must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.2, 0.8, size=(num_classes, feature_dim))
    noise = rng.normal(0.0, 1.0, size=(num_classes, per_class, feature_dim))
    features = np.clip(means[:, None, :] + spread * noise, 0.0, 1.0)
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(features.reshape(-1, feature_dim), labels, num_classes)


def stratified_indices(labels: np.ndarray, num_classes: int, size: int,
                       seed: int) -> np.ndarray:
    """Indices of a class-balanced subset of ``size`` examples (sorted)."""
    rng = np.random.default_rng(seed)
    pools = [rng.permutation(np.flatnonzero(labels == k)) for k in range(num_classes)]
    quota = np.full(num_classes, size // num_classes)
    quota[rng.permutation(num_classes)[: size % num_classes]] += 1
    picked = [pool[: min(q, pool.size)] for pool, q in zip(pools, quota)]
    return np.sort(np.concatenate(picked))


def stratified_split(dataset: Dataset, test_size: int,
                     seed: int) -> tuple[Dataset, Dataset]:
    test_idx = stratified_indices(dataset.labels, dataset.num_classes, test_size, seed)
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)


def dataset_to_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([int(y), *(repr(float(v)) for v in x)])


def dataset_from_csv(path, num_classes: int | None = None) -> Dataset:
    labels, rows = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise EmptyDatasetError(f"no examples in {path}")
    labels = np.asarray(labels)
    return Dataset(np.asarray(rows), labels,
                   num_classes if num_classes is not None else int(labels.max()) + 1)


# --------------------------------------------------------------------------
# Partition scenarios
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseSpec:
    case_id: str
    per_client_total: int = 290
    major_count: int = 200
    minor_count: int = 90
    p_biased: float = 0.0
    n_range: tuple[int, int] = (30, 270)

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise ValueError(f"unknown case id {self.case_id!r}; expected one of {CASE_IDS}")
        if self.per_client_total < 1:
            raise ValueError("per_client_total must be positive")
        if self.case_id in MINOR_LABEL_CASES and (
                self.major_count + self.minor_count != self.per_client_total):
            raise ValueError("major_count + minor_count must equal per_client_total")
        if self.major_count < 1 or self.minor_count < 0:
            raise ValueError("major_count must be positive and minor_count non-negative")
        if not 0.0 <= self.p_biased <= 1.0:
            raise ValueError("p_biased must lie in [0, 1]")
        lo, hi = self.n_range
        if lo < 1 or hi < lo:
            raise ValueError("n_range must satisfy 1 <= min <= max")
        object.__setattr__(self, "n_range", (int(lo), int(hi)))

    @property
    def is_static(self) -> bool:
        return self.case_id in STATIC_CASES


@dataclass(frozen=True)
class PartitionPlan:
    case_spec: CaseSpec
    num_clients: int
    num_rounds: int
    seed: int = 0
    with_replacement: bool = True

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be positive")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be non-negative")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    dataset: Dataset = field(repr=False)
    indices: np.ndarray = field(repr=False)
    round: int | None = None  # None for shards that persist across rounds

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    @property
    def features(self) -> np.ndarray:
        return self.dataset.features[self.indices]


def _rng(plan: PartitionPlan, stream: int, T: int, client: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        [plan.seed & 0xFFFFFFFFFFFFFFFF, stream, T, client]))


def rotation_order(plan: PartitionPlan, num_classes: int) -> np.ndarray:
    """Seed-shuffled label order cycled by the 2A/2B round-robin."""
    return _rng(plan, _STREAM_ORDER, 0).permutation(num_classes)


def _label_counts(plan: PartitionPlan, num_classes: int, T: int, cid: int) -> np.ndarray:
    """How many examples of each class client ``cid`` holds at round ``T``."""
    spec = plan.case_spec
    case = spec.case_id
    key = 0 if spec.is_static else T
    counts = np.zeros(num_classes, dtype=np.int64)

    if case in ("IID", "MIXED"):
        lo, hi = spec.n_range
        size = int(_rng(plan, _STREAM_SIZE, key, cid).integers(lo, hi + 1))
        biased = case == "MIXED" and _rng(plan, _STREAM_BIAS, key, cid).random() < spec.p_biased
        if biased:
            counts[_rng(plan, _STREAM_LABEL, key, cid).integers(num_classes)] = size
        else:
            counts[:] = size // num_classes
            extra = _rng(plan, _STREAM_LABEL, key, cid).permutation(num_classes)
            counts[extra[: size % num_classes]] += 1
        return counts

    if case in ("2A", "2B"):
        order = rotation_order(plan, num_classes)
        major = int(order[(T - 1) % num_classes])
    else:
        major = int(_rng(plan, _STREAM_LABEL, key, cid).integers(num_classes))

    if case in SINGLE_LABEL_CASES:
        counts[major] = spec.per_client_total
        return counts

    counts[major] = spec.major_count
    if spec.minor_count and num_classes > 1:
        others = np.delete(np.arange(num_classes), major)
        minors = _rng(plan, _STREAM_MINOR, key, cid).choice(others, size=spec.minor_count)
        counts += np.bincount(minors, minlength=num_classes)
    return counts


def realize_round(plan: PartitionPlan, dataset: Dataset, T: int) -> list[ClientDataset]:
    """Client shards for global epoch ``T`` (1-based).

    A pure function of ``(plan, dataset, T)``.  Static cases ignore ``T``
    and return the same shards every round.
    """
    if not 1 <= T <= plan.num_rounds:
        raise ValueError(f"round {T} outside 1..{plan.num_rounds}")
    spec = plan.case_spec
    key = 0 if spec.is_static else T
    pools = dataset.class_pools()
    if not plan.with_replacement:
        # Each round consumes a fresh shuffled copy of every pool.
        pools = [_rng(plan, _STREAM_DRAW, key, 10**6 + k).permutation(p)
                 for k, p in enumerate(pools)]
        cursors = [0] * len(pools)

    shards = []
    for cid in range(plan.num_clients):
        counts = _label_counts(plan, dataset.num_classes, T, cid)
        draw_rng = _rng(plan, _STREAM_DRAW, key, cid)
        parts = []
        for k in np.flatnonzero(counts):
            need = int(counts[k])
            pool = pools[k]
            if plan.with_replacement:
                if pool.size == 0:
                    raise InsufficientClassExamplesError(
                        f"insufficient class examples: class {k} has none")
                parts.append(draw_rng.choice(pool, size=need, replace=True))
            else:
                if cursors[k] + need > pool.size:
                    raise InsufficientClassExamplesError(
                        f"insufficient class examples: class {k} needs "
                        f"{cursors[k] + need}, has {pool.size}")
                parts.append(pool[cursors[k]: cursors[k] + need])
                cursors[k] += need
        indices = np.concatenate(parts).astype(np.int64)
        shards.append(ClientDataset(cid, dataset, indices, None if spec.is_static else T))
    return shards


def shards_to_csv(shards: Sequence[ClientDataset], path) -> None:
    """One row per example under a ``client_id,round,label,f0,f1,...`` header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = shards[0].dataset.feature_dim if shards else 0
        writer.writerow(["client_id", "round", "label", *(f"f{j}" for j in range(dim))])
        for shard in shards:
            rnd = "static" if shard.round is None else shard.round
            for x, y in zip(shard.features, shard.labels):
                writer.writerow([shard.client_id, rnd, int(y), *(repr(float(v)) for v in x)])


def load_idx_dir(directory, prefix: str = "train") -> Dataset:
    """Load ``<prefix>-images-idx3-ubyte[.gz]`` / ``<prefix>-labels-idx1-ubyte[.gz]``."""
    directory = os.fspath(directory)
    found = {}
    for kind, stem in (("images", f"{prefix}-images-idx3-ubyte"),
                       ("labels", f"{prefix}-labels-idx1-ubyte")):
        for name in (stem, stem + ".gz"):
            path = os.path.join(directory, name)
            if os.path.exists(path):
                found[kind] = path
                break
        else:
            raise FileNotFoundError(os.path.join(directory, stem))
    return load_idx(found["images"], found["labels"])


def gzip_bytes(raw: bytes) -> bytes:
    buf = io.BytesIO()
    # mtime=0 keeps the archive byte-identical across regenerations.
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        gz.write(raw)
    return buf.getvalue()
