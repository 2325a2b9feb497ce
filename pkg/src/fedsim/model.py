"""Dense softmax classifier with hand-written backpropagation.

Parameters are value-semantic: every operation returns fresh arrays and
never writes into its inputs, so a global model can be handed to many
clients at once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

PROB_FLOOR = 1e-12
ACTIVATIONS = ("relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class ArchitectureSpec:
    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("need at least input and output widths, all positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", widths)

    @property
    def feature_dim(self) -> int:
        return self.widths[0]

    @property
    def num_classes(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Ordered ``(weight, bias)`` pairs; weight has shape (fan_in, fan_out)."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((np.asarray(w, dtype=np.float64),
                                                  np.asarray(b, dtype=np.float64))
                                                 for w, b in self.layers))

    @property
    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(w.shape, b.shape) for w, b in self.layers]

    def arrays(self) -> Iterator[np.ndarray]:
        for w, b in self.layers:
            yield w
            yield b

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ModelParams":
        return replace(self, layers=tuple((fn(w), fn(b)) for w, b in self.layers))

    def zip_with(self, other: "ModelParams",
                 fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ModelParams":
        check_same_shapes(self, other)
        return replace(self, layers=tuple((fn(w1, w2), fn(b1, b2)) for (w1, b1), (w2, b2)
                                          in zip(self.layers, other.layers)))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return self.shapes == other.shapes and all(
            np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "ModelParams") -> bool:
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def check_same_shapes(a: ModelParams, b: ModelParams) -> None:
    if a.shapes != b.shapes:
        raise ValueError(f"parameter shape mismatch: {a.shapes} vs {b.shapes}")


def zeros_like(params: ModelParams) -> ModelParams:
    return params.map(np.zeros_like)


def init_params(arch: ArchitectureSpec, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ModelParams(tuple(layers), arch.activation)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ModelParams, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    fan_in = params.layers[0][0].shape[0]
    if X.shape[1] != fan_in:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model input {fan_in}")
    pre, post = [], [X]
    a = X
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = a @ w + b
        pre.append(z)
        a = softmax(z) if i == last else _act(params.activation, z)
        post.append(a)
    return pre, post


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per example."""
    return _forward_cache(params, X)[1][-1]


def loss_ce(probs: np.ndarray, labels) -> float:
    """Mean categorical cross-entropy (natural log), probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def loss_and_grads(params: ModelParams, X: np.ndarray, y) -> tuple[float, ModelParams]:
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty batch")
    pre, post = _forward_cache(params, X)
    probs = post[-1]
    loss = loss_ce(probs, y)

    delta = probs.copy()
    delta[np.arange(y.shape[0]), y] -= 1.0
    delta /= y.shape[0]
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w = params.layers[i][0]
        grads[i] = (post[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ w.T) * _act_grad(params.activation, pre[i - 1], post[i])
    return loss, ModelParams(tuple(grads), params.activation)


def backward(params: ModelParams, X: np.ndarray, y) -> ModelParams:
    """Gradient of ``loss_ce(forward(params, X), y)`` with respect to every parameter."""
    return loss_and_grads(params, X, y)[1]


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    return params.zip_with(grads, lambda p, g: p - lr * g)


@dataclass(frozen=True)
class TrainingHyper:
    lr: float | None = None  # None picks the optimizer default
    epochs: int = 4
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.optimizer == "adam" else 0.05


@dataclass(frozen=True, eq=False)
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), 0)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState | None,
              hyper: TrainingHyper) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update."""
    check_same_shapes(params, grads)
    if state is None:
        state = AdamState.fresh(params)
    b1, b2, lr = hyper.beta1, hyper.beta2, hyper.learning_rate
    step = state.step + 1
    m = state.m.zip_with(grads, lambda m_, g: b1 * m_ + (1 - b1) * g)
    v = state.v.zip_with(grads, lambda v_, g: b2 * v_ + (1 - b2) * g * g)
    c1, c2 = 1 - b1 ** step, 1 - b2 ** step
    layers = []
    for (w, b), (mw, mb), (vw, vb) in zip(params.layers, m.layers, v.layers):
        layers.append((w - lr * (mw / c1) / (np.sqrt(vw / c2) + hyper.eps),
                       b - lr * (mb / c1) / (np.sqrt(vb / c2) + hyper.eps)))
    return ModelParams(tuple(layers), params.activation), AdamState(m, v, step)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def local_train(params: ModelParams, X: np.ndarray, y, hyper: TrainingHyper,
                seed: int | None = None) -> ModelParams:
    """``hyper.epochs`` passes of shuffled mini-batch updates from ``params``.

    The optimizer state starts fresh.  ``seed`` overrides ``hyper.seed`` for
    the shuffle so callers can give every client its own stream.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot train on an empty shard")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    state = None
    lr = hyper.learning_rate
    for _ in range(hyper.epochs):
        for idx in minibatches(y.shape[0], hyper.batch_size, rng):
            _, grads = loss_and_grads(params, X[idx], y[idx])
            if hyper.optimizer == "adam":
                params, state = adam_step(params, grads, state, hyper)
            else:
                params = sgd_step(params, grads, lr)
    return params


def evaluate(params: ModelParams, X: np.ndarray, y, chunk: int = 4096) -> tuple[float, float]:
    """(accuracy, mean cross-entropy); argmax ties go to the lowest class id."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    loss_sum = 0.0
    for start in range(0, y.shape[0], chunk):
        probs = forward(params, X[start:start + chunk])
        labels = y[start:start + chunk]
        correct += int(np.sum(np.argmax(probs, axis=1) == labels))
        loss_sum += loss_ce(probs, labels) * labels.shape[0]
    return correct / y.shape[0], loss_sum / y.shape[0]


def params_to_bytes(params: ModelParams) -> bytes:
    """Layer-major (W then b), row-major, little-endian float64."""
    return b"".join(a.astype("<f8").tobytes(order="C") for a in params.arrays())


def params_from_bytes(raw: bytes, arch: ArchitectureSpec) -> ModelParams:
    flat = np.frombuffer(raw, dtype="<f8")
    layers, pos = [], 0
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        end = pos + fan_in * fan_out
        w = flat[pos:end].reshape(fan_in, fan_out)
        b = flat[end:end + fan_out]
        pos = end + fan_out
        layers.append((w.copy(), b.copy()))
    if pos != flat.size:
        raise ValueError(f"checkpoint holds {flat.size} values, architecture needs {pos}")
    return ModelParams(tuple(layers), arch.activation)


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_checkpoint(path, arch: ArchitectureSpec) -> ModelParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read(), arch)
