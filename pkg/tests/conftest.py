import os
from pathlib import Path

import numpy as np
import pytest

from fedsim.model import ModelParams, forward, loss_ce

REPO = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("FEDSIM_DATA_DIR", REPO / "data")) / "mnist"


def finite_difference_grads(params: ModelParams, X, y, step=1e-5) -> ModelParams:
    """Central differences of loss_ce(forward(.)) one coordinate at a time."""
    layers = [(w.copy(), b.copy()) for w, b in params.layers]
    out = []
    for li in range(len(layers)):
        grads = []
        for ai in range(2):
            arr = layers[li][ai]
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = loss_ce(forward(ModelParams(tuple(layers), params.activation), X), y)
                arr[idx] = orig - step
                down = loss_ce(forward(ModelParams(tuple(layers), params.activation), X), y)
                arr[idx] = orig
                g[idx] = (up - down) / (2 * step)
            grads.append(g)
        out.append(tuple(grads))
    return ModelParams(tuple(out), params.activation)


def max_relative_error(a: ModelParams, b: ModelParams, floor=1e-6) -> float:
    worst = 0.0
    for x, y in zip(a.arrays(), b.arrays()):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


@pytest.fixture(scope="session")
def mnist():
    from fedsim.data import load_idx_dir
    if not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.fail(f"MNIST subset missing under {MNIST_DIR}; run scripts/make_mnist_subset.py")
    return load_idx_dir(MNIST_DIR, "train"), load_idx_dir(MNIST_DIR, "t10k")


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; all verdicts print in the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
