import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import finite_difference_grads, max_relative_error
from fedsim.data import synth_dataset
from fedsim.model import (AdamState, ArchitectureSpec, ModelParams, TrainingHyper, adam_step,
                          backward, evaluate, forward, init_params, load_checkpoint, local_train,
                          loss_and_grads, loss_ce, params_from_bytes, params_to_bytes,
                          save_checkpoint, sgd_step, zeros_like)


def test_init_shapes_and_determinism():
    arch = ArchitectureSpec((4, 3, 2))
    a = init_params(arch, seed=1)
    assert a.shapes == [((4, 3), (3,)), ((3, 2), (2,))]
    assert a.equal(init_params(arch, seed=1))
    b = init_params(arch, seed=2)
    assert a.shapes == b.shapes and not a.equal(b)
    assert all(np.all(bias == 0) for _, bias in a.layers)


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchitectureSpec((4,))
    with pytest.raises(ValueError):
        ArchitectureSpec((4, 2), activation="gelu")


def test_forward_zero_params_uniform():
    params = zeros_like(init_params(ArchitectureSpec((5, 7, 10)), 0))
    probs = forward(params, np.random.default_rng(0).random((3, 5)))
    np.testing.assert_allclose(probs, 0.1)


@settings(max_examples=50)
@given(arrays(np.float64, (6, 4), elements=st.floats(-1e3, 1e3)), st.integers(0, 1000))
def test_forward_rows_sum_to_one(X, seed):
    probs = forward(init_params(ArchitectureSpec((4, 5, 3)), seed), X)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_forward_batch_consistency():
    params = init_params(ArchitectureSpec((4, 6, 3)), 3)
    X = np.random.default_rng(1).random((2, 4))
    np.testing.assert_allclose(forward(params, X[:1])[0], forward(params, X)[0], rtol=1e-12)


def test_forward_dimension_mismatch():
    params = init_params(ArchitectureSpec((4, 3)), 0)
    with pytest.raises(ValueError):
        forward(params, np.zeros((2, 5)))


def test_loss_examples():
    assert loss_ce(np.full((3, 10), 0.1), [0, 4, 9]) == pytest.approx(math.log(10))
    assert loss_ce(np.eye(3), [0, 1, 2]) == pytest.approx(0.0, abs=1e-15)
    assert loss_ce(np.array([[0.5, 0.5]]), [0]) == pytest.approx(0.693147, abs=1e-6)
    assert loss_ce(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))


@pytest.mark.parametrize("activation", ["relu", "tanh", "sigmoid"])
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(5)
    params = init_params(ArchitectureSpec((5, 4, 3), activation), 11)
    params = params.map(lambda a: a + 0.1 * rng.normal(size=a.shape))
    X = rng.random((4, 5))
    y = np.array([0, 2, 1, 2])
    assert max_relative_error(backward(params, X, y), finite_difference_grads(params, X, y)) < 1e-4


def test_final_bias_gradient_identity():
    params = zeros_like(init_params(ArchitectureSpec((3, 4)), 0))
    X = np.random.default_rng(2).random((6, 3))
    y = np.array([0, 1, 2, 3, 3, 0])
    probs = forward(params, X)
    onehot = np.eye(4)[y]
    np.testing.assert_allclose(backward(params, X, y).layers[-1][1],
                               (probs - onehot).mean(axis=0), atol=1e-15)


def test_backward_duplicate_and_permutation_invariance():
    rng = np.random.default_rng(8)
    params = init_params(ArchitectureSpec((4, 6, 3)), 4)
    X = rng.random((5, 4))
    y = np.array([0, 1, 2, 1, 0])
    g = backward(params, X, y)
    assert g.allclose(backward(params, np.vstack([X, X]), np.concatenate([y, y])), rtol=1e-12, atol=1e-15)
    perm = rng.permutation(5)
    assert g.allclose(backward(params, X[perm], y[perm]), rtol=1e-12, atol=1e-15)


def test_sgd_step():
    params = init_params(ArchitectureSpec((3, 2)), 0)
    ones = params.map(np.ones_like)
    assert sgd_step(params, ones, 0.0).equal(params)
    stepped = sgd_step(ones, ones, 0.1)
    assert all(np.allclose(a, 0.9) for a in stepped.arrays())
    g2 = params.map(lambda a: 2 * np.ones_like(a))
    two = sgd_step(sgd_step(params, ones, 0.1), g2, 0.1)
    assert two.allclose(sgd_step(params, ones.zip_with(g2, np.add), 0.1), atol=1e-15)
    with pytest.raises(ValueError):
        sgd_step(params, init_params(ArchitectureSpec((3, 3)), 0), 0.1)


def test_sgd_step_decreases_loss():
    ds = synth_dataset(4, 20, 6, 0.1, seed=3)
    params = init_params(ArchitectureSpec((6, 8, 4)), 2)
    loss0, grads = loss_and_grads(params, ds.features, ds.labels)
    loss1, _ = loss_and_grads(sgd_step(params, grads, 1e-3), ds.features, ds.labels)
    assert loss1 < loss0


def test_adam_step():
    hyper = TrainingHyper(lr=0.01)
    params = init_params(ArchitectureSpec((3, 2)), 0)
    same, state = adam_step(params, zeros_like(params), None, hyper)
    assert same.equal(params) and state.step == 1

    g = params.map(lambda a: np.full_like(a, -0.3))
    p, s = params, None
    for _ in range(200):
        prev = p
        p, s = adam_step(p, g, s, hyper)
    # Constant gradient: the per-step move tends to lr * sign(g).
    for a, b in zip(p.arrays(), prev.arrays()):
        np.testing.assert_allclose(a - b, 0.01, rtol=1e-6)

    fresh = AdamState.fresh(params)
    a1, s1 = adam_step(params, g, fresh, hyper)
    a2, s2 = adam_step(params, g, fresh, hyper)
    assert a1.equal(a2) and s1.m.equal(s2.m) and s1.v.equal(s2.v)


def test_local_train():
    ds = synth_dataset(3, 40, 5, 0.1, seed=9)
    params = init_params(ArchitectureSpec((5, 8, 3)), 1)
    snapshot = [a.copy() for a in params.arrays()]
    assert local_train(params, ds.features, ds.labels, TrainingHyper(epochs=0)) is params
    hyper = TrainingHyper(epochs=4, seed=3)
    trained = local_train(params, ds.features, ds.labels, hyper)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), snapshot))
    assert trained.equal(local_train(params, ds.features, ds.labels, hyper))
    before = evaluate(params, ds.features, ds.labels)[1]
    after = evaluate(trained, ds.features, ds.labels)[1]
    assert after < before
    sgd = local_train(params, ds.features, ds.labels, TrainingHyper(optimizer="sgd", epochs=4))
    assert evaluate(sgd, ds.features, ds.labels)[1] < before


def test_hyper_defaults():
    assert TrainingHyper().learning_rate == 1e-3
    assert TrainingHyper(optimizer="sgd").learning_rate == 0.05
    with pytest.raises(ValueError):
        TrainingHyper(lr=0)
    with pytest.raises(ValueError):
        TrainingHyper(optimizer="rmsprop")


def test_evaluate():
    ds = synth_dataset(10, 10, 4, 0.1, seed=1)
    params = zeros_like(init_params(ArchitectureSpec((4, 10)), 0))
    acc, loss = evaluate(params, ds.features, ds.labels)
    assert acc == pytest.approx(0.1)
    assert loss == pytest.approx(loss_ce(forward(params, ds.features), ds.labels))

    # A memorizer: one-hot inputs mapped straight to their labels.
    X = np.eye(4)
    y = np.array([2, 0, 3, 1])
    w = np.zeros((4, 4))
    w[np.arange(4), y] = 10.0
    memo = ModelParams(((w, np.zeros(4)),))
    assert evaluate(memo, X, y)[0] == 1.0


def test_checkpoint_roundtrip(tmp_path):
    arch = ArchitectureSpec((4, 3, 2))
    params = init_params(arch, 6)
    raw = params_to_bytes(params)
    assert len(raw) == 8 * (12 + 3 + 6 + 2)
    np.testing.assert_array_equal(np.frombuffer(raw[:8], "<f8"), params.layers[0][0][0, :1])
    assert params_from_bytes(raw, arch).equal(params)
    save_checkpoint(params, tmp_path / "m.bin")
    assert load_checkpoint(tmp_path / "m.bin", arch).equal(params)
    with pytest.raises(ValueError):
        params_from_bytes(raw[:-8], arch)
