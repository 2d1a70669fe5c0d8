import math

import numpy as np
import pytest

from cexrepair.errors import DivergenceError, EmptyDataset, LossKindError
from cexrepair.network import Dataset, Layer, Network, forward_batch, random_network, uniform_sample
from cexrepair.repair import PenaltyEntry, PenaltyState
from cexrepair.search import CounterExample
from cexrepair.spec import Atom, Property
from cexrepair.training import (LossKind, TrainConfig, accuracy, flatten, gradient, loss, mae,
                                train)


def reference_loss(net, data, kind):
    total = 0.0
    for x, t in zip(data.inputs, data.targets):
        y = forward_batch(net, x[None])[0]
        if kind == "mse":
            total += sum((yi - ti) ** 2 for yi, ti in zip(y, t)) / len(y)
        else:
            z = [-v for v in y] if data.label_mode == "argmin" else list(y)
            total += -(z[t] - math.log(sum(math.exp(v) for v in z)))
    return total / len(data)


def test_mse_self_consistency():
    net = random_network([3, 5, 2], seed=1)
    d = uniform_sample(net, 40, [[0, 1]] * 3, seed=2)
    assert loss(net, d, LossKind.MSE) == 0.0


def test_cross_entropy_uniform_is_log_m():
    net = Network((Layer(np.zeros((4, 2)), np.zeros(4), "linear"),))
    d = Dataset(np.zeros((3, 2)), [0, 1, 3], "labels")
    assert loss(net, d, "cross_entropy") == pytest.approx(math.log(4), abs=1e-12)


@pytest.mark.parametrize("mode", ["argmax", "argmin"])
def test_loss_matches_reference(mode, rng):
    net = random_network([3, 6, 3], seed=5)
    X = rng.normal(size=(25, 3))
    labels = Dataset(X, rng.integers(0, 3, 25), "labels", mode)
    scores = Dataset(X, rng.normal(size=(25, 3)), "scores", mode)
    assert loss(net, labels, "cross_entropy") == pytest.approx(reference_loss(net, labels, "ce"), rel=1e-12)
    assert loss(net, scores, "mse") == pytest.approx(reference_loss(net, scores, "mse"), rel=1e-12)


def test_kind_mismatch():
    net = random_network([2, 2], seed=0)
    with pytest.raises(LossKindError):
        loss(net, Dataset(np.zeros((2, 2)), [0, 1], "labels"), "mse")
    with pytest.raises(LossKindError):
        loss(net, Dataset(np.zeros((2, 2)), np.zeros((2, 2)), "scores"), "cross_entropy")


def test_zero_gradient():
    net = Network((Layer(np.zeros((2, 3)), np.zeros(2), "linear"),))
    d = Dataset(np.ones((4, 3)), np.zeros((4, 2)), "scores")
    assert np.all(flatten(gradient(net, d, "mse")) == 0)


def _perturbed(net, layer, kind, idx, h):
    weights = [np.array(w) for w in net.weights]
    biases = [np.array(b) for b in net.biases]
    target = weights[layer] if kind == "w" else biases[layer]
    target[idx] += h
    return net.with_params(weights, biases)


def finite_difference_check(net, fn, grads, rng, count=20, h=1e-5, tol=1e-4):
    checked = 0
    for _ in range(count * 5):
        layer = int(rng.integers(len(net.layers)))
        kind = "w" if rng.random() < 0.7 else "b"
        shape = net.weights[layer].shape if kind == "w" else net.biases[layer].shape
        idx = tuple(int(rng.integers(s)) for s in shape)
        fd = (fn(_perturbed(net, layer, kind, idx, h)) - fn(_perturbed(net, layer, kind, idx, -h))) / (2 * h)
        an = grads[layer][0 if kind == "w" else 1][idx]
        assert abs(fd - an) <= tol * max(1.0, abs(fd), abs(an)), (layer, kind, idx, fd, an)
        checked += 1
        if checked == count:
            break
    assert checked == count


def _non_degenerate(net, X, eps=1e-3):
    from cexrepair.network import activations
    _, pre, _ = activations(net, X)
    return all(np.min(np.abs(p)) > eps for p, l in zip(pre, net.layers) if l.activation == "relu")


@pytest.mark.parametrize("kind", ["mse", "cross_entropy"])
def test_gradient_finite_differences(kind, rng):
    for seed in range(20):
        net = random_network([3, 7, 6, 3], seed=seed)
        X = rng.normal(size=(8, 3))
        if _non_degenerate(net, X):
            break
    if kind == "mse":
        d = Dataset(X, rng.normal(size=(8, 3)), "scores")
    else:
        d = Dataset(X, rng.integers(0, 3, 8), "labels")
    finite_difference_check(net, lambda n: loss(n, d, kind), gradient(net, d, kind), rng)


def test_cross_entropy_saturated_gradient():
    net = Network((Layer(np.zeros((3, 1)), [50.0, 0.0, 0.0], "linear"),))
    d = Dataset([[0.0]], [0], "labels")
    assert np.max(np.abs(flatten(gradient(net, d, "cross_entropy")))) < 1e-20


def test_train_zero_epochs_and_purity():
    net = random_network([2, 4, 2], seed=0)
    d = uniform_sample(net, 20, [[0, 1]] * 2, seed=0)
    out = train(net, d, "mse", TrainConfig(epochs=0))
    assert out == net
    before = [w.copy() for w in net.weights]
    a = train(net, d, "mse", TrainConfig(epochs=2, seed=3))
    b = train(net, d, "mse", TrainConfig(epochs=2, seed=3))
    assert a == b
    assert all(np.array_equal(w, v) for w, v in zip(before, net.weights))


def test_linear_regression_reaches_least_squares(rng):
    A = rng.normal(size=(2, 3))
    c = rng.normal(size=2)
    X = rng.uniform(-1, 1, size=(256, 3))
    Y = X @ A.T + c
    data = Dataset(X, Y, "scores")
    net = Network((Layer(np.zeros((2, 3)), np.zeros(2), "linear"),))
    start = loss(net, data, "mse")
    out = train(net, data, "mse", TrainConfig(learning_rate=0.01, epochs=200, seed=1))
    assert loss(out, data, "mse") <= 1e-4
    assert loss(out, data, "mse") <= start
    # closed-form least squares oracle
    design = np.hstack([X, np.ones((len(X), 1))])
    sol, *_ = np.linalg.lstsq(design, Y, rcond=None)
    np.testing.assert_allclose(out.weights[0], sol[:3].T, atol=1e-2)
    np.testing.assert_allclose(out.biases[0], sol[3], atol=1e-2)


def test_divergence_error():
    net = Network((Layer(np.ones((1, 1)), [0.0], "linear"),))
    d = Dataset(np.full((4, 1), 1e3), np.zeros((4, 1)), "scores")
    with pytest.raises(DivergenceError) as info:
        train(net, d, "mse", TrainConfig(learning_rate=10.0, epochs=50))
    assert info.value.epoch >= 0


def test_penalty_decreases_violation():
    from cexrepair.fixtures import train_disk_classifier
    from cexrepair.satfn import f_sat
    task, net, train_set, _ = train_disk_classifier(0, epochs=60)
    prop = Property(((0.5, 0.5), (0.5, 0.5)), ((Atom((1.0, -1.0)),),), "centre is class 0")
    x = np.array([0.5, 0.5])
    assert f_sat(prop, net, x).value < 0
    state = PenaltyState([PenaltyEntry(CounterExample(x, 0, f_sat(prop, net, x).value), prop, 1.0)])
    cplus = [state.penalty(net)]
    train(net, train_set, "cross_entropy", TrainConfig(epochs=15, seed=0), penalty=state,
          callback=lambda e, n: cplus.append(state.penalty(n)))
    drops = [b < a for a, b in zip(cplus, cplus[1:]) if a > 0]
    assert drops and sum(drops) >= 0.8 * len(drops)


def test_accuracy_and_mae():
    net = random_network([2, 4, 3], seed=2)
    d = uniform_sample(net, 30, [[0, 1]] * 2, seed=0)
    assert accuracy(net, d) == 1.0
    assert mae(net, net, d) == 0.0
    const = Network((Layer(np.zeros((2, 2)), [1.0, 0.0], "linear"),))
    labels = Dataset(np.zeros((4, 2)), [0, 1, 0, 1], "labels")
    assert accuracy(const, labels) == 0.5
    other = Network((Layer(np.zeros((2, 2)), [0.5, 2.0], "linear"),))
    # |1 - 0.5| and |0 - 2| averaged: 1.25
    assert mae(const, other, labels) == 1.25
    with pytest.raises(EmptyDataset):
        accuracy(net, Dataset(np.zeros((0, 2)), np.zeros((0, 3)), "scores"))
