"""Backpropagation and mini-batch SGD with momentum for dense ReLU networks."""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, EmptyDataset, LossKindError
from .network import activations, forward_batch, predicted_labels


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mse"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size positive")


def _check_kind(dataset, kind):
    kind = LossKind(kind)
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    if kind is LossKind.CROSS_ENTROPY and dataset.kind != "labels":
        raise LossKindError("cross-entropy needs a labelled dataset")
    if kind is LossKind.MSE and dataset.kind != "scores":
        raise LossKindError("mean squared error needs a dataset of target scores")
    return kind


def _logits(Y, label_mode):
    # argmin-labelled tasks: the smallest score is the most likely class
    return -Y if label_mode == "argmin" else Y


def _loss_and_dy(Y, targets, kind, label_mode):
    """Mean loss over rows of ``Y`` and its gradient w.r.t. ``Y``."""
    n = Y.shape[0]
    if kind is LossKind.MSE:
        if targets.shape != Y.shape:
            raise DimensionError(f"targets have shape {targets.shape}, outputs {Y.shape}")
        diff = Y - targets
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    z = _logits(Y, label_mode)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    rows = np.arange(n)
    value = float(-np.mean(logp[rows, targets]))
    dz = ez / s
    dz[rows, targets] -= 1.0
    dz /= n
    return value, (-dz if label_mode == "argmin" else dz)


def loss(net, dataset, kind):
    kind = _check_kind(dataset, kind)
    Y = forward_batch(net, dataset.inputs)
    return _loss_and_dy(Y, dataset.targets, kind, dataset.label_mode)[0]


def param_vjp(net, X, dY):
    """Backpropagate ``dY`` (gradient w.r.t. raw outputs) to every parameter.

    Returns a list of ``(dW, db)`` pairs, one per layer. The ReLU derivative
    at 0 is 0.
    """
    z0, pre, post = activations(net, X)
    delta = np.atleast_2d(np.asarray(dY, dtype=np.float64))
    if net.normalization is not None:
        delta = delta * net.normalization.range[-1]
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            delta = delta * (pre[i] > 0)
        inp = post[i - 1] if i > 0 else z0
        grads[i] = (delta.T @ inp, delta.sum(axis=0))
        if i > 0:
            delta = delta @ layer.weights
    return grads


def gradient(net, batch, kind):
    """Gradient of the mean batch loss w.r.t. all weights and biases."""
    kind = _check_kind(batch, kind)
    Y = forward_batch(net, batch.inputs)
    _, dY = _loss_and_dy(Y, batch.targets, kind, batch.label_mode)
    return param_vjp(net, batch.inputs, dY)


def add_grads(a, b, scale=1.0):
    return [(wa + scale * wb, ba + scale * bb) for (wa, ba), (wb, bb) in zip(a, b)]


def flatten(grads):
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in grads])


def train(net, dataset, kind, config, penalty=None, callback=None):
    """Mini-batch SGD with momentum; returns a new network.

    ``penalty``, when given, must provide ``value_and_grad(net) -> (float,
    grads)``; its value and gradient are added to every mini-batch step so the
    optimised objective is ``loss + penalty``. ``callback(epoch, net)`` runs
    after each epoch.
    """
    kind = _check_kind(dataset, kind)
    rng = np.random.default_rng(config.seed)
    weights = [np.array(w) for w in net.weights]
    biases = [np.array(b) for b in net.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    current = net
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            X = dataset.inputs[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                Y = forward_batch(current, X)
                value, dY = _loss_and_dy(Y, dataset.targets[idx], kind, dataset.label_mode)
            grads = param_vjp(current, X, dY)
            if penalty is not None:
                pval, pgrads = penalty.value_and_grad(current)
                value += pval
                if pgrads is not None:
                    grads = add_grads(grads, pgrads)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            for i, (gw, gb) in enumerate(grads):
                vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * gw
                vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * gb
                weights[i] += vel_w[i]
                biases[i] += vel_b[i]
            current = net.with_params(weights, biases)
        if callback is not None:
            callback(epoch, current)
    return current


def accuracy(net, dataset):
    """Fraction of inputs whose predicted label matches the dataset label."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    pred = predicted_labels(forward_batch(net, dataset.inputs), dataset.label_mode)
    return float(np.mean(pred == dataset.labels()))


def mae(net, reference, sample):
    """Mean over inputs of the mean absolute output difference to ``reference``."""
    X = sample.inputs if hasattr(sample, "inputs") else np.atleast_2d(sample)
    if len(X) == 0:
        raise EmptyDataset("sample is empty")
    return float(np.mean(np.abs(forward_batch(net, X) - forward_batch(reference, X))))
