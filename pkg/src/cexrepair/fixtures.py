"""Desk-scale synthetic tasks and planted-violation networks.

Used by the test suite, the acceptance run and the benchmarks; nothing here
is needed by the repair pipeline itself.
"""

from dataclasses import dataclass

import numpy as np

from .satfn import f_sat_values
from .network import Dataset, Layer, Network, forward_batch, random_network
from .spec import Atom, Property
from .training import LossKind, TrainConfig, train


def grid(box, per_dim):
    """Regular grid with ``per_dim`` points per dimension (endpoints included)."""
    box = np.asarray(box, dtype=np.float64)
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def constant_network(values, input_dim=1):
    """Network whose output is ``values`` for every input."""
    values = np.asarray(values, dtype=np.float64)
    return Network((Layer(np.zeros((len(values), input_dim)), values, "linear"),))


def planted_violation(seed, input_dim=2, hidden=(16, 16), per_dim=1000, depth_frac=0.35):
    """Random net plus a property violated on a small region.

    The property is ``y1 <= t`` (even seeds) or ``y1 <= max(y2, y3)`` shifted
    by ``t`` (odd seeds, three outputs) on the unit box. ``t`` is placed so
    that the grid minimum of the satisfaction function is ``-depth_frac``
    times the output spread, which keeps the violation region small.
    Returns ``(net, prop, g_star)`` with ``g_star`` the grid minimum.
    """
    rng = np.random.default_rng(seed)
    multi = seed % 2 == 1
    dims = [input_dim, *hidden, 3 if multi else 1]
    net = random_network(dims, seed=int(rng.integers(2**31)))
    box = tuple((0.0, 1.0) for _ in range(input_dim))
    X = grid(box, per_dim)
    Y = forward_batch(net, X)
    if multi:
        score = Y[:, 1:].max(axis=1) - Y[:, 0]
    else:
        score = -Y[:, 0]
    spread = float(score.max() - score.min())
    depth = max(depth_frac * spread, 0.1)
    # satisfaction value is score + offset; put the grid minimum at -depth
    offset = -depth - float(score.min())
    if multi:
        clause = (Atom((-1.0, 1.0, 0.0), offset), Atom((-1.0, 0.0, 1.0), offset))
    else:
        clause = (Atom((-1.0,), offset),)
    prop = Property(box, (clause,), f"planted{seed}")
    g_star = float(f_sat_values(prop, Y).min())
    return net, prop, g_star


@dataclass
class DiskTask:
    """2-D binary task: label 1 inside a disc, 0 outside."""

    center: tuple = (0.5, 0.5)
    radius: float = 0.3

    def labels(self, X):
        c = np.asarray(self.center)
        return (np.sum((X - c) ** 2, axis=1) < self.radius ** 2).astype(np.int64)

    def sample(self, count, seed):
        X = np.random.default_rng(seed).random((count, 2))
        return Dataset(X, self.labels(X), "labels", "argmax")

    def unsafe_property(self, box=((0.775, 0.95), (0.4, 0.6))):
        """Class 0 must win on a box that clips the disc edge."""
        return Property(box, ((Atom((1.0, -1.0), 0.0),),), "class0-box")


def train_disk_classifier(seed, train_count=2000, test_count=4000, hidden=(16, 16), epochs=150):
    task = DiskTask()
    train_set = task.sample(train_count, seed)
    test_set = task.sample(test_count, seed + 10_000)
    net = random_network([2, *hidden, 2], seed=seed)
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, epochs=epochs, batch_size=32, seed=seed)
    net = train(net, train_set, LossKind.CROSS_ENTROPY, cfg)
    return task, net, train_set, test_set
