"""Dense ReLU networks: evaluation, NNet/JSON serialization, surrogate data."""

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DimensionError, InvalidBox, ParseError

ACTIVATIONS = ("relu", "linear")


def _frozen(a, ndim):
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by an activation: ``act(W z + b)``."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, 2))
        object.__setattr__(self, "bias", _frozen(self.bias, 1))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Layer)
            and self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True, eq=False)
class Normalization:
    """NNet-style input clipping/scaling and output de-scaling.

    ``mean`` and ``range`` carry one entry per input plus a final entry used
    for every output.
    """

    input_min: np.ndarray
    input_max: np.ndarray
    mean: np.ndarray
    range: np.ndarray

    def __post_init__(self):
        for name in ("input_min", "input_max", "mean", "range"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))
        n = self.input_min.shape[0]
        if self.input_max.shape[0] != n or self.mean.shape[0] != n + 1 or self.range.shape[0] != n + 1:
            raise DimensionError("normalization vectors have inconsistent lengths")
        if np.any(self.input_min > self.input_max):
            raise ValueError("input_min must not exceed input_max")
        if not np.all(self.range > 0):
            raise ValueError("normalization ranges must be strictly positive")

    @classmethod
    def identity(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf), np.zeros(n + 1), np.ones(n + 1))

    def normalize(self, X):
        X = np.clip(X, self.input_min, self.input_max)
        return (X - self.mean[:-1]) / self.range[:-1]

    def denormalize(self, Z):
        return Z * self.range[-1] + self.mean[-1]

    def clip_mask(self, X):
        """1.0 where the input clip is the identity (inclusive), else 0.0."""
        return ((X >= self.input_min) & (X <= self.input_max)).astype(np.float64)

    def __eq__(self, other):
        return isinstance(other, Normalization) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("input_min", "input_max", "mean", "range")
        )


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple
    normalization: Normalization = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer expects {nxt.in_dim} inputs but previous layer has {prev.out_dim} units"
                )
        object.__setattr__(self, "layers", layers)
        if self.normalization is not None and self.normalization.input_min.shape[0] != layers[0].in_dim:
            raise DimensionError("normalization length does not match input_dim")

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def weights(self):
        return [layer.weights for layer in self.layers]

    @property
    def biases(self):
        return [layer.bias for layer in self.layers]

    @cached_property
    def packed(self):
        return _kernels.pack(
            self.weights, self.biases, [layer.activation == "relu" for layer in self.layers]
        )

    def with_params(self, weights, biases):
        """Same architecture and normalization, new parameters."""
        layers = [Layer(w, b, layer.activation) for w, b, layer in zip(weights, biases, self.layers)]
        return Network(tuple(layers), self.normalization)

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.layers == other.layers
            and self.normalization == other.normalization
        )

    def __repr__(self):
        dims = [self.input_dim] + [layer.out_dim for layer in self.layers]
        norm = ", normalized" if self.normalization is not None else ""
        return f"Network({'x'.join(map(str, dims))}{norm})"


@dataclass
class Dataset:
    """Inputs with either integer labels or target score vectors.

    ``label_mode`` says whether the predicted label of a score vector is its
    argmax (classifiers) or argmin (ACAS Xu advisories).
    """

    inputs: np.ndarray
    targets: np.ndarray
    kind: str = "scores"
    label_mode: str = "argmax"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.kind == "labels":
            self.targets = np.asarray(self.targets, dtype=np.int64).ravel()
        elif self.kind == "scores":
            self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.label_mode not in ("argmax", "argmin"):
            raise ValueError(f"unknown label mode {self.label_mode!r}")
        if len(self.inputs) != len(self.targets):
            raise DimensionError("inputs and targets differ in length")

    def __len__(self):
        return len(self.inputs)

    def labels(self):
        if self.kind == "labels":
            return self.targets
        return predicted_labels(self.targets, self.label_mode)

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx], self.kind, self.label_mode)


def predicted_labels(scores, label_mode="argmax"):
    scores = np.atleast_2d(scores)
    return np.argmin(scores, axis=1) if label_mode == "argmin" else np.argmax(scores, axis=1)


# ------------------------------------------------------------------ evaluation

def _check_inputs(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.input_dim:
        raise DimensionError(f"expected inputs of dimension {net.input_dim}, got {X.shape[-1]}")
    return X


def forward_batch(net, X):
    """Raw output scores for each row of ``X``."""
    X = np.atleast_2d(_check_inputs(net, X))
    if net.normalization is not None:
        X = net.normalization.normalize(X)
    Y = _kernels.forward_batch(*net.packed, X)
    if net.normalization is not None:
        Y = net.normalization.denormalize(Y)
    return Y


def forward(net, x):
    x = _check_inputs(net, x)
    if x.ndim != 1:
        raise DimensionError("forward expects a single input vector")
    return forward_batch(net, x[None, :])[0]


def activations(net, X):
    """Pre-activations and post-activations of every layer (normalized units).

    Returns ``(z0, pre, post)`` where ``z0`` is the normalized input batch and
    ``pre[i]``/``post[i]`` belong to layer ``i``; outputs are not de-scaled.
    """
    X = np.atleast_2d(_check_inputs(net, X))
    z = net.normalization.normalize(X) if net.normalization is not None else X
    z0 = z
    pre, post = [], []
    for layer in net.layers:
        a = z @ layer.weights.T + layer.bias
        z = np.maximum(a, 0.0) if layer.activation == "relu" else a
        pre.append(a)
        post.append(z)
    return z0, pre, post


def input_vjp(net, x, dy):
    """Vector-Jacobian product ``dy^T dN/dx`` at a single point.

    ReLU derivative at 0 is taken as 0; the input clip contributes 1 inside
    ``[input_min, input_max]`` (inclusive) and 0 outside.
    """
    x = _check_inputs(net, x)
    _, pre, _ = activations(net, x[None, :])
    g = np.asarray(dy, dtype=np.float64)
    if net.normalization is not None:
        g = g * net.normalization.range[-1]
    for layer, a in zip(reversed(net.layers), reversed(pre)):
        if layer.activation == "relu":
            g = g * (a[0] > 0)
        g = layer.weights.T @ g
    if net.normalization is not None:
        g = g / net.normalization.range[:-1] * net.normalization.clip_mask(x)
    return g


# ----------------------------------------------------------------------- NNet

def parse_nnet(text):
    """Parse NNet text. Hidden layers are ReLU, the last layer is linear."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("//"):
            continue
        lines.append((lineno, s))
    pos = 0

    def next_values(what):
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise ParseError(f"unexpected end of file while reading {what}", last + 1)
        lineno, s = lines[pos]
        pos += 1
        try:
            vals = [float(tok) for tok in s.split(",") if tok.strip()]
        except ValueError:
            raise ParseError(f"non-numeric entry in {what}", lineno) from None
        return lineno, vals

    lineno, header = next_values("header")
    if len(header) < 3 or any(v != int(v) or v <= 0 for v in header[:3]):
        raise ParseError("header must be numLayers,inputSize,outputSize,maxLayerSize", lineno)
    num_layers, n_in, n_out = (int(v) for v in header[:3])
    lineno, sizes = next_values("layer sizes")
    if len(sizes) != num_layers + 1 or any(v != int(v) or v <= 0 for v in sizes):
        raise ParseError(f"expected {num_layers + 1} layer sizes", lineno)
    sizes = [int(v) for v in sizes]
    if sizes[0] != n_in or sizes[-1] != n_out:
        raise ParseError("layer sizes disagree with header input/output sizes", lineno)
    next_values("flag line")
    normal = {}
    for key, length in (("input_min", n_in), ("input_max", n_in), ("mean", n_in + 1), ("range", n_in + 1)):
        lineno, vals = next_values(key)
        if len(vals) != length:
            raise ParseError(f"{key} needs {length} entries, got {len(vals)}", lineno)
        normal[key] = vals
    try:
        normalization = Normalization(**normal)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None

    layers = []
    for i in range(num_layers):
        nin, nout = sizes[i], sizes[i + 1]
        rows = []
        for r in range(nout):
            lineno, vals = next_values(f"layer {i + 1} weights")
            if len(vals) != nin:
                raise ParseError(
                    f"layer {i + 1} weight row {r + 1} has {len(vals)} entries, expected {nin}", lineno
                )
            rows.append(vals)
        bias = []
        for r in range(nout):
            lineno, vals = next_values(f"layer {i + 1} biases")
            if len(vals) != 1:
                raise ParseError(
                    f"layer {i + 1} bias entry {r + 1} has {len(vals)} values, expected 1", lineno
                )
            bias.append(vals[0])
        act = "linear" if i == num_layers - 1 else "relu"
        layers.append(Layer(np.array(rows), np.array(bias), act))
    if pos != len(lines):
        raise ParseError("trailing data after last layer", lines[pos][0])
    return Network(tuple(layers), normalization)


def load_nnet(path):
    return parse_nnet(Path(path).read_text())


def format_nnet(net):
    """NNet text for ``net``; requires ReLU hidden layers and a linear output."""
    for i, layer in enumerate(net.layers):
        expected = "linear" if i == len(net.layers) - 1 else "relu"
        if layer.activation != expected:
            raise ValueError("NNet only stores ReLU hidden layers with a linear output layer")
    norm = net.normalization or Normalization.identity(net.input_dim)
    sizes = [net.input_dim] + [layer.out_dim for layer in net.layers]

    def row(vals):
        return ",".join(repr(float(v)) for v in vals) + ","

    out = ["// dense ReLU network",
           f"{len(net.layers)},{net.input_dim},{net.output_dim},{max(sizes)},",
           ",".join(map(str, sizes)) + ",",
           "0,",
           row(norm.input_min), row(norm.input_max), row(norm.mean), row(norm.range)]
    for layer in net.layers:
        out.extend(row(w) for w in layer.weights)
        out.extend(row([b]) for b in layer.bias)
    return "\n".join(out) + "\n"


def save_nnet(net, path):
    Path(path).write_text(format_nnet(net))


# ----------------------------------------------------------------------- JSON

def _floats(vals):
    return [float(v) for v in vals]


def to_dict(net):
    norm = net.normalization
    return {
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layers": [
            {"weights": [_floats(r) for r in layer.weights], "bias": _floats(layer.bias),
             "activation": layer.activation}
            for layer in net.layers
        ],
        "normalization": None if norm is None else {
            "input_min": _floats(norm.input_min),
            "input_max": _floats(norm.input_max),
            "mean": _floats(norm.mean),
            "range": _floats(norm.range),
        },
    }


def save_json(net):
    return json.dumps(to_dict(net))


def from_dict(data):
    try:
        layers = tuple(
            Layer(np.array(spec["weights"], dtype=np.float64).reshape(len(spec["weights"]), -1),
                  spec["bias"], spec.get("activation", "relu"))
            for spec in data["layers"]
        )
        norm = data.get("normalization")
        normalization = None if norm is None else Normalization(
            norm["input_min"], norm["input_max"], norm["mean"], norm["range"]
        )
        net = Network(layers, normalization)
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from None
    if data.get("input_dim", net.input_dim) != net.input_dim or data.get("output_dim", net.output_dim) != net.output_dim:
        raise ParseError("declared input_dim/output_dim disagree with the layers")
    return net


def load_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("network JSON must be an object")
    return from_dict(data)


def load_network(path):
    """Load a network from ``.nnet`` or ``.json`` by file extension."""
    path = Path(path)
    if path.suffix.lower() == ".nnet":
        return load_nnet(path)
    return load_json(path.read_text())


# ------------------------------------------------------------------- sampling

def as_box(box, dim=None):
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2:
        raise InvalidBox(f"a box is a list of [lo, hi] pairs, got shape {box.shape}")
    if dim is not None and box.shape[0] != dim:
        raise DimensionError(f"box has {box.shape[0]} dimensions, expected {dim}")
    if np.any(np.isnan(box)) or np.any(box[:, 0] > box[:, 1]):
        raise InvalidBox("box has a lower bound above its upper bound")
    return box


def uniform_sample(net, count, box, seed, label_mode="argmax"):
    """Surrogate dataset: uniform inputs from ``box`` labelled by ``net`` itself."""
    if count <= 0:
        raise ValueError("count must be positive")
    box = as_box(box, net.input_dim)
    if not np.all(np.isfinite(box)):
        raise InvalidBox("sampling box must be finite")
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    X = lo + (hi - lo) * rng.random((count, net.input_dim))
    return Dataset(X, forward_batch(net, X), "scores", label_mode)


def random_network(dims, seed, scale=None, normalization=None):
    """He-initialised dense ReLU network with a linear output layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (nin, nout) in enumerate(zip(dims, dims[1:])):
        s = np.sqrt(2.0 / nin) if scale is None else scale
        act = "linear" if i == len(dims) - 2 else "relu"
        layers.append(Layer(rng.normal(0.0, s, (nout, nin)), rng.normal(0.0, 0.1, nout), act))
    return Network(tuple(layers), normalization)


def save_dataset(dataset, path):
    np.savez(path, inputs=dataset.inputs, targets=dataset.targets,
             kind=np.array(dataset.kind), label_mode=np.array(dataset.label_mode))


def load_dataset(path):
    with np.load(path, allow_pickle=False) as data:
        kind = str(data["kind"]) if "kind" in data else "labels"
        mode = str(data["label_mode"]) if "label_mode" in data else "argmax"
        return Dataset(data["inputs"], data["targets"], kind, mode)
