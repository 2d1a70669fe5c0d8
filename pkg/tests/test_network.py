import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from cexrepair import _kernels
from cexrepair.errors import DimensionError, InvalidBox, ParseError
from cexrepair.network import (Layer, Network, format_nnet, forward, forward_batch, load_json,
                               parse_nnet, random_network, save_json, uniform_sample)


def reference_eval(path, x):
    """Straight-line NNet interpreter, independent of the package parser."""
    rows = [l for l in open(path) if l.strip() and not l.startswith("//")]
    vals = [[float(t) for t in r.strip().rstrip(",").split(",")] for r in rows]
    nl, nin = int(vals[0][0]), int(vals[0][1])
    sizes = [int(v) for v in vals[1]]
    mins, maxs, means, ranges = vals[3], vals[4], vals[5], vals[6]
    z = [(min(max(x[i], mins[i]), maxs[i]) - means[i]) / ranges[i] for i in range(nin)]
    p = 7
    for layer in range(nl):
        W = vals[p:p + sizes[layer + 1]]
        p += sizes[layer + 1]
        b = [v[0] for v in vals[p:p + sizes[layer + 1]]]
        p += sizes[layer + 1]
        z = [sum(w * zz for w, zz in zip(row, z)) + bb for row, bb in zip(W, b)]
        if layer < nl - 1:
            z = [max(0.0, v) for v in z]
    return [v * ranges[-1] + means[-1] for v in z]


def test_identity_linear():
    net = Network((Layer([[1, 0], [0, 1]], [0, 0], "linear"),))
    assert forward(net, [3.0, -2.0]).tolist() == [3.0, -2.0]


def test_relu_clips():
    net = Network((Layer([[2.0]], [1.0], "relu"),))
    assert forward(net, [-3.0]).tolist() == [0.0]


def test_dimension_mismatch():
    net = Network((Layer([[1.0, 2.0]], [0.0], "linear"),))
    with pytest.raises(DimensionError):
        forward(net, [1.0])
    with pytest.raises(DimensionError):
        Network((Layer([[1.0]], [0.0]), Layer([[1.0, 1.0]], [0.0])))
    with pytest.raises(DimensionError):
        Layer([[1.0, 2.0]], [0.0, 1.0])


def test_acas_fixture_matches_reference(acas_net, acas_path, rng):
    assert acas_net.input_dim == 5 and acas_net.output_dim == 5
    for _ in range(20):
        x = rng.uniform([0, -3.2, -3.2, 100, 0], [62000, 3.2, 3.2, 1200, 1200])
        np.testing.assert_allclose(forward(acas_net, x), reference_eval(acas_path, x), rtol=1e-12, atol=1e-9)


def test_bias_count_mismatch(acas_path):
    lines = acas_path.read_text().splitlines()
    # drop the last bias entry of the output layer
    with pytest.raises(ParseError):
        parse_nnet("\n".join(lines[:-1]))
    # drop a bias line of the hidden layer: the next layer's rows misalign
    hidden_bias_last = 8 + 8 + 8 - 1
    broken = lines[:hidden_bias_last] + lines[hidden_bias_last + 1:]
    with pytest.raises(ParseError) as info:
        parse_nnet("\n".join(broken))
    assert info.value.line is not None


def test_malformed_header():
    with pytest.raises(ParseError):
        parse_nnet("x,y,z\n")


def test_round_trip_nnet_json(acas_net, rng):
    again = parse_nnet(format_nnet(acas_net))
    assert again == acas_net
    via_json = load_json(save_json(acas_net))
    assert via_json == acas_net
    X = rng.uniform([0, -3.2, -3.2, 100, 0], [62000, 3.2, 3.2, 1200, 1200], size=(100, 5))
    np.testing.assert_allclose(forward_batch(via_json, X), forward_batch(acas_net, X), rtol=0, atol=1e-9)
    assert np.max(np.abs(forward_batch(via_json, X) - forward_batch(acas_net, X))) <= 1e-12


def test_json_identity_and_missing_bias():
    net = Network((Layer([[1, 0], [0, 1]], [0, 0], "linear"),))
    assert load_json(save_json(net)) == net
    with pytest.raises(ParseError):
        load_json('{"layers": [{"weights": [[1.0]], "activation": "linear"}], "normalization": null}')
    with pytest.raises(ParseError):
        load_json("not json")


def test_uniform_sample_degenerate_and_deterministic():
    net = random_network([3, 4, 2], seed=0)
    d = uniform_sample(net, 1, [[0.5, 0.5]] * 3, seed=1)
    assert d.inputs.tolist() == [[0.5, 0.5, 0.5]]
    a = uniform_sample(net, 50, [[0, 1]] * 3, seed=9)
    b = uniform_sample(net, 50, [[0, 1]] * 3, seed=9)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    np.testing.assert_allclose(a.targets, forward_batch(net, a.inputs))
    with pytest.raises(InvalidBox):
        uniform_sample(net, 5, [[1, 0]] * 3, seed=0)


def test_uniform_sample_is_uniform():
    net = random_network([2, 2], seed=0)
    d = uniform_sample(net, 100_000, [[-1, 3], [0, 1]], seed=3)
    for i, (lo, hi) in enumerate([(-1, 3), (0, 1)]):
        counts, _ = np.histogram(d.inputs[:, i], bins=20, range=(lo, hi))
        assert stats.chisquare(counts).pvalue > 0.01


def test_composition(rng):
    for seed in range(5):
        net = random_network([3, 6, 5, 2], seed=seed)
        X = rng.normal(size=(30, 3))
        z = X
        for layer in net.layers:
            z = forward_batch(Network((layer,)), z)
        np.testing.assert_allclose(forward_batch(net, X), z, rtol=1e-12, atol=1e-12)


def test_piecewise_linear(rng):
    from cexrepair.network import activations
    net = random_network([3, 10, 10, 2], seed=4)
    for _ in range(20):
        x, d = rng.normal(size=3), rng.normal(size=3)
        ts = np.linspace(0, 1e-3, 5)
        X = x + ts[:, None] * d
        _, pre, _ = activations(net, X)
        if not all(np.all(np.sign(p) == np.sign(p[0])) for p in pre[:-1]):
            continue
        Y = forward_batch(net, X)
        second = Y[2:] - 2 * Y[1:-1] + Y[:-2]
        assert np.max(np.abs(second)) < 1e-10


@pytest.mark.parametrize("batch", [1, _kernels.BLAS_MIN_BATCH - 1, 200])
@pytest.mark.parametrize("dims", [[2, 3, 1], [5, 16, 16, 5], [3, 50, 50, 50, 4]])
def test_kernels_agree(dims, batch, rng):
    net = random_network(dims, seed=len(dims))
    X = rng.normal(size=(batch, dims[0]))
    a = _kernels.forward_batch_numpy(*net.packed, X)
    b = _kernels.forward_batch_numba(*net.packed, X)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    LO = X - 0.1
    HI = X + 0.1
    la, ha = _kernels.interval_batch_numpy(*net.packed, LO, HI)
    lb, hb = _kernels.interval_batch_numba(*net.packed, LO, HI)
    np.testing.assert_allclose(la, lb, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ha, hb, rtol=1e-12, atol=1e-12)


def test_backend_switch():
    prev = _kernels.backend()
    with _kernels.use_backend("numpy"):
        assert _kernels.backend() == "numpy"
    assert _kernels.backend() == prev
    with pytest.raises(ValueError):
        _kernels.set_backend("gpu")


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, CEXREPAIR_NO_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from cexrepair import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
