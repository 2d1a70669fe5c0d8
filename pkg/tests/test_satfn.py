import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cexrepair.fixtures import constant_network, grid
from cexrepair.network import Layer, Network, forward_batch, random_network
from cexrepair.satfn import (SatisfactionValue, f_sat, f_sat_atom, f_sat_batch, f_sat_grad_input,
                             f_sat_grad_params, f_sat_output)
from cexrepair.spec import Atom, Property, Specification, acasxu_property

from test_training import _non_degenerate, finite_difference_check


def test_atom_values():
    assert f_sat_atom(Atom((-1.0,), 1500.0), np.array([1400.0])) == 100.0
    assert f_sat_atom(Atom((1.0, -1.0)), np.array([3.0, 3.0])) == 0.0
    assert f_sat_atom(Atom((1.0,), 0.0, True), np.array([0.0]), margin=1e-6) == -1e-6


def test_running_examples():
    y = np.array([1400.0, 0, 0, 0, 0])
    assert f_sat_output(acasxu_property(1), y).value == 100.0
    phi2 = acasxu_property(2)
    assert f_sat_output(phi2, np.array([5.0, 3, 7, 1, 2])).value == 2.0
    assert f_sat_output(phi2, np.array([9.0, 3, 7, 1, 2])).value == -2.0


def test_outer_min_over_properties():
    a = Property(((0, 1),), ((Atom((0.0,), 4.0),),), "a")
    b = Property(((0, 1),), ((Atom((0.0,), -1.0),),), "b")
    sv = f_sat(Specification((a, b)), constant_network([0.0]), [0.5])
    assert sv == SatisfactionValue(-1.0, 1, 0, 0)


def brute_force(spec, y, margin=1e-6):
    best = None
    for p, prop in enumerate(spec):
        for c, clause in enumerate(prop.clauses):
            vals = [a.value(y) - (margin if a.strict else 0) for a in clause]
            top = max(vals)
            a_idx = vals.index(top)
            if best is None or top < best[0]:
                best = (top, p, c, a_idx)
    return best


def random_spec(rng, n_in, m, n_props=2):
    props = []
    for k in range(n_props):
        clauses = []
        for _ in range(rng.integers(2, 5)):
            clause = tuple(Atom(tuple(rng.normal(size=m)), rng.normal(), bool(rng.random() < 0.3))
                           for _ in range(rng.integers(1, 4)))
            clauses.append(clause)
        props.append(Property(tuple((-1.0, 1.0) for _ in range(n_in)), tuple(clauses), f"r{k}"))
    return Specification(tuple(props))


def test_active_index_brute_force(rng):
    for seed in range(20):
        net = random_network([3, 8, 4], seed=seed)
        spec = random_spec(rng, 3, 4)
        for x in rng.uniform(-1, 1, size=(20, 3)):
            sv = f_sat(spec, net, x)
            y = forward_batch(net, x[None])[0]
            ref = brute_force(spec, y)
            assert (sv.active_property, sv.active_clause, sv.active_atom) == ref[1:]
            assert sv.value == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
            assert f_sat_batch(spec, net, x[None])[0] == pytest.approx(sv.value, rel=1e-12, abs=1e-12)


def test_tie_break_lowest_index():
    net = Network((Layer([[1.0], [1.0]], [0.0, 0.0], "linear"),))
    prop = Property(((0, 1),), ((Atom((1.0, 0.0), -5.0), Atom((0.0, 2.0), -5.0)),))
    x = np.array([0.0])
    sv = f_sat(prop, net, x)
    assert sv.active_atom == 0
    np.testing.assert_array_equal(f_sat_grad_input(prop, net, x), [1.0])


def test_monotone_encoding(rng):
    spec = random_spec(rng, 2, 3)
    for _ in range(50):
        y = rng.normal(size=3)
        base = f_sat_output(spec, y).value
        bump = rng.uniform(0, 1)
        shifted = Specification(tuple(
            Property(p.input_box, tuple(tuple(Atom(a.coeffs, a.offset + bump, a.strict) for a in c)
                                        for c in p.clauses), p.name) for p in spec))
        assert f_sat_output(shifted, y).value >= base


def test_linear_input_gradient():
    W = np.array([[2.0, -3.0], [1.0, 4.0]])
    net = Network((Layer(W, [0.0, 0.0], "linear"),))
    prop = Property(((0, 1), (0, 1)), ((Atom((-1.0,), 1500.0),),))
    np.testing.assert_array_equal(f_sat_grad_input(prop, net, np.array([0.3, 0.2])), -W[0])


def test_input_gradient_finite_differences(rng, acas_net):
    checked = 0
    h = 1e-5
    for seed in range(200):
        net = random_network([3, 10, 10, 4], seed=seed)
        spec = random_spec(rng, 3, 4)
        x = rng.uniform(-1, 1, 3)
        if not _non_degenerate(net, x[None]):
            continue
        vals = [f_sat(spec, net, x + d) for d in np.vstack([h * np.eye(3), -h * np.eye(3)])]
        if len({(v.active_property, v.active_clause, v.active_atom) for v in vals}) != 1:
            continue
        fd = np.array([(vals[i].value - vals[i + 3].value) / (2 * h) for i in range(3)])
        g = f_sat_grad_input(spec, net, x)
        assert np.max(np.abs(fd - g)) <= 1e-4 * max(1.0, np.max(np.abs(g)))
        checked += 1
        if checked == 20:
            break
    assert checked == 20


def test_param_gradient_finite_differences(rng):
    net = random_network([3, 8, 8, 3], seed=3)
    spec = random_spec(rng, 3, 3, n_props=1)
    x = rng.uniform(-1, 1, 3)
    assert _non_degenerate(net, x[None])
    finite_difference_check(net, lambda n: f_sat(spec, n, x).value, f_sat_grad_params(spec, net, x), rng)


def sign_agreement(seed, points_per_dim, rng):
    net = random_network([3, 16, 16, 3], seed=seed)
    spec = random_spec(rng, 3, 3, n_props=1)
    prop = spec[0]
    X = grid(prop.input_box, points_per_dim)
    Y = forward_batch(net, X)
    vals = f_sat_batch(spec, net, X, margin=0.0)
    keep = np.abs(vals) >= 1e-12
    return np.array_equal((vals < 0)[keep], ~prop.holds(Y)[keep])


def test_sign_agreement_small_grid(rng):
    for seed in range(5):
        assert sign_agreement(seed, 12, rng)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.integers(0, 2 ** 31 - 1))
def test_sign_characterises_violation(y, seed):
    spec = random_spec(np.random.default_rng(seed), 1, 3)
    y = np.array(y)
    val = f_sat_output(spec, y, margin=0.0).value
    truth = all(bool(p.holds(y[None])[0]) for p in spec)
    if abs(val) >= 1e-12:
        assert (val < 0) == (not truth)
