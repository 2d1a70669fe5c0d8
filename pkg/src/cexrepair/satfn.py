"""Satisfaction function: min over properties, min over clauses, max over
atoms of the atom margins at the network output. Negative exactly when the
output violates the specification."""

from dataclasses import dataclass

import numpy as np

from .network import forward, forward_batch, input_vjp
from .spec import as_specification
from .training import param_vjp

DEFAULT_MARGIN = 1e-6


@dataclass(frozen=True)
class SatisfactionValue:
    value: float
    active_property: int
    active_clause: int
    active_atom: int

    def __float__(self):
        return self.value


def f_sat_atom(atom, y, margin=DEFAULT_MARGIN):
    """Atom margin ``g(y)``; strict atoms are shifted down by ``margin``."""
    return atom.value(y) - (margin if atom.strict else 0.0)


def _atom_values(prop, Y, margin):
    cnf = prop.compiled(Y.shape[1])
    return Y @ cnf.coeffs.T + cnf.offsets - margin * cnf.strict, cnf


def _evaluate_output(spec, y, margin):
    best = None
    for p, prop in enumerate(spec):
        G, cnf = _atom_values(prop, y[None, :], margin)
        G = G[0]
        for c, start in enumerate(cnf.clause_starts):
            stop = start + len(prop.clauses[c])
            a = int(np.argmax(G[start:stop]))
            val = float(G[start + a])
            # strict comparison keeps the lowest index on ties
            if best is None or val < best.value:
                best = SatisfactionValue(val, p, c, a)
    return best


def f_sat_output(spec, y, margin=DEFAULT_MARGIN):
    """Satisfaction value of a raw output vector ``y``."""
    return _evaluate_output(as_specification(spec), np.asarray(y, dtype=np.float64), margin)


def f_sat(spec, net, x, margin=DEFAULT_MARGIN):
    spec = as_specification(spec)
    return _evaluate_output(spec, forward(net, x), margin)


def f_sat_values(spec, Y, margin=DEFAULT_MARGIN):
    """Vectorised satisfaction values for each row of an output matrix."""
    spec = as_specification(spec)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    out = np.full(Y.shape[0], np.inf)
    for prop in spec:
        G, cnf = _atom_values(prop, Y, margin)
        per_clause = np.maximum.reduceat(G, cnf.clause_starts, axis=1)
        out = np.minimum(out, per_clause.min(axis=1))
    return out


def f_sat_batch(spec, net, X, margin=DEFAULT_MARGIN):
    return f_sat_values(spec, forward_batch(net, X), margin)


def active_coeffs(spec, sv, m):
    spec = as_specification(spec)
    return spec[sv.active_property].clauses[sv.active_clause][sv.active_atom].vector(m)


def f_sat_grad_input(spec, net, x, margin=DEFAULT_MARGIN):
    """Subgradient w.r.t. ``x`` through the active atom (lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    sv = f_sat(spec, net, x, margin)
    return input_vjp(net, x, active_coeffs(spec, sv, net.output_dim))


def f_sat_grad_params(spec, net, x, margin=DEFAULT_MARGIN):
    """Subgradient w.r.t. all parameters, as ``[(dW, db), ...]``."""
    x = np.asarray(x, dtype=np.float64)
    sv = f_sat(spec, net, x, margin)
    return param_vjp(net, x[None, :], active_coeffs(spec, sv, net.output_dim)[None, :])


def f_sat_value_and_grad_params(spec, net, x, margin=DEFAULT_MARGIN):
    x = np.asarray(x, dtype=np.float64)
    sv = f_sat(spec, net, x, margin)
    grads = param_vjp(net, x[None, :], active_coeffs(spec, sv, net.output_dim)[None, :])
    return sv, grads
