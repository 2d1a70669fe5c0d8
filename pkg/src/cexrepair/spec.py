"""Input-output safety properties: interval input boxes and CNF output
constraints over affine atoms ``c . y + b >= 0`` (or ``> 0``)."""

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidBox, OutOfBox, ParseError, SpecError, UnknownProperty
from .network import forward


@dataclass(frozen=True)
class Atom:
    """``coeffs . y + offset >= 0`` (``> 0`` when ``strict``).

    Trailing zero coefficients are dropped so that atoms compare equal
    regardless of how many outputs were written out.
    """

    coeffs: tuple
    offset: float = 0.0
    strict: bool = False

    def __post_init__(self):
        c = [float(v) for v in np.ravel(self.coeffs)]
        while c and c[-1] == 0.0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(c))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "strict", bool(self.strict))

    def vector(self, m):
        if len(self.coeffs) > m:
            raise SpecError(f"atom refers to output y{len(self.coeffs)} but the network has {m} outputs")
        v = np.zeros(m)
        v[:len(self.coeffs)] = self.coeffs
        return v

    def value(self, y):
        """Raw ``g(y)`` without any strictness margin."""
        y = np.asarray(y, dtype=np.float64)
        return float(self.vector(y.shape[-1]) @ y + self.offset)

    def holds(self, y):
        g = self.value(y)
        return g > 0 if self.strict else g >= 0


@dataclass(frozen=True)
class CompiledCNF:
    """Dense matrices for vectorised atom evaluation of one property."""

    coeffs: np.ndarray      # (K, m)
    offsets: np.ndarray     # (K,)
    strict: np.ndarray      # (K,) bool
    clause_starts: np.ndarray  # (C,) start index of each clause in atom order
    clause_of: np.ndarray   # (K,) clause index of each atom


@dataclass(frozen=True)
class Property:
    input_box: tuple
    clauses: tuple
    name: str = "property"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.input_box)
        if not box:
            raise InvalidBox("input box needs at least one dimension")
        for lo, hi in box:
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise InvalidBox(f"invalid interval [{lo}, {hi}]")
        clauses = tuple(tuple(clause) for clause in self.clauses)
        if not clauses or any(not clause for clause in clauses):
            raise SpecError("a property needs at least one clause and no empty clauses")
        for clause in clauses:
            for atom in clause:
                if not isinstance(atom, Atom):
                    from .errors import UnsupportedAtom
                    raise UnsupportedAtom(f"unsupported atom {atom!r}")
        object.__setattr__(self, "input_box", box)
        object.__setattr__(self, "clauses", clauses)

    @property
    def input_dim(self):
        return len(self.input_box)

    @property
    def box(self):
        return np.array(self.input_box, dtype=np.float64)

    @property
    def atoms(self):
        return [a for clause in self.clauses for a in clause]

    @property
    def max_output_index(self):
        return max(len(a.coeffs) for a in self.atoms)

    def compiled(self, m):
        if m not in self._cache:
            atoms = self.atoms
            sizes = [len(c) for c in self.clauses]
            self._cache[m] = CompiledCNF(
                coeffs=np.array([a.vector(m) for a in atoms]).reshape(len(atoms), m),
                offsets=np.array([a.offset for a in atoms]),
                strict=np.array([a.strict for a in atoms], dtype=bool),
                clause_starts=np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64),
                clause_of=np.repeat(np.arange(len(sizes)), sizes),
            )
        return self._cache[m]

    def holds(self, Y):
        """Exact CNF truth for each row of output matrix ``Y``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        cnf = self.compiled(Y.shape[1])
        G = Y @ cnf.coeffs.T + cnf.offsets
        sat = np.where(cnf.strict, G > 0, G >= 0)
        per_clause = np.logical_or.reduceat(sat, cnf.clause_starts, axis=1)
        return per_clause.all(axis=1)

    def contains(self, x):
        box = self.box
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= box[:, 0]) and np.all(x <= box[:, 1]))


@dataclass(frozen=True)
class Specification:
    properties: tuple

    def __post_init__(self):
        props = tuple(self.properties)
        if not props:
            raise SpecError("a specification needs at least one property")
        if len({p.input_dim for p in props}) != 1:
            raise SpecError("all properties must share the same input dimension")
        object.__setattr__(self, "properties", props)

    def __iter__(self):
        return iter(self.properties)

    def __len__(self):
        return len(self.properties)

    def __getitem__(self, i):
        return self.properties[i]


def as_specification(obj):
    if isinstance(obj, Specification):
        return obj
    if isinstance(obj, Property):
        return Specification((obj,))
    return Specification(tuple(obj))


# ------------------------------------------------------------------ semantics

def satisfies_point(net, prop, x):
    """Whether ``net(x)`` lies in the property's output set (exact CNF)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (prop.input_dim,):
        raise DimensionError(f"expected an input of dimension {prop.input_dim}")
    if not prop.contains(x):
        raise OutOfBox(f"{x} lies outside the input box of {prop.name!r}")
    return bool(prop.holds(forward(net, x))[0])


def bind(prop, net):
    """Validate ``prop`` against ``net`` and close unbounded box entries.

    Infinite bounds are replaced by the network's sensor range
    (``normalization.input_min`` / ``input_max``); finite bounds are kept.
    """
    if prop.input_dim != net.input_dim:
        raise DimensionError(f"property has {prop.input_dim} inputs, network {net.input_dim}")
    if prop.max_output_index > net.output_dim:
        raise SpecError(
            f"property {prop.name!r} refers to y{prop.max_output_index} "
            f"but the network has {net.output_dim} outputs"
        )
    box = prop.box
    if net.normalization is not None:
        lo_inf = np.isneginf(box[:, 0])
        hi_inf = np.isposinf(box[:, 1])
        box[lo_inf, 0] = net.normalization.input_min[lo_inf]
        box[hi_inf, 1] = net.normalization.input_max[hi_inf]
    if not np.all(np.isfinite(box)):
        raise InvalidBox(f"property {prop.name!r} has an unbounded input box")
    if np.any(box[:, 0] > box[:, 1]):
        raise InvalidBox(f"property {prop.name!r} is empty after clipping to the sensor range")
    return Property(tuple(map(tuple, box)), prop.clauses, prop.name)


# ------------------------------------------------------------- constructors

def _diff_atom(m, a, b, strict=False):
    """Atom ``y_a - y_b >= 0`` (0-based indices)."""
    c = np.zeros(m)
    c[a] += 1.0
    c[b] -= 1.0
    return Atom(tuple(c), 0.0, strict)


def robustness_property(x, epsilon, target_class, num_classes, mode="argmax", name=None):
    """L-infinity ball around ``x`` on which ``target_class`` (0-based) must
    stay the maximal (``argmax``) or minimal (``argmin``) output."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if mode not in ("argmax", "argmin"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= target_class < num_classes:
        raise ValueError("target_class out of range")
    x = np.asarray(x, dtype=np.float64)
    box = tuple((v - epsilon, v + epsilon) for v in x)
    clauses = []
    for j in range(num_classes):
        if j == target_class:
            continue
        if mode == "argmax":
            clauses.append((_diff_atom(num_classes, target_class, j),))
        else:
            clauses.append((_diff_atom(num_classes, j, target_class),))
    return Property(box, tuple(clauses), name or f"robust[{target_class}]")


_INF = math.inf
_PI = 3.141592
_R = (-_INF, _INF)
_ACAS_BOXES = {
    1: [(55947.691, _INF), _R, _R, (1145, _INF), (-_INF, 60)],
    3: [(1500, 1800), (-0.06, 0.06), (3.10, _INF), (980, _INF), (960, _INF)],
    4: [(1500, 1800), (-0.06, 0.06), (0, 0), (1000, _INF), (700, 800)],
    5: [(250, 400), (0.2, 0.4), (-_PI, -_PI + 0.005), (100, 400), (0, 400)],
    7: [(0, 60760), (-_PI, _PI), (-_PI, _PI), (100, 1200), (0, 1200)],
    8: [(0, 60760), (-_PI, -2.356194), (-0.1, 0.1), (600, 1200), (600, 1200)],
    9: [(2000, 7000), (-0.4, -0.14), (-_PI, -_PI + 0.01), (100, 150), (0, 150)],
    10: [(36000, 60760), (0.7, _PI), (-_PI, -_PI + 0.01), (900, 1200), (600, 1200)],
}
_ACAS_BOXES[2] = _ACAS_BOXES[1]
_PHI6_BOXES = [
    [(12000, 62000), (0.7, _PI), (-_PI, -_PI + 0.005), (100, 1200), (0, 1200)],
    [(12000, 62000), (-_PI, -0.7), (-_PI, -_PI + 0.005), (100, 1200), (0, 1200)],
]


def _not_strict_min(m, i, strict=False):
    """``y_i >= min_{j != i} y_j`` as one clause (``>`` when strict)."""
    return ((tuple(_diff_atom(m, i, j, strict) for j in range(m) if j != i)),)


def _acas_clauses(k, m=5):
    if k == 1:
        return ((Atom((-1.0,), 1500.0),),)
    if k == 2:
        # y1 <= max_{j != 1} y_j
        return (tuple(_diff_atom(m, j, 0) for j in range(1, m)),)
    if k in (3, 6, 10):
        return _not_strict_min(m, 0)
    if k == 4:
        return _not_strict_min(m, 0, strict=True)
    if k == 5:
        return _not_strict_min(m, 4)
    if k == 9:
        return _not_strict_min(m, 3)
    if k == 7:
        # min_{a in {4,5}} y_a > min_{b in {1,2,3}} y_b
        return tuple(tuple(_diff_atom(m, a, b, True) for b in (0, 1, 2)) for a in (3, 4))
    if k == 8:
        # min_{a in {1,2}} y_a < min_{b in {3,4,5}} y_b
        return tuple(tuple(_diff_atom(m, b, a, True) for a in (0, 1)) for b in (2, 3, 4))
    raise UnknownProperty(k)


def acasxu_properties(k):
    """All boxes of ACAS Xu property ``k`` (two for the split input set of 6)."""
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 10:
        raise UnknownProperty(f"ACAS Xu property {k!r} does not exist (1..10)")
    clauses = _acas_clauses(int(k))
    boxes = _PHI6_BOXES if k == 6 else [_ACAS_BOXES[int(k)]]
    return [Property(tuple(b), clauses, f"phi{k}") for b in boxes]


def acasxu_property(k, part=0):
    return acasxu_properties(k)[part]


def acasxu_specification(ks):
    return Specification(tuple(p for k in ks for p in acasxu_properties(k)))


# ------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf)|(?P<var>y(?P<idx>\d+))"
    r"|(?P<agg>min|max)|(?P<op>[-+*(),]))"
)
_CMP = re.compile(r"(>=|<=|>|<)")


def _tokenize(text, lineno):
    pos, toks = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected input {text[pos:].strip()!r}", lineno)
        pos = m.end()
        if m.group("num"):
            toks.append(("num", float(m.group("num"))))
        elif m.group("var"):
            idx = int(m.group("idx"))
            if idx < 1:
                raise ParseError("outputs are numbered from y1", lineno)
            toks.append(("var", idx - 1))
        elif m.group("agg"):
            toks.append(("agg", m.group("agg")))
        else:
            toks.append(("op", m.group("op")))
    return toks


class _LinParser:
    """Recursive-descent parser for ``side := min(e, ...) | max(e, ...) | e``."""

    def __init__(self, toks, lineno):
        self.toks, self.i, self.lineno = toks, 0, lineno

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind or "token"
            raise ParseError(f"expected {want!r}", self.lineno)
        self.i += 1
        return tok

    def side(self):
        kind, value = self.peek()
        if kind == "agg":
            self.take()
            self.take("op", "(")
            items = [self.expr()]
            while self.peek() == ("op", ","):
                self.take()
                items.append(self.expr())
            self.take("op", ")")
            out = (value, items)
        else:
            out = (None, [self.expr()])
        if self.i != len(self.toks):
            raise ParseError("trailing tokens in constraint", self.lineno)
        return out

    def expr(self):
        coeffs, const = {}, 0.0
        sign = 1.0
        if self.peek() in (("op", "+"), ("op", "-")):
            sign = -1.0 if self.take()[1] == "-" else 1.0
        while True:
            c, var = self.term()
            if var is None:
                const += sign * c
            else:
                coeffs[var] = coeffs.get(var, 0.0) + sign * c
            if self.peek() in (("op", "+"), ("op", "-")):
                sign = -1.0 if self.take()[1] == "-" else 1.0
            else:
                return coeffs, const

    def term(self):
        c, var = 1.0, None
        while True:
            neg = False
            while self.peek() in (("op", "-"), ("op", "+")):
                neg ^= self.take()[1] == "-"
            kind, value = self.peek()
            if kind == "num":
                self.take()
                c *= -value if neg else value
            elif kind == "var":
                self.take()
                if var is not None:
                    raise ParseError("products of outputs are not affine", self.lineno)
                var = value
                c *= -1.0 if neg else 1.0
            else:
                raise ParseError("expected a number or an output variable", self.lineno)
            if self.peek() == ("op", "*"):
                self.take()
                continue
            return c, var


def _sub_atom(a, b, strict):
    (ca, ka), (cb, kb) = a, b
    coeffs = dict(ca)
    for idx, v in cb.items():
        coeffs[idx] = coeffs.get(idx, 0.0) - v
    m = max(coeffs, default=-1) + 1
    vec = np.zeros(m)
    for idx, v in coeffs.items():
        vec[idx] = v
    return Atom(tuple(vec), ka - kb, strict)


def _constraint_cnf(text, lineno):
    parts = _CMP.split(text)
    if len(parts) != 3:
        raise ParseError(f"constraint needs exactly one comparison: {text.strip()!r}", lineno)
    left, op, right = parts
    lhs = _LinParser(_tokenize(left, lineno), lineno).side()
    rhs = _LinParser(_tokenize(right, lineno), lineno).side()
    if op in ("<=", "<"):
        lhs, rhs = rhs, lhs
    strict = op in (">", "<")
    # lhs >= rhs: a min on the left / max on the right quantifies universally
    l_forall = lhs[0] != "max"
    r_exists = rhs[0] != "max"
    L, R = lhs[1], rhs[1]
    if l_forall:
        if r_exists:
            return [[_sub_atom(a, b, strict) for b in R] for a in L]
        return [[_sub_atom(a, b, strict)] for a in L for b in R]
    if r_exists:
        return [[_sub_atom(a, b, strict) for a in L for b in R]]
    # exists a. forall b: distribute the disjunction over the conjunctions
    return [[_sub_atom(a, b, strict) for a, b in zip(L, choice)]
            for choice in itertools.product(R, repeat=len(L))]


def _clause_cnf(text, lineno):
    result = [[]]
    for item in text.split("|"):
        if not item.strip():
            raise ParseError("empty disjunct", lineno)
        cnf = _constraint_cnf(item, lineno)
        result = [r + c for r in result for c in cnf]
    return result


def _box_value(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad box bound {tok!r}", lineno) from None


def parse_spec(text):
    """Parse the line-oriented property format into a Specification."""
    props = []
    current = None

    def finish():
        if current is None:
            return
        name, box, clauses, lineno = current
        if box is None:
            raise ParseError(f"property {name!r} has no box", lineno)
        if not clauses:
            raise ParseError(f"property {name!r} has no clauses", lineno)
        try:
            props.append(Property(tuple(box), tuple(tuple(c) for c in clauses), name))
        except (InvalidBox, SpecError) as exc:
            raise ParseError(str(exc), lineno) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "property":
            finish()
            current = [rest or f"property{len(props) + 1}", None, [], lineno]
        elif current is None:
            raise ParseError(f"{keyword!r} outside of a property block", lineno)
        elif keyword == "box":
            vals = [_box_value(t, lineno) for t in rest.split()]
            if not vals or len(vals) % 2:
                raise ParseError("box needs an even number of bounds", lineno)
            if current[1] is not None:
                raise ParseError("duplicate box line", lineno)
            current[1] = list(zip(vals[0::2], vals[1::2]))
        elif keyword == "clause":
            current[2].extend(_clause_cnf(rest, lineno))
        else:
            raise ParseError(f"unknown keyword {keyword!r}", lineno)
    finish()
    if not props:
        raise ParseError("no properties found", None)
    try:
        return Specification(tuple(props))
    except SpecError as exc:
        raise ParseError(str(exc)) from None


def format_atom(atom):
    terms = [f"{c!r}*y{i + 1}" for i, c in enumerate(atom.coeffs) if c != 0.0]
    terms.append(repr(atom.offset))
    return " + ".join(terms) + (" > 0" if atom.strict else " >= 0")


def format_spec(spec):
    spec = as_specification(spec)
    out = []
    for prop in spec:
        out.append(f"property {prop.name}")
        out.append("box " + " ".join(f"{lo!r} {hi!r}" for lo, hi in prop.input_box))
        for clause in prop.clauses:
            out.append("clause " + " | ".join(format_atom(a) for a in clause))
        out.append("")
    return "\n".join(out)


def load_spec(path):
    return parse_spec(Path(path).read_text())
