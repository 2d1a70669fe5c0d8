"""Sound verification by interval bound propagation and input splitting."""

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import _kernels
from .errors import DimensionError, UnsupportedAtom
from .satfn import DEFAULT_MARGIN, f_sat_batch
from .spec import Atom, bind


@dataclass(frozen=True)
class VerifyConfig:
    max_splits: int = 100_000
    min_width: float = 1e-6
    samples_per_box: int = 8
    batch_size: int = 64

    def __post_init__(self):
        if self.max_splits < 0:
            raise ValueError("max_splits must be non-negative")
        if not self.min_width > 0 or self.samples_per_box < 1 or self.batch_size < 1:
            raise ValueError("min_width, samples_per_box and batch_size must be positive")


VERIFIED = "verified"
COUNTEREXAMPLE = "counterexample"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    status: str
    x: np.ndarray = None
    value: float = None
    splits: int = 0

    @property
    def verified(self):
        return self.status == VERIFIED

    def to_dict(self):
        return {
            "status": self.status,
            "x": None if self.x is None else [float(v) for v in self.x],
            "value": None if self.value is None else float(self.value),
            "splits": int(self.splits),
        }

    @classmethod
    def from_dict(cls, d):
        x = None if d.get("x") is None else np.array(d["x"], dtype=np.float64)
        return cls(d["status"], x, d.get("value"), d.get("splits", 0))


class ClauseStatus(enum.Enum):
    HOLDS = "holds"
    VIOLATED = "violated"
    UNDETERMINED = "undetermined"


def _interval_boxes(net, LO, HI):
    if net.normalization is not None:
        norm = net.normalization
        LO = norm.normalize(LO)
        HI = norm.normalize(HI)
    YLO, YHI = _kernels.interval_batch(*net.packed, LO, HI)
    if net.normalization is not None:
        YLO = net.normalization.denormalize(YLO)
        YHI = net.normalization.denormalize(YHI)
    return YLO, YHI


def interval_forward(net, box):
    """Enclosure ``[[lo, hi], ...]`` of the outputs reachable from ``box``."""
    box = np.asarray(box, dtype=np.float64)
    if box.shape != (net.input_dim, 2):
        raise DimensionError(f"expected a box of shape ({net.input_dim}, 2), got {box.shape}")
    YLO, YHI = _interval_boxes(net, box[None, :, 0], box[None, :, 1])
    return np.column_stack([YLO[0], YHI[0]])


def _atom_bounds(coeffs, offsets, strict, YLO, YHI, margin):
    cp = np.maximum(coeffs, 0.0)
    cn = np.minimum(coeffs, 0.0)
    shift = offsets - margin * strict
    glo = YLO @ cp.T + YHI @ cn.T + shift
    ghi = YHI @ cp.T + YLO @ cn.T + shift
    return glo, ghi


def clause_bound(clause, ybox, margin=DEFAULT_MARGIN):
    """Decide a disjunction of affine atoms over an output box."""
    ybox = np.asarray(ybox, dtype=np.float64)
    for atom in clause:
        if not isinstance(atom, Atom):
            raise UnsupportedAtom(f"only affine atoms can be bounded, got {atom!r}")
    m = ybox.shape[0]
    coeffs = np.array([a.vector(m) for a in clause])
    offsets = np.array([a.offset for a in clause])
    strict = np.array([a.strict for a in clause], dtype=bool)
    glo, ghi = _atom_bounds(coeffs, offsets, strict, ybox[None, :, 0], ybox[None, :, 1], margin)
    if np.any(glo >= 0):
        return ClauseStatus.HOLDS
    if np.all(ghi < 0):
        return ClauseStatus.VIOLATED
    return ClauseStatus.UNDETERMINED


def _sample_offsets(n, count):
    """Unit-cube sample pattern: the centre followed by scrambled Sobol points."""
    if count <= 1:
        return np.full((1, n), 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        extra = qmc.Sobol(d=n, scramble=True, seed=0).random(count - 1)
    return np.vstack([np.full((1, n), 0.5), extra])


def verify(net, prop, config=None, margin=DEFAULT_MARGIN):
    """Branch and bound over input boxes.

    Returns ``Verified`` only when every sub-box is discharged by interval
    bounds; ``Counterexample`` with a concrete point whose satisfaction value
    is negative; ``Unknown`` when the split budget runs out or a box cannot be
    split below ``min_width`` without being decided.
    """
    config = config or VerifyConfig()
    bound = bind(prop, net)
    box = bound.box
    n = bound.input_dim
    cnf = bound.compiled(net.output_dim)
    scale = net.normalization.range[:-1] if net.normalization is not None else np.ones(n)
    pattern = _sample_offsets(n, config.samples_per_box)

    stack = [(box[:, 0].copy(), box[:, 1].copy())]
    splits = 0
    undecided = False
    while stack:
        batch = [stack.pop() for _ in range(min(config.batch_size, len(stack)))]
        LO = np.array([b[0] for b in batch])
        HI = np.array([b[1] for b in batch])
        YLO, YHI = _interval_boxes(net, LO, HI)
        glo, _ = _atom_bounds(cnf.coeffs, cnf.offsets, cnf.strict, YLO, YHI, margin)
        holds = np.logical_or.reduceat(glo >= 0, cnf.clause_starts, axis=1).all(axis=1)
        open_idx = np.flatnonzero(~holds)
        if open_idx.size == 0:
            continue
        pts = LO[open_idx, None, :] + pattern[None, :, :] * (HI - LO)[open_idx, None, :]
        pts = np.clip(pts, LO[open_idx, None, :], HI[open_idx, None, :])
        vals = f_sat_batch(bound, net, pts.reshape(-1, n), margin).reshape(len(open_idx), -1)
        for row, i in enumerate(open_idx):
            j = int(np.argmin(vals[row]))
            if vals[row, j] < 0:
                return Verdict(COUNTEREXAMPLE, pts[row, j].copy(), float(vals[row, j]), splits)
        for i in open_idx:
            lo, hi = LO[i], HI[i]
            widths = (hi - lo) / scale
            d = int(np.argmax(widths))
            if widths[d] < config.min_width:
                undecided = True
                continue
            if splits >= config.max_splits:
                return Verdict(UNKNOWN, splits=splits)
            splits += 1
            mid = 0.5 * (lo[d] + hi[d])
            left_hi, right_lo = hi.copy(), lo.copy()
            left_hi[d] = mid
            right_lo[d] = mid
            stack.append((right_lo, hi.copy()))
            stack.append((lo.copy(), left_hi))
    return Verdict(UNKNOWN if undecided else VERIFIED, splits=splits)
