"""Hot numeric kernels: batched forward pass and interval propagation.

Each kernel has a numba ``@njit`` implementation and a pure-numpy one with
the same signature. The numba path is used when numba imports and the
environment variable ``CEXREPAIR_NO_NUMBA`` is unset (or ``0``); setting it
to ``1`` forces the numpy path. Both operate on the packed network layout
produced by :func:`pack`:

* ``params``: float64 vector, per layer the row-major weight matrix followed
  by the bias vector;
* ``dims``: int64 vector ``[n_0, n_1, ..., n_k]`` of layer widths;
* ``relu``: bool vector of length ``k``.
"""

import contextlib
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def _env_disabled():
    return os.environ.get("CEXREPAIR_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")


_backend = "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def pack(weights, biases, relu):
    dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    chunks = []
    for w, b in zip(weights, biases):
        chunks.append(np.ascontiguousarray(w, dtype=np.float64).ravel())
        chunks.append(np.asarray(b, dtype=np.float64))
    params = np.concatenate(chunks)
    return params, np.asarray(dims, dtype=np.int64), np.asarray(relu, dtype=np.bool_)


def unpack(params, dims, relu):
    """Yield ``(W, b, relu)`` views into a packed parameter vector."""
    off = 0
    for i in range(len(dims) - 1):
        nin, nout = int(dims[i]), int(dims[i + 1])
        w = params[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = params[off:off + nout]
        off += nout
        yield w, b, bool(relu[i])


# ---------------------------------------------------------------- numpy path

def forward_batch_numpy(params, dims, relu, X):
    z = np.asarray(X, dtype=np.float64)
    for w, b, r in unpack(params, dims, relu):
        z = z @ w.T + b
        if r:
            z = np.maximum(z, 0.0)
    return z


def interval_batch_numpy(params, dims, relu, LO, HI):
    lo = np.asarray(LO, dtype=np.float64)
    hi = np.asarray(HI, dtype=np.float64)
    for w, b, r in unpack(params, dims, relu):
        wp = np.maximum(w, 0.0)
        wn = np.minimum(w, 0.0)
        lo, hi = lo @ wp.T + hi @ wn.T + b, hi @ wp.T + lo @ wn.T + b
        if r:
            lo = np.maximum(lo, 0.0)
            hi = np.maximum(hi, 0.0)
    return lo, hi


# ---------------------------------------------------------------- numba path
#
# Small batches (the search and single-point gradients) run as scalar loops,
# which avoids all temporary allocation. From BLAS_MIN_BATCH rows on, matrix
# products go through np.dot inside the compiled function (BLAS via scipy).

BLAS_MIN_BATCH = 32


@njit(cache=True)
def _forward_blas(params, dims, relu, X):
    z = X.copy()
    off = 0
    for layer in range(dims.shape[0] - 1):
        nin = dims[layer]
        nout = dims[layer + 1]
        w = params[off:off + nin * nout].reshape((nout, nin))
        b = params[off + nin * nout:off + nin * nout + nout]
        z = np.dot(z, w.T) + b
        if relu[layer]:
            z = np.maximum(z, 0.0)
        off += nin * nout + nout
    return z


@njit(cache=True)
def _interval_blas(params, dims, relu, LO, HI):
    lo = LO.copy()
    hi = HI.copy()
    off = 0
    for layer in range(dims.shape[0] - 1):
        nin = dims[layer]
        nout = dims[layer + 1]
        w = params[off:off + nin * nout].reshape((nout, nin))
        b = params[off + nin * nout:off + nin * nout + nout]
        wp = np.maximum(w, 0.0).T.copy()
        wn = np.minimum(w, 0.0).T.copy()
        nlo = np.dot(lo, wp) + np.dot(hi, wn) + b
        nhi = np.dot(hi, wp) + np.dot(lo, wn) + b
        if relu[layer]:
            nlo = np.maximum(nlo, 0.0)
            nhi = np.maximum(nhi, 0.0)
        lo = nlo
        hi = nhi
        off += nin * nout + nout
    return lo, hi


@njit(cache=True)
def forward_batch_numba(params, dims, relu, X):
    npts = X.shape[0]
    if npts >= BLAS_MIN_BATCH:
        return _forward_blas(params, dims, relu, X)
    k = dims.shape[0] - 1
    width = 0
    for i in range(k + 1):
        if dims[i] > width:
            width = dims[i]
    out = np.empty((npts, dims[k]))
    cur = np.empty(width)
    nxt = np.empty(width)
    for p in range(npts):
        for j in range(dims[0]):
            cur[j] = X[p, j]
        off = 0
        for layer in range(k):
            nin = dims[layer]
            nout = dims[layer + 1]
            boff = off + nin * nout
            for r in range(nout):
                s = 0.0
                base = off + r * nin
                for c in range(nin):
                    s += params[base + c] * cur[c]
                s += params[boff + r]
                if relu[layer] and s < 0.0:
                    s = 0.0
                nxt[r] = s
            for r in range(nout):
                cur[r] = nxt[r]
            off = boff + nout
        for j in range(dims[k]):
            out[p, j] = cur[j]
    return out


@njit(cache=True)
def interval_batch_numba(params, dims, relu, LO, HI):
    npts = LO.shape[0]
    if npts >= BLAS_MIN_BATCH:
        return _interval_blas(params, dims, relu, LO, HI)
    k = dims.shape[0] - 1
    width = 0
    for i in range(k + 1):
        if dims[i] > width:
            width = dims[i]
    out_lo = np.empty((npts, dims[k]))
    out_hi = np.empty((npts, dims[k]))
    lo = np.empty(width)
    hi = np.empty(width)
    nlo = np.empty(width)
    nhi = np.empty(width)
    for p in range(npts):
        for j in range(dims[0]):
            lo[j] = LO[p, j]
            hi[j] = HI[p, j]
        off = 0
        for layer in range(k):
            nin = dims[layer]
            nout = dims[layer + 1]
            boff = off + nin * nout
            for r in range(nout):
                sl = 0.0
                sh = 0.0
                base = off + r * nin
                for c in range(nin):
                    w = params[base + c]
                    if w >= 0.0:
                        sl += w * lo[c]
                        sh += w * hi[c]
                    else:
                        sl += w * hi[c]
                        sh += w * lo[c]
                sl += params[boff + r]
                sh += params[boff + r]
                if relu[layer]:
                    if sl < 0.0:
                        sl = 0.0
                    if sh < 0.0:
                        sh = 0.0
                nlo[r] = sl
                nhi[r] = sh
            for r in range(nout):
                lo[r] = nlo[r]
                hi[r] = nhi[r]
            off = boff + nout
        for j in range(dims[k]):
            out_lo[p, j] = lo[j]
            out_hi[p, j] = hi[j]
    return out_lo, out_hi


# ---------------------------------------------------------------- dispatch

def forward_batch(params, dims, relu, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if _backend == "numba":
        return forward_batch_numba(params, dims, relu, X)
    return forward_batch_numpy(params, dims, relu, X)


def interval_batch(params, dims, relu, LO, HI):
    LO = np.ascontiguousarray(LO, dtype=np.float64)
    HI = np.ascontiguousarray(HI, dtype=np.float64)
    if _backend == "numba":
        return interval_batch_numba(params, dims, relu, LO, HI)
    return interval_batch_numpy(params, dims, relu, LO, HI)
