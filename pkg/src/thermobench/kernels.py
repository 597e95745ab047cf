"""Kernel backend selection.

The compiled extension (``thermobench._ext``) is preferred. Set
``THERMOBENCH_PURE_PYTHON=1`` to force the numpy fallback, e.g. to compare
the two or when the extension could not be built.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("THERMOBENCH_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ext as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])


def _coo(parts, n_inputs):
    idx = np.asarray(parts[0], dtype=np.int64)
    rows = np.asarray(parts[1], dtype=np.int64)
    cols = np.asarray(parts[2], dtype=np.int64)
    vals = np.asarray(parts[3], dtype=float)
    if idx.size and (idx.min() < 0 or idx.max() >= n_inputs):
        raise ValueError("bilinear input index out of range")
    return idx, rows, cols, vals


def rollout_bilinear(A, Bv, Big, xu, vu, x0, U, V, F, backend=None):
    """Simulate the bilinear state equation; see ``_pykernels.rollout_bilinear``.

    ``xu`` and ``vu`` are ``(input_index, row, col, value)`` coordinate
    tuples. Returns ``(X, bad_step)``.
    """
    U = np.ascontiguousarray(U, dtype=float)
    n_in = U.shape[1]
    args = (
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(Bv, dtype=float),
        np.ascontiguousarray(Big, dtype=float),
        *_coo(xu, n_in),
        *_coo(vu, n_in),
        np.ascontiguousarray(x0, dtype=float),
        U,
        np.ascontiguousarray(V, dtype=float),
        np.ascontiguousarray(F, dtype=float),
    )
    X, bad = _impl(backend).rollout_bilinear(*args)
    return np.asarray(X), int(bad)


def lwlr_grouped(upos, counts, sums, eval_pos, bandwidth, period, backend=None):
    """Grouped local-linear tricube smoother; see ``_pykernels.lwlr_grouped``."""
    values, ok = _impl(backend).lwlr_grouped(
        np.ascontiguousarray(upos, dtype=float),
        np.ascontiguousarray(counts, dtype=float),
        np.ascontiguousarray(sums, dtype=float),
        np.ascontiguousarray(eval_pos, dtype=float),
        float(bandwidth),
        float(period),
    )
    return np.asarray(values), np.asarray(ok, dtype=bool)
