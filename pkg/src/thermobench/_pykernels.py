"""Pure-Python (numpy) versions of the hot kernels.

These mirror ``_ext.pyx`` argument for argument and are used whenever the
compiled extension is unavailable or ``THERMOBENCH_PURE_PYTHON=1`` is set.
"""
import numpy as np


def rollout_bilinear(A, Bv, Big, xu_k, xu_r, xu_c, xu_v, vu_k, vu_r, vu_c, vu_v,
                     x0, U, V, F):
    """Roll out x+ = A x + Bv v + Big f + sum_i (Bxu_i x + Bvu_i v) u_i.

    The bilinear matrices are passed in coordinate form: entry ``e`` of the
    state term contributes ``xu_v[e] * U[k, xu_k[e]] * x[xu_c[e]]`` to row
    ``xu_r[e]`` (likewise for the disturbance term with ``V``).

    Returns ``(X, bad)`` where ``X`` has ``T + 1`` rows and ``bad`` is the
    first step whose state is non-finite, or -1.
    """
    T = U.shape[0]
    n = A.shape[0]
    X = np.empty((T + 1, n))
    X[0] = x0
    drive = V @ Bv.T + F @ Big.T
    x = np.asarray(x0, dtype=float).copy()
    for k in range(T):
        u = U[k]
        v = V[k]
        nxt = A @ x + drive[k]
        if xu_v.size:
            np.add.at(nxt, xu_r, xu_v * u[xu_k] * x[xu_c])
        if vu_v.size:
            np.add.at(nxt, vu_r, vu_v * u[vu_k] * v[vu_c])
        if not np.all(np.isfinite(nxt)):
            X[k + 1:] = np.nan
            return X, k + 1
        X[k + 1] = nxt
        x = nxt
    return X, -1


def lwlr_grouped(upos, counts, sums, eval_pos, bandwidth, period):
    """Local-linear tricube regression from per-position sufficient statistics.

    ``upos`` are distinct sample positions with multiplicities ``counts``;
    ``sums[j]`` is the sum of the samples observed at ``upos[j]`` (one column
    per channel). Offsets are circular when ``period > 0``.

    Returns ``(values, ok)``; ``ok[e]`` is False when fewer than two distinct
    positions carry positive weight around ``eval_pos[e]``.
    """
    d = upos[None, :] - eval_pos[:, None]
    if period > 0:
        d = (d + 0.5 * period) % period - 0.5 * period
    r = np.abs(d) / bandwidth
    w = np.where(r < 1.0, (1.0 - r ** 3) ** 3, 0.0)
    distinct = (w > 0).sum(axis=1)
    wc = w * counts[None, :]
    s0 = wc.sum(axis=1)
    s1 = (wc * d).sum(axis=1)
    s2 = (wc * d * d).sum(axis=1)
    t0 = w @ sums
    t1 = (w * d) @ sums
    den = s0 * s2 - s1 * s1
    ok = (distinct >= 2) & (den > 0)
    safe = np.where(ok, den, 1.0)
    values = (s2[:, None] * t0 - s1[:, None] * t1) / safe[:, None]
    values[~ok] = np.nan
    return values, ok
