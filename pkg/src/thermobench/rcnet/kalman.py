"""State estimation for the RC model.

With the measured flows known, the bilinear model is linear time-varying
in the state, so an ordinary Kalman filter applies. Two anchors are
offered: ``end`` returns the filtered state at the last sample of the
window (use a burn-in window that ends where the evaluation starts), and
``start`` runs a Rauch-Tung-Striebel smoothing pass back to the first
sample of the window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import ConfigurationError, NumericalError, ShapeError
from .model import RcModel


@dataclass(frozen=True)
class KalmanConfig:
    process: float = 1e-4
    measurement: float = 1e-2
    burn_in: int = 96
    initial: float = 4.0

    def __post_init__(self):
        if min(self.process, self.measurement, self.initial) <= 0:
            raise ConfigurationError("Kalman noise scales must be positive")
        if self.burn_in < 1:
            raise ConfigurationError("burn_in must be at least 1")


@dataclass
class KalmanTrace:
    filtered: np.ndarray  # [T, n] x(k|k)
    cov_trace: np.ndarray  # [T] trace P(k|k)
    min_eig: np.ndarray  # [T] smallest eigenvalue of P(k|k)
    final_cov: np.ndarray
    smoothed0: np.ndarray | None = None


def _check_psd(P, k):
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(P)
        if w.min() < -1e-9 * max(1.0, w.max()):
            raise NumericalError(f"Kalman covariance lost positive semidefiniteness at step {k}") from None
    if not np.all(np.isfinite(P)) or np.trace(P) > 1e12:
        raise NumericalError(f"Kalman covariance diverged at step {k}")


def kalman_filter(m: RcModel, y, u, v, f=None, cfg: KalmanConfig | None = None, x_prior=None,
                  smooth: bool = False, track_eigs: bool = False) -> KalmanTrace:
    """Filter ``T`` measurements ``y`` given ``T - 1`` inputs and disturbances.

    ``f`` is the internal-gains input (``[T-1 x n_zones]``), default the
    model's constant gains. With ``smooth=True`` the smoothed estimate of
    the first state is stored in ``smoothed0``.
    """
    cfg = cfg or KalmanConfig()
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    T = Y.shape[0]
    U = np.asarray(u, dtype=float).reshape(T - 1, m.n_inputs) if T > 1 else np.zeros((0, m.n_inputs))
    V = np.asarray(v, dtype=float).reshape(T - 1, 2) if T > 1 else np.zeros((0, 2))
    if Y.shape[1] != m.n_zones:
        raise ShapeError(f"y has {Y.shape[1]} columns, model has {m.n_zones} outputs")
    F_in = (np.tile(m.gamma.f_ig_const, (T - 1, 1)) if f is None
            else np.asarray(f, dtype=float).reshape(T - 1, m.n_zones))
    n = m.n_states
    C = m.C
    air = np.argmax(C, axis=1)
    selector = np.allclose(C.sum(axis=1), 1.0) and np.all(C[np.arange(C.shape[0]), air] == 1.0)
    Q = cfg.process * np.eye(n)
    R = cfg.measurement * np.eye(m.n_zones)
    x = m.initial_guess(Y[0]) if x_prior is None else np.asarray(x_prior, dtype=float).copy()
    P = cfg.initial * np.eye(n)
    filt = np.empty((T, n))
    tr = np.empty(T)
    eig = np.full(T, np.nan)
    keep = smooth and T > 1
    Pf = np.empty((T, n, n)) if keep else None
    Pp = np.empty((T, n, n)) if keep else None
    Fs = np.empty((T - 1, n, n)) if keep else None
    xp_all = np.empty((T, n)) if keep else None
    drive = V @ m.Bv.T + F_in @ m.Big.T
    for k in range(T):
        if keep:
            Pp[k] = P
            xp_all[k] = x
        # measurement update
        if selector:
            S = P[np.ix_(air, air)] + R
            PCt = P[:, air]
            innov = Y[k] - x[air]
        else:
            PCt = P @ C.T
            S = C @ PCt + R
            innov = Y[k] - C @ x
        cf = cho_factor(S)
        K = cho_solve(cf, PCt.T).T
        x = x + K @ innov
        P = P - K @ PCt.T
        P = 0.5 * (P + P.T)
        _check_psd(P, k)
        filt[k] = x
        tr[k] = np.trace(P)
        if track_eigs:
            eig[k] = np.linalg.eigvalsh(P).min()
        if keep:
            Pf[k] = P
        if k == T - 1:
            break
        # time update
        Fk = m.transition(U[k])
        x = Fk @ x + drive[k] + m.input_gain(np.zeros(n), V[k]) @ U[k]
        P = Fk @ P @ Fk.T + Q
        P = 0.5 * (P + P.T)
        if keep:
            Fs[k] = Fk
    out = KalmanTrace(filt, tr, eig, P)
    if keep:
        xs = filt[-1]
        for k in range(T - 2, -1, -1):
            J = cho_solve(cho_factor(Pp[k + 1]), Fs[k] @ Pf[k]).T
            xs = filt[k] + J @ (xs - xp_all[k + 1])
        out.smoothed0 = xs
    elif smooth:
        out.smoothed0 = filt[0]
    return out


def kalman_init(m: RcModel, y, u, v, f=None, cfg: KalmanConfig | None = None,
                anchor: str = "end") -> np.ndarray:
    """Full-state estimate from measured outputs.

    ``anchor="end"``: filtered state at the last sample of ``y`` (the
    window should precede the evaluation period and end at its first
    sample). ``anchor="start"``: smoothed state at the first sample.
    The window must hold at least ``cfg.burn_in`` transitions.
    """
    cfg = cfg or KalmanConfig()
    T = np.atleast_2d(np.asarray(y)).shape[0]
    if T - 1 < cfg.burn_in:
        raise ConfigurationError(f"window has {T - 1} steps, burn-in needs {cfg.burn_in}")
    if anchor == "end":
        return kalman_filter(m, y, u, v, f, cfg).filtered[-1]
    if anchor == "start":
        return kalman_filter(m, y, u, v, f, cfg, smooth=True).smoothed0
    raise ConfigurationError("anchor must be 'end' or 'start'")


def transitions(m: RcModel, u) -> np.ndarray:
    """Stacked ``A + sum_i u_i(k) Bxu_i`` for every row of ``u``."""
    U = np.atleast_2d(np.asarray(u, dtype=float))
    F = np.repeat(m.A[None], U.shape[0], axis=0)
    for k, r, c, val in zip(*m.xu):
        F[:, r, c] += val * U[:, k]
    return F


def batch_smoothed_state(m: RcModel, y, u, v, f=None, cfg: KalmanConfig | None = None,
                         return_fit: bool = False):
    """Smoothed first state in the limit of zero process noise.

    With no process noise the fixed-interval smoother reduces to a
    regularized least-squares problem in ``x(0)``: outputs are affine in
    the initial state, ``y(k) = C Phi(k) x(0) + y_forced(k)``, and the prior
    ``N(initial_guess(y0), initial * I)`` acts as a ridge term weighted
    against ``measurement``. Solving it directly avoids the covariance
    recursion. With ``return_fit=True`` the predicted outputs are returned
    as well.
    """
    from .model import simulate

    cfg = cfg or KalmanConfig()
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    T = Y.shape[0]
    n = m.n_states
    U = np.asarray(u, dtype=float).reshape(T - 1, m.n_inputs)
    V = np.asarray(v, dtype=float).reshape(T - 1, 2)
    if Y.shape[1] != m.n_zones:
        raise ShapeError(f"y has {Y.shape[1]} columns, model has {m.n_zones} outputs")
    F = transitions(m, U)
    O = np.empty((T, m.n_zones, n))
    Phi = np.eye(n)
    O[0] = m.C
    for k in range(T - 1):
        Phi = F[k] @ Phi
        O[k + 1] = m.C @ Phi
    forced = simulate(m, np.zeros(n), U, V, f=f).outputs
    prior = m.initial_guess(Y[0])
    w = np.sqrt(cfg.measurement / cfg.initial)
    lhs = np.vstack([O.reshape(-1, n), w * np.eye(n)])
    rhs = np.concatenate([(Y - forced).ravel(), w * prior])
    x0 = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    if not np.all(np.isfinite(x0)):
        raise NumericalError("initial-state least squares produced non-finite values")
    if return_fit:
        return x0, forced + (O @ x0)
    return x0


def kalman_step(m: RcModel, x, P, y, u, v, f=None, cfg: KalmanConfig | None = None):
    """Predict from ``(x, P)`` at step k with inputs ``u, v, f`` and
    update with the measurement ``y`` at step k+1. Returns the new
    ``(x, P)``."""
    cfg = cfg or KalmanConfig()
    n = m.n_states
    f = m.gamma.f_ig_const if f is None else np.asarray(f, dtype=float)
    F = m.transition(u)
    x = F @ x + m.Bv @ v + m.input_gain(np.zeros(n), v) @ u + m.Big @ f
    P = F @ P @ F.T + cfg.process * np.eye(n)
    PCt = P @ m.C.T
    S = m.C @ PCt + cfg.measurement * np.eye(m.n_zones)
    K = cho_solve(cho_factor(S), PCt.T).T
    x = x + K @ (np.asarray(y, dtype=float) - m.C @ x)
    P = P - K @ PCt.T
    P = 0.5 * (P + P.T)
    _check_psd(P, 0)
    return x, P
