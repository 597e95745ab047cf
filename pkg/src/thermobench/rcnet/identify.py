"""Two-stage identification of the RC model.

1. :func:`estimate_gamma` fits the physical parameters on weekend windows,
   where the time-varying internal gains are assumed absent.
2. :func:`estimate_gains_v` recovers the weekly time-varying gains profile
   of each season from complete training weeks by one-step least squares.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, IdentifiabilityError, PreconditionError
from ..optim import NlsProblem, NlsResult, solve_nls
from ..timeseries import MINUTES_PER_DAY, MINUTES_PER_WEEK, SEASONS, Dataset, Season
from .building import BuildingDescription
from .kalman import KalmanConfig, batch_smoothed_state, kalman_init
from .model import PhysicalParams, RcModel, assemble, simulate

WEEKEND_START = 5 * MINUTES_PER_DAY  # Saturday 00:00 relative to Monday


def is_weekend(timestamps) -> np.ndarray:
    return (np.asarray(timestamps) % MINUTES_PER_WEEK) >= WEEKEND_START


def weekend_windows(d: Dataset, min_steps: int = 2) -> list[Dataset]:
    """Maximal runs of consecutive weekend samples."""
    wk = is_weekend(d.timestamps)
    out = []
    k = 0
    T = len(d)
    while k < T:
        if not wk[k]:
            k += 1
            continue
        j = k
        while j < T and wk[j]:
            j += 1
        if j - k >= min_steps:
            out.append(d.slice(k, j))
        k = j
    return out


def model_inputs(m: RcModel, d: Dataset):
    """Flows ordered as the model's VAVs, plus the disturbance matrix."""
    if tuple(d.vav_ids) == tuple(m.vav_ids):
        U = d.vav_flows
    else:
        try:
            U = d.vav_flows[:, [d.vav_ids.index(v) for v in m.vav_ids]]
        except ValueError:
            raise ConfigurationError("dataset VAV ids do not match the model") from None
    return U, d.disturbances


def window_initial_state(m: RcModel, w: Dataset, cfg: KalmanConfig, method: str = "batch") -> np.ndarray:
    """Smoothed state at the start of ``w`` assuming constant gains.

    ``method="batch"`` uses the zero-process-noise smoother (one least
    squares solve); ``"rts"`` runs the full Kalman filter and
    Rauch-Tung-Striebel pass with ``cfg.process``.
    """
    U, V = model_inputs(m, w)
    T = len(w)
    if method == "batch":
        return batch_smoothed_state(m, w.zone_temps, U[:T - 1], V[:T - 1], None, cfg)
    if method != "rts":
        raise ConfigurationError("method must be 'batch' or 'rts'")
    burn = min(cfg.burn_in, T - 1)
    kcfg = KalmanConfig(cfg.process, cfg.measurement, burn, cfg.initial)
    return kalman_init(m, w.zone_temps, U[:T - 1], V[:T - 1], None, kcfg, anchor="start")


def window_residual(m: RcModel, w: Dataset, cfg: KalmanConfig, method: str = "batch") -> np.ndarray:
    """Simulated minus measured outputs over a window, started from the
    smoothed initial state."""
    U, V = model_inputs(m, w)
    if method == "batch":
        _, pred = batch_smoothed_state(m, w.zone_temps, U[:-1], V[:-1], None, cfg, return_fit=True)
        return (pred - w.zone_temps).ravel()
    x0 = window_initial_state(m, w, cfg, method)
    sim = simulate(m, x0, U[:-1], V[:-1], gains="const")
    return (sim.outputs - w.zone_temps).ravel()


@dataclass
class GammaFit:
    gamma: PhysicalParams
    sse: float
    start_sse: list[float]
    nls: NlsResult
    n_windows: int


def _check_windows(windows: Mapping[Season, Sequence[Dataset]]):
    flat = []
    for season, ws in windows.items():
        for w in ws:
            if len(w) < 2:
                continue
            if not np.all(is_weekend(w.timestamps)):
                raise PreconditionError(
                    f"parameter fit windows must lie on weekends (season {season}); "
                    "weekday internal gains are unknown at this stage")
            flat.append(w)
    if not flat:
        raise PreconditionError("no weekend data available for the parameter fit")
    return flat


def estimate_gamma(desc: BuildingDescription, windows: Mapping[Season, Sequence[Dataset]],
                   starts: Sequence[PhysicalParams], step_minutes: int = 15,
                   kalman: KalmanConfig | None = None, budget: int | None = None,
                   floor: float = 1e-6, threads: int | None = None) -> GammaFit:
    """Simulation-error fit of the physical parameters on weekend windows.

    Every evaluation assembles the model, estimates each window's initial
    state with a Kalman smoother and simulates the window with measured
    inputs and constant gains. All parameters stay above ``floor``.

    Raises
    ------
    PreconditionError
        If a window contains weekday samples or no window is given.
    """
    kalman = kalman or KalmanConfig()
    flat = _check_windows(windows)
    starts = list(starts)
    if not starts:
        raise ConfigurationError("at least one initial guess is required")
    dim = starts[0].to_vector().size

    def residual(theta):
        m = assemble(desc, PhysicalParams.from_vector(theta), step_minutes)
        return np.concatenate([window_residual(m, w, kalman) for w in flat])

    problem = NlsProblem(residual, dim, [s.to_vector() for s in starts],
                         positive=np.ones(dim, dtype=bool), floor=floor)
    res = solve_nls(problem, budget=budget, threads=threads)
    start_sse = []
    for s in starts:
        r = residual(s.to_vector())
        start_sse.append(float(r @ r))
    return GammaFit(PhysicalParams.from_vector(res.theta), res.sse, start_sse, res, len(flat))


def training_weekends(train: Mapping[Season, Sequence[Dataset]],
                      per_season: int | None = None) -> dict[Season, list[Dataset]]:
    out = {}
    for s in SEASONS:
        ws = []
        for week in train.get(s, []):
            ws.extend(weekend_windows(week))
        if per_season is not None:
            ws = ws[:per_season]
        if ws:
            out[s] = ws
    return out


# --------------------------------------------------------------------------
# time-varying gains


def gains_step(m: RcModel, x_prev, u_prev, v_prev, y_now, pinv=None):
    """One reconstruction step.

    Predicts the state without time-varying gains, solves
    ``(C Big) f = y - C x_pred`` by least squares and returns
    ``(f, x_pred + Big f)``.
    """
    x_pred = m.transition(u_prev) @ x_prev + m.Bv @ v_prev \
        + m.input_gain(np.zeros(m.n_states), v_prev) @ u_prev + m.Big @ m.gamma.f_ig_const
    G = m.C @ m.Big
    if pinv is None:
        pinv = np.linalg.pinv(G)
    f = pinv @ (np.asarray(y_now, dtype=float) - m.C @ x_pred)
    return f, x_pred + m.Big @ f


def week_gains_v(m: RcModel, data: Dataset, start: int, x_start, steps: int) -> np.ndarray:
    """Per-step gains estimates for ``steps`` transitions from row ``start``.

    Row ``j`` of the result belongs to the transition out of row
    ``start + j``.
    """
    G = m.C @ m.Big
    if np.linalg.matrix_rank(G) < G.shape[1]:
        bad = tuple(m.zone_names[i] for i in range(G.shape[1]) if not np.any(G[:, i]))
        raise IdentifiabilityError("C Big does not have full column rank", columns=bad)
    pinv = np.linalg.pinv(G)
    U, V = model_inputs(m, data)
    x = np.asarray(x_start, dtype=float)
    out = np.empty((steps, m.n_zones))
    for j in range(steps):
        k = start + j
        f, x = gains_step(m, x, U[k], V[k], data.zone_temps[k + 1], pinv)
        out[j] = f
    return out


def estimate_gains_v(m: RcModel, data: Dataset, weeks: Mapping[Season, Sequence[Dataset]],
                     kalman: KalmanConfig | None = None, lookback: int | None = None) -> dict[Season, np.ndarray]:
    """Seasonal weekly profiles of the time-varying internal gains.

    For every training week the state at its first sample is estimated
    with a Kalman filter over the preceding ``lookback`` steps of ``data``
    (default two days, i.e. the weekend before a Monday-aligned week, where
    only constant gains act). The week is then walked forward one step at a
    time; each step's gains solve the least-squares system against the
    measured zone temperatures, and the reconstructed state seeds the next
    step. Profiles are averaged over the weeks of each season.
    """
    kalman = kalman or KalmanConfig()
    G = m.C @ m.Big
    if np.linalg.matrix_rank(G) < G.shape[1]:
        raise IdentifiabilityError("C Big does not have full column rank",
                                   columns=tuple(m.zone_names))
    P = 7 * MINUTES_PER_DAY // data.step_minutes
    lookback = lookback or 2 * MINUTES_PER_DAY // data.step_minutes
    U, V = model_inputs(m, data)
    out = {}
    for season, ws in weeks.items():
        estimates = []
        for w in ws:
            s = data.index_of(int(w.timestamps[0]))
            if s >= lookback:
                x0 = kalman_init(m, data.zone_temps[s - lookback:s + 1], U[s - lookback:s],
                                 V[s - lookback:s], None,
                                 KalmanConfig(kalman.process, kalman.measurement, min(kalman.burn_in, lookback),
                                              kalman.initial))
            else:
                burn = min(kalman.burn_in, len(w) - 1)
                x0 = kalman_init(m, w.zone_temps[:burn + 1], U[s:s + burn], V[s:s + burn], None,
                                 KalmanConfig(kalman.process, kalman.measurement, burn, kalman.initial),
                                 anchor="start")
            steps = min(P, len(data) - 1 - s)
            est = week_gains_v(m, data, s, x0, steps)
            if steps < P:  # no sample after the week: reuse the last estimate
                est = np.vstack([est, np.repeat(est[-1:], P - steps, axis=0)])
            pos = (np.asarray(w.positions[:1]) + np.arange(P)) % P
            prof = np.empty_like(est)
            prof[pos] = est
            estimates.append(prof)
        if estimates:
            out[Season(season)] = np.mean(estimates, axis=0)
    return out
