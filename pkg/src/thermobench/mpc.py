"""Energy-minimizing receding-horizon control for both model families.

Each solve minimizes ``sum_k |u(k)|^2 + rho |eps|_2`` over a horizon of
``N`` steps subject to the comfort band on predicted temperatures and
input bounds softened by one slack vector ``eps`` (one entry per input
channel, shared by every step of the horizon).

The hard-constrained problem is tried first; when it is feasible the
returned slack is exactly zero. Otherwise the slack problem is solved,
with the Euclidean norm handled by majorize-minimize iterations over
weighted squared norms. If even the state constraints cannot be met, a
heavily penalized state slack keeps the controller running and the step
is flagged.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .datadriven import DataDrivenModel
from .errors import ConfigurationError, InfeasibleError, NumericalError, ShapeError
from .optim import Qp, solve_qp
from .rcnet.kalman import KalmanConfig, kalman_step
from .rcnet.model import RcModel, simulate

STATE_SLACK_PENALTY = 1e6
REGULARIZATION = 1e-10
VIOLATION_TOL = 1e-3


@dataclass
class MpcConfig:
    """Controller settings.

    ``u_min``/``u_max`` are per input channel (scalars broadcast); ``None``
    takes the bounds stored with the model.
    """

    horizon: int = 3
    t_min: float = 20.0
    t_max: float = 22.0
    u_min: np.ndarray | float | None = None
    u_max: np.ndarray | float | None = None
    rho: float = 100.0
    sl_max_iters: int = 10
    sl_tol: float = 1e-4
    mm_iters: int = 50
    mm_tol: float = 1e-10

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if not self.t_min < self.t_max:
            raise ConfigurationError("t_min must be below t_max")
        if self.rho <= 0:
            raise ConfigurationError("rho must be positive")
        if self.u_min is not None and self.u_max is not None:
            if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
                raise ConfigurationError("u_min exceeds u_max")

    def bounds(self, n_inputs: int, default=None) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = (None, None) if default is None else default
        lo = self.u_min if self.u_min is not None else lo
        hi = self.u_max if self.u_max is not None else hi
        if lo is None or hi is None:
            raise ConfigurationError("input bounds are required (config or model)")
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n_inputs,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n_inputs,)).copy()
        if np.any(lo > hi):
            raise ConfigurationError("u_min exceeds u_max")
        return lo, hi

    def to_dict(self) -> dict:
        def enc(b):
            return None if b is None else np.asarray(b, dtype=float).tolist()
        return {"horizon": self.horizon, "t_min": self.t_min, "t_max": self.t_max,
                "u_min": enc(self.u_min), "u_max": enc(self.u_max), "rho": self.rho,
                "sl_max_iters": self.sl_max_iters, "sl_tol": self.sl_tol}

    @classmethod
    def from_dict(cls, d) -> "MpcConfig":
        d = dict(d)
        for k in ("u_min", "u_max"):
            if d.get(k) is not None:
                d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)


@dataclass
class MpcStepResult:
    u: np.ndarray  # applied input
    predicted: np.ndarray  # [N x n_out] predicted temperatures
    slack: np.ndarray  # eps, one per input channel
    stage_cost: float  # |u|^2 of the applied input
    status: str  # "optimal", "slack", "state_slack", "sl_not_converged"
    plan: np.ndarray | None = None  # [N x n_inputs]
    objective: float = 0.0
    sl_iterations: int = 0
    state_slack: float = 0.0


@dataclass
class ClosedLoopRun:
    steps: list
    temperatures: np.ndarray  # [T+1 x n_out] realized
    total_cost: float
    violation_steps: int
    violation_minutes: int
    max_violation: float
    fallback_steps: int
    solve_times: np.ndarray
    timestamps: np.ndarray | None = None
    rho: float = 100.0
    meta: dict = field(default_factory=dict)

    @property
    def inputs(self) -> np.ndarray:
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([s.u for s in self.steps])

    @property
    def slacks(self) -> np.ndarray:
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([s.slack for s in self.steps])

    def summary(self) -> dict:
        st = self.solve_times
        return {
            "steps": len(self.steps),
            "total_cost": self.total_cost,
            "input_cost": float(sum(s.stage_cost for s in self.steps)),
            "slack_norm_sum": float(sum(np.linalg.norm(s.slack) for s in self.steps)),
            "violation_steps": self.violation_steps,
            "violation_minutes": self.violation_minutes,
            "max_violation": self.max_violation,
            "fallback_steps": self.fallback_steps,
            "sl_not_converged": sum(s.status == "sl_not_converged" for s in self.steps),
            "solve_time_total": float(st.sum()) if st.size else 0.0,
            "solve_time_mean": float(st.mean()) if st.size else 0.0,
            "solve_time_max": float(st.max()) if st.size else 0.0,
            "temperature_min": float(self.temperatures.min()) if self.temperatures.size else None,
            "temperature_max": float(self.temperatures.max()) if self.temperatures.size else None,
            **self.meta,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n_u = self.steps[0].u.size if self.steps else 0
            n_y = self.temperatures.shape[1]
            w.writerow(["step", "time"] + [f"u{i}" for i in range(n_u)] + [f"T{i}" for i in range(n_y)]
                       + ["slack_norm", "stage_cost", "status"])
            for k, s in enumerate(self.steps):
                t = "" if self.timestamps is None else int(self.timestamps[k])
                w.writerow([k, t] + [f"{x:.10g}" for x in s.u]
                           + [f"{x:.10g}" for x in self.temperatures[k + 1]]
                           + [f"{np.linalg.norm(s.slack):.10g}", f"{s.stage_cost:.10g}", s.status])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# condensed horizon problem


@dataclass
class _Horizon:
    """Outputs over the horizon as ``Y = Phi @ U + y_free`` (U stacked by step)."""

    Phi: np.ndarray  # [N*n_out x N*n_u]
    y_free: np.ndarray  # [N*n_out]
    n_out: int
    n_u: int
    N: int


def _solve_horizon(h: _Horizon, cfg: MpcConfig, lo, hi, warm=None):
    """Returns ``(U, eps, state_slack, status, objective)``."""
    N, nu = h.N, h.n_u
    nU = N * nu
    G = np.vstack([h.Phi, -h.Phi])
    b = np.concatenate([cfg.t_max - h.y_free, h.y_free - cfg.t_min])
    H = 2.0 * np.eye(nU) + REGULARIZATION * np.eye(nU)
    LO, HI = np.tile(lo, N), np.tile(hi, N)
    try:
        r = solve_qp(Qp(H=H, g=np.zeros(nU), A_ineq=G, b_ineq=b, lo=LO, hi=HI), x0=warm)
        return r.x, np.zeros(nu), 0.0, "optimal", r.objective
    except InfeasibleError:
        pass

    # input slack: variables [U, eps]; lo - eps <= u <= hi + eps
    sel = np.tile(np.eye(nu), (N, 1))
    A_in = np.vstack([np.hstack([np.eye(nU), -sel]), np.hstack([-np.eye(nU), -sel])])
    b_in = np.concatenate([HI, -LO])
    A_state = np.hstack([G, np.zeros((G.shape[0], nu))])
    A = np.vstack([A_state, A_in])
    bb = np.concatenate([b, b_in])
    lo_v = np.concatenate([np.full(nU, -np.inf), np.zeros(nu)])

    def solve_weighted(w_eps):
        Hs = np.zeros((nU + nu, nU + nu))
        Hs[:nU, :nU] = H
        Hs[nU:, nU:] = np.diag(w_eps)
        return solve_qp(Qp(H=Hs, g=np.zeros(nU + nu), A_ineq=A, b_ineq=bb, lo=lo_v))

    try:
        # start from the squared-norm surrogate rho |eps|^2, then refine toward rho |eps|_2
        r = solve_weighted(np.full(nu, 2.0 * cfg.rho))
        z = r.x
        prev = np.inf
        for _ in range(cfg.mm_iters):
            t = max(np.linalg.norm(z[nU:]), 1e-12)
            r = solve_weighted(np.full(nu, cfg.rho / t))
            z = r.x
            obj = float(z[:nU] @ z[:nU] + cfg.rho * np.linalg.norm(z[nU:]))
            if abs(prev - obj) <= cfg.mm_tol * max(1.0, abs(obj)):
                break
            prev = obj
        eps = np.maximum(z[nU:], 0.0)
        obj = float(z[:nU] @ z[:nU] + cfg.rho * np.linalg.norm(eps))
        return z[:nU], eps, 0.0, "slack", obj
    except InfeasibleError:
        pass

    # state slack fallback: variables [U, eps, s]
    m_s = G.shape[0]
    A_fb = np.vstack([np.hstack([G, np.zeros((m_s, nu)), -np.eye(m_s)]),
                      np.hstack([A_in, np.zeros((A_in.shape[0], m_s))])])
    n_all = nU + nu + m_s
    Hf = np.zeros((n_all, n_all))
    Hf[:nU, :nU] = H
    Hf[nU:nU + nu, nU:nU + nu] = 2.0 * cfg.rho * np.eye(nu)
    Hf[nU + nu:, nU + nu:] = 2.0 * STATE_SLACK_PENALTY * np.eye(m_s)
    g = np.concatenate([np.zeros(nU + nu), np.full(m_s, STATE_SLACK_PENALTY)])
    lo_f = np.concatenate([np.full(nU, -np.inf), np.zeros(nu + m_s)])
    r = solve_qp(Qp(H=Hf, g=g, A_ineq=A_fb, b_ineq=np.concatenate([b, b_in]), lo=lo_f))
    z = r.x
    eps = np.maximum(z[nU:nU + nu], 0.0)
    obj = float(z[:nU] @ z[:nU] + cfg.rho * np.linalg.norm(eps))
    return z[:nU], eps, float(np.max(z[nU + nu:], initial=0.0)), "state_slack", obj


# --------------------------------------------------------------------------
# Model A


def model_a_bounds(model: DataDrivenModel, cfg: MpcConfig):
    default = model.metadata.get("u_bounds") if model.metadata else None
    return cfg.bounds(model.n, default)


def _check_forecast(v, N, what="disturbance forecast"):
    V = np.atleast_2d(np.asarray(v, dtype=float))
    if V.shape[0] < N:
        raise ShapeError(f"{what} covers {V.shape[0]} steps, horizon needs {N}")
    return V[:N]


def model_a_horizon(model: DataDrivenModel, x0, v, season, N, start_position=0, gains=None) -> _Horizon:
    n = model.n
    V = _check_forecast(v, N)
    x0 = np.asarray(x0, dtype=float).reshape(n)
    if gains is None:
        if season is None:
            Q = np.zeros((N, n))
        else:
            prof = model.gains_for(season)
            Q = prof[(np.arange(N) + start_position) % prof.shape[0]]
    else:
        Q = np.asarray(gains, dtype=float).reshape(N, n)
    A, B = model.A, model.B
    Phi = np.zeros((N * n, N * n))
    y_free = np.empty(N * n)
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    x = x0
    for j in range(N):
        x = A @ x + model.C @ V[j] + Q[j]
        y_free[j * n:(j + 1) * n] = x
        for i in range(j + 1):
            Phi[j * n:(j + 1) * n, i * n:(i + 1) * n] = powers[j - i] @ B
    return _Horizon(Phi, y_free, n, n, N)


def solve_step_model_a(model: DataDrivenModel, x0, v, season, cfg: MpcConfig, start_position: int = 0,
                       gains=None, warm=None) -> MpcStepResult:
    """One horizon solve for the data-driven model; returns the first input."""
    lo, hi = model_a_bounds(model, cfg)
    h = model_a_horizon(model, x0, v, season, cfg.horizon, start_position, gains)
    U, eps, ss, status, obj = _solve_horizon(h, cfg, lo, hi, warm)
    U = U.reshape(cfg.horizon, model.n)
    pred = (h.Phi @ U.ravel() + h.y_free).reshape(cfg.horizon, model.n)
    u0 = U[0]
    return MpcStepResult(u0, pred, eps, float(u0 @ u0), status, U, obj, 0, ss)


# --------------------------------------------------------------------------
# Model B


def model_b_bounds(model: RcModel, cfg: MpcConfig):
    return cfg.bounds(model.n_inputs, model.u_bounds)


def _rc_gains(model: RcModel, season, N, start_position, gains):
    if gains is not None:
        return np.asarray(gains, dtype=float).reshape(N, model.n_zones)
    mode = "const" if season is None else "const+seasonal"
    return model.gains_sequence(N, mode, season, start_position)


def model_b_horizon(model: RcModel, x0, v, F, X_bar) -> _Horizon:
    """Input-affine prediction with the bilinear terms frozen at ``X_bar``."""
    N = F.shape[0]
    V = _check_forecast(v, N)
    n, nu, ny = model.n_states, model.n_inputs, model.n_zones
    Phi_x = np.zeros((N * n, N * nu))
    x_free = np.empty((N, n))
    Gs = [model.input_gain(X_bar[k], V[k]) for k in range(N)]
    x = np.asarray(x0, dtype=float)
    block = np.zeros((n, N * nu))
    for j in range(N):
        x = model.A @ x + model.Bv @ V[j] + model.Big @ F[j]
        x_free[j] = x
        block = model.A @ block
        block[:, j * nu:(j + 1) * nu] = Gs[j]
        Phi_x[j * n:(j + 1) * n] = block
    C = model.C
    Phi = np.vstack([C @ Phi_x[j * n:(j + 1) * n] for j in range(N)])
    y_free = (x_free @ C.T).ravel()
    return _Horizon(Phi, y_free, ny, nu, N)


def _rollout(model: RcModel, x0, U, V, F):
    return simulate(model, x0, U, V, f=F).states


def solve_step_model_b(model: RcModel, x0, v, season, cfg: MpcConfig, start_position: int = 0,
                       gains=None, warm=None) -> MpcStepResult:
    """Successive linearization: freeze the state trajectory, solve the
    input-affine QP, re-simulate the bilinear model, repeat."""
    N = cfg.horizon
    lo, hi = model_b_bounds(model, cfg)
    V = _check_forecast(v, N)
    F = _rc_gains(model, season, N, start_position, gains)
    x0 = np.asarray(x0, dtype=float).reshape(model.n_states)
    U = np.zeros((N, model.n_inputs)) if warm is None else np.asarray(warm, dtype=float).reshape(N, -1)
    U = np.clip(U, lo, hi)
    X = _rollout(model, x0, U, V, F)
    best = None
    status = "sl_not_converged"
    it = 0
    for it in range(1, cfg.sl_max_iters + 1):
        h = model_b_horizon(model, x0, V, F, X[:N])
        Uv, eps, ss, st, obj = _solve_horizon(h, cfg, lo, hi, U.ravel())
        U = Uv.reshape(N, model.n_inputs)
        X_new = _rollout(model, x0, U, V, F)
        change = float(np.max(np.abs(X_new - X)))
        X = X_new
        best = (U.copy(), eps, ss, st, obj)
        if change < cfg.sl_tol:
            status = st
            break
    U, eps, ss, st, obj = best
    pred = X[1:] @ model.C.T
    u0 = U[0]
    return MpcStepResult(u0, pred, eps, float(u0 @ u0), status, U, obj, it, ss)


# --------------------------------------------------------------------------
# receding horizon


def _violation(temps, cfg):
    over = np.maximum(temps - cfg.t_max, 0.0)
    under = np.maximum(cfg.t_min - temps, 0.0)
    return np.maximum(over, under).max(axis=1) if temps.size else np.zeros(0)


def run_receding_horizon(model, x0, v, season, cfg: MpcConfig, steps: int, start_position: int = 0,
                         plant=None, plant_x0=None, plant_gains=None, to_plant=None,
                         kalman: KalmanConfig | None = None, timestamps=None,
                         step_minutes: int | None = None) -> ClosedLoopRun:
    """Closed-loop rollout over ``steps`` solves.

    Without ``plant`` the first input is applied to the controller's own
    model, which supplies the next initial state (open-loop propagation).
    With ``plant`` (an :class:`RcModel` with state ``plant_x0`` and gains
    ``plant_gains [steps x n_zones]``) the input is applied to the plant
    and the controller is re-initialized from its measured outputs: a
    data-driven controller takes them as its state, an RC controller runs
    a Kalman filter. ``to_plant`` maps controller inputs to plant inputs
    (e.g. zone flows to VAV flows).
    """
    N = cfg.horizon
    is_a = isinstance(model, DataDrivenModel)
    if not is_a and not isinstance(model, RcModel):
        raise ConfigurationError("model must be a DataDrivenModel or an RcModel")
    V = np.atleast_2d(np.asarray(v, dtype=float))
    if steps < 0:
        raise ConfigurationError("steps must be non-negative")
    if steps and V.shape[0] < steps + N - 1:
        raise ShapeError(f"disturbances cover {V.shape[0]} steps, run needs {steps + N - 1}")
    dt = step_minutes or (model.step_minutes if hasattr(model, "step_minutes") else 15)
    n_out = model.n if is_a else model.n_zones
    x = np.asarray(x0, dtype=float).reshape(n_out if is_a else model.n_states).copy()
    if plant is not None:
        if plant_x0 is None:
            raise ConfigurationError("plant mode needs the plant's initial state")
        xp = np.asarray(plant_x0, dtype=float).copy()
        Fp = (np.tile(plant.gamma.f_ig_const, (steps, 1)) if plant_gains is None
              else np.asarray(plant_gains, dtype=float))
        temps0 = plant.C @ xp
        P = None
        if not is_a:
            kalman = kalman or KalmanConfig()
            P = kalman.initial * np.eye(model.n_states)
    else:
        temps0 = x if is_a else model.C @ x
    temps = np.empty((steps + 1, n_out if plant is None else plant.n_zones))
    temps[0] = temps0
    results = []
    times = np.empty(steps)
    warm = None
    total = 0.0
    fallbacks = 0
    for k in range(steps):
        Vh = V[k:k + N]
        if Vh.shape[0] < N:
            Vh = np.vstack([Vh, np.repeat(Vh[-1:], N - Vh.shape[0], axis=0)])
        t0 = time.perf_counter()
        try:
            if is_a:
                r = solve_step_model_a(model, x, Vh, season, cfg, start_position + k, warm=warm)
            else:
                r = solve_step_model_b(model, x, Vh, season, cfg, start_position + k, warm=warm)
        except NumericalError as exc:
            raise type(exc)(f"MPC solve failed at step {k}: {exc}") from exc
        times[k] = time.perf_counter() - t0
        results.append(r)
        total += r.stage_cost + cfg.rho * float(np.linalg.norm(r.slack))
        fallbacks += r.status == "state_slack"
        if r.plan is not None and N > 1:
            warm = np.vstack([r.plan[1:], r.plan[-1:]]).ravel()
        # advance
        if plant is None:
            if is_a:
                q = (np.zeros(model.n) if season is None
                     else model.gains_for(season)[(start_position + k) % model.gains_for(season).shape[0]])
                x = model.A @ x + model.B @ r.u + model.C @ V[k] + q
                temps[k + 1] = x
            else:
                f = _rc_gains(model, season, 1, start_position + k, None)[0]
                x = simulate(model, x, r.u[None], V[k:k + 1], f=f[None]).states[-1]
                temps[k + 1] = model.C @ x
        else:
            up = r.u if to_plant is None else to_plant(r.u)
            xp = simulate(plant, xp, np.atleast_2d(up), V[k:k + 1], f=Fp[k:k + 1]).states[-1]
            y = plant.C @ xp
            temps[k + 1] = y
            if is_a:
                x = y.copy()
            else:
                f = _rc_gains(model, season, 1, start_position + k, None)[0]
                x, P = kalman_step(model, x, P, y, r.u, V[k], f, kalman)
    viol = _violation(temps[1:], cfg)
    bad = viol > VIOLATION_TOL
    return ClosedLoopRun(
        steps=results, temperatures=temps, total_cost=float(total),
        violation_steps=int(bad.sum()), violation_minutes=int(bad.sum()) * int(dt),
        max_violation=float(viol.max(initial=0.0)), fallback_steps=int(fallbacks),
        solve_times=times, timestamps=None if timestamps is None else np.asarray(timestamps)[:steps],
        rho=cfg.rho, meta={"mode": "open" if plant is None else "plant",
                           "model": "a" if is_a else "b"})
