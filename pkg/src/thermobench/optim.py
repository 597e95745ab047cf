"""Dense numerical kernels shared by identification and MPC.

* :func:`solve_qp` -- primal active-set method for convex QPs with bounds,
  linear inequalities and equalities. Handles singular (PSD) Hessians and
  accepts a warm-start point and working set.
* :func:`solve_nls` -- multi-start derivative-free least squares using
  Nelder-Mead simplex searches with restarts and a log transform for
  parameters that must stay positive.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import (
    ConfigurationError,
    EvaluationError,
    InfeasibleError,
    NumericalError,
    UnboundedError,
)


def thread_cap() -> int:
    """Worker count allowed by ``THERMOBENCH_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("THERMOBENCH_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# quadratic programming


@dataclass
class Qp:
    """``min 1/2 x'Hx + g'x  s.t.  A_ineq x <= b_ineq, A_eq x = b_eq, lo <= x <= hi``."""

    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ConfigurationError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise ConfigurationError("H must be symmetric")
        self.A_ineq, self.b_ineq = _rows(self.A_ineq, self.b_ineq, n, "inequality")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(n)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(n)
        if np.any(self.lo > self.hi):
            raise ConfigurationError("lower bounds exceed upper bounds")

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)


def _rows(A, b, n, what):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (b.size, n):
        raise ConfigurationError(f"{what} rows have shape {A.shape}, expected {(b.size, n)}")
    return A, b


@dataclass
class QpResult:
    x: np.ndarray
    active_set: tuple
    objective: float
    multipliers: dict
    iterations: int
    kkt: dict = field(default_factory=dict)


def _constraint_table(p: Qp):
    """Stack every inequality as ``G x <= h`` with a label per row."""
    rows, rhs, labels = [p.A_ineq], [p.b_ineq], [("ineq", i) for i in range(p.b_ineq.size)]
    eye = np.eye(p.n)
    up = np.flatnonzero(np.isfinite(p.hi))
    lo = np.flatnonzero(np.isfinite(p.lo))
    rows += [eye[up], -eye[lo]]
    rhs += [p.hi[up], -p.lo[lo]]
    labels += [("upper", int(i)) for i in up] + [("lower", int(i)) for i in lo]
    return np.vstack(rows), np.concatenate(rhs), labels


def _phase_one(p: Qp, G, h, tol):
    """Find a feasible point or raise with the minimum total violation."""
    n, m, me = p.n, h.size, p.b_eq.size
    # variables: x, s (ineq slack), t+ , t- (equality slacks)
    c = np.concatenate([np.zeros(n), np.ones(m + 2 * me)])
    A_ub = np.hstack([G, -np.eye(m), np.zeros((m, 2 * me))]) if m else None
    A_eq = (np.hstack([p.A_eq, np.zeros((me, m)), -np.eye(me), np.eye(me)]) if me else None)
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in zip(p.lo, p.hi)] + [(0, None)] * (m + 2 * me)
    res = linprog(c, A_ub=A_ub, b_ub=h if m else None, A_eq=A_eq, b_eq=p.b_eq if me else None,
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise NumericalError(f"phase-1 LP failed: {res.message}")
    if res.fun > max(tol, 1e-9) * (1.0 + np.abs(h).sum() + np.abs(p.b_eq).sum()):
        raise InfeasibleError("QP constraints are infeasible", certificate=float(res.fun))
    return np.clip(res.x[:n], p.lo, p.hi)


def _null_space(Aw, n):
    if Aw.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(Aw)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


def solve_qp(p: Qp, tol: float = 1e-8, x0=None, working_set: Sequence | None = None,
             max_iter: int | None = None) -> QpResult:
    """Solve a convex QP with a primal active-set method.

    Parameters
    ----------
    p : Qp
        Problem data; ``H`` must be positive semidefinite.
    tol : float
        Feasibility / multiplier-sign tolerance; the returned KKT residuals
        are at or below this level for well-scaled problems.
    x0, working_set : optional
        Warm start. ``x0`` is used if feasible; labels in ``working_set``
        (as returned in ``QpResult.active_set``) seed the working set when
        they are tight at the starting point.

    Raises
    ------
    InfeasibleError
        Empty feasible set; ``certificate`` is the minimum total violation.
    UnboundedError
        The objective decreases without bound along a feasible ray.
    """
    n = p.n
    scale = max(1.0, float(np.max(np.abs(p.H), initial=0.0)))
    eig_min = float(np.linalg.eigvalsh(p.H).min()) if n else 0.0
    if eig_min < -1e-9 * scale:
        raise ConfigurationError(f"H is not positive semidefinite (min eigenvalue {eig_min:.3g})")
    G, h, labels = _constraint_table(p)
    label_index = {lab: i for i, lab in enumerate(labels)}
    me = p.b_eq.size

    def feasible(x):
        ok_ineq = np.all(G @ x - h <= tol * (1 + np.abs(h))) if h.size else True
        ok_eq = np.all(np.abs(p.A_eq @ x - p.b_eq) <= tol * (1 + np.abs(p.b_eq))) if me else True
        return ok_ineq and ok_eq

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = np.clip(x, p.lo, p.hi)
    if not feasible(x):
        x = _phase_one(p, G, h, tol)
    if not feasible(x):
        raise NumericalError("phase-1 point is not feasible within tolerance")

    work: list[int] = []

    def try_add(i):
        rows = np.vstack([p.A_eq] + [G[j][None] for j in work] + [G[i][None]])
        if np.linalg.matrix_rank(rows, tol=1e-10) == rows.shape[0]:
            work.append(i)

    if working_set:
        for lab in working_set:
            i = label_index.get(tuple(lab))
            if i is not None and i not in work and abs(G[i] @ x - h[i]) <= tol * (1 + abs(h[i])):
                try_add(i)

    max_iter = max_iter or 50 * (n + h.size + 10)
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        grad = p.H @ x + p.g
        Aw = np.vstack([p.A_eq, G[work]]) if work else p.A_eq
        Z = _null_space(Aw, n)
        if Z.shape[1]:
            M = Z.T @ p.H @ Z
            M = 0.5 * (M + M.T)
            r = Z.T @ grad
            lam_m, V = np.linalg.eigh(M)
            flat = lam_m <= 1e-11 * scale
            r_flat = V[:, flat].T @ r
            if np.linalg.norm(r_flat) > 1e-11 * (1.0 + np.linalg.norm(grad)):
                step = -Z @ (V[:, flat] @ r_flat)
                newton = False
            else:
                curved = ~flat
                step = -Z @ (V[:, curved] @ ((V[:, curved].T @ r) / lam_m[curved]))
                newton = True
        else:
            step = np.zeros(n)
            newton = True

        if np.linalg.norm(step) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            if Aw.shape[0]:
                lam, *_ = np.linalg.lstsq(Aw.T, -grad, rcond=None)
            else:
                lam = np.zeros(0)
            lam_ineq = lam[me:]
            if lam_ineq.size == 0 or lam_ineq.min() >= -tol:
                break
            work.pop(int(np.argmin(lam_ineq)))
            continue

        Gp = G @ step
        alpha, block = (1.0 if newton else np.inf), None
        in_work = np.zeros(h.size, dtype=bool)
        in_work[work] = True
        cand = np.flatnonzero((Gp > 1e-14 * (1 + np.abs(G).sum(axis=1))) & ~in_work)
        if cand.size:
            ratios = np.maximum(h[cand] - G[cand] @ x, 0.0) / Gp[cand]
            j = int(np.argmin(ratios))
            if ratios[j] < alpha:
                alpha, block = float(ratios[j]), int(cand[j])
        if not np.isfinite(alpha):
            raise UnboundedError("objective is unbounded below along a feasible direction")
        x = x + alpha * step
        if block is not None:
            work.append(block)
    else:
        raise NumericalError(f"active-set QP did not converge in {max_iter} iterations")

    mult = {labels[i]: float(lam[me + k]) for k, i in enumerate(work)} if lam.size else {}
    full = np.zeros(h.size)
    for k, i in enumerate(work):
        full[i] = lam[me + k]
    grad = p.H @ x + p.g
    eq_l = lam[:me] if lam.size else np.zeros(me)
    stat = grad + G.T @ full + (p.A_eq.T @ eq_l if me else 0.0)
    slack = G @ x - h if h.size else np.zeros(0)
    kkt = {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(max(np.max(slack, initial=0.0),
                            np.max(np.abs(p.A_eq @ x - p.b_eq), initial=0.0) if me else 0.0)),
        "dual": float(max(0.0, -full.min(initial=0.0))),
        "complementarity": float(np.max(np.abs(full * slack), initial=0.0)),
    }
    return QpResult(x=x, active_set=tuple(labels[i] for i in work), objective=p.objective(x),
                    multipliers=mult, iterations=it, kkt=kkt)


# --------------------------------------------------------------------------
# nonlinear least squares


@dataclass
class NlsProblem:
    """Residual oracle plus search settings.

    Components flagged in ``positive`` are searched as
    ``floor + exp(z)`` so they stay strictly above ``floor``.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    dim: int
    starts: Sequence[Sequence[float]]
    positive: Sequence[bool] | None = None
    floor: Sequence[float] | float = 0.0

    def __post_init__(self):
        self.positive = (np.zeros(self.dim, dtype=bool) if self.positive is None
                         else np.asarray(self.positive, dtype=bool).reshape(self.dim))
        self.floor = np.broadcast_to(np.asarray(self.floor, dtype=float), (self.dim,)).copy()
        starts = [np.asarray(s, dtype=float).reshape(self.dim) for s in self.starts]
        if not starts:
            raise ConfigurationError("at least one initial guess is required")
        for s in starts:
            if np.any(s[self.positive] <= self.floor[self.positive]):
                raise ConfigurationError("initial guesses must respect positivity floors")
        self.starts = starts

    def to_search(self, theta):
        z = np.asarray(theta, dtype=float).copy()
        z[self.positive] = np.log(z[self.positive] - self.floor[self.positive])
        return z

    def from_search(self, z):
        theta = np.asarray(z, dtype=float).copy()
        theta[self.positive] = self.floor[self.positive] + np.exp(z[self.positive])
        return theta


@dataclass
class NlsResult:
    theta: np.ndarray
    sse: float
    evaluations: int
    trace: np.ndarray
    start_index: int
    per_start_sse: list[float]


def _sse(problem, z):
    try:
        r = np.asarray(problem.residual(problem.from_search(z)), dtype=float)
    except NumericalError:
        return np.inf
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(r @ r)


def _run_start(problem, z0, budget, rel_tol, simplex_step):
    count = 0
    best = [np.inf, z0.copy()]
    trace = []

    def fun(z):
        nonlocal count
        count += 1
        f = _sse(problem, z)
        if f < best[0]:
            best[0], best[1] = f, np.array(z, dtype=float)
        trace.append(best[0])
        return f

    f0 = fun(z0)
    if not np.isfinite(f0):
        return best[0], best[1], trace, count
    while count < budget:
        z = best[1]
        simplex = np.vstack([z] + [z + simplex_step * max(1.0, abs(z[i])) * np.eye(z.size)[i]
                                   for i in range(z.size)])
        before = best[0]
        minimize(fun, z, method="Nelder-Mead",
                 options={"maxfev": budget - count, "initial_simplex": simplex,
                          "xatol": 1e-10, "fatol": rel_tol * max(before, 1e-300),
                          "adaptive": z.size > 4})
        if before - best[0] <= rel_tol * max(before, 1e-300):
            break
    return best[0], best[1], trace, count


def solve_nls(problem: NlsProblem, budget: int | None = None, rel_tol: float = 1e-9,
              simplex_step: float = 0.1, threads: int | None = None) -> NlsResult:
    """Minimize the residual sum of squares from every initial guess.

    The evaluation ``budget`` (default ``500 * dim``) is shared evenly
    across starts. Each start runs Nelder-Mead, restarting from its best
    point with a fresh simplex until a restart improves the SSE by less than
    ``rel_tol`` relative. Starts are processed in a canonical (sorted) order,
    so the result does not depend on how the guesses are listed; equal SSEs
    resolve to the first in that order.
    """
    dim = problem.dim
    budget = 500 * dim if budget is None else int(budget)
    if budget < 50 * dim:
        raise ConfigurationError(f"budget {budget} is below 50 * dim = {50 * dim}")
    order = sorted(range(len(problem.starts)), key=lambda i: tuple(problem.starts[i]))
    starts = [problem.to_search(problem.starts[i]) for i in order]
    per = max(budget // len(starts), 2 * dim + 2)
    workers = min(threads or thread_cap(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda z: _run_start(problem, z, per, rel_tol, simplex_step), starts))
    else:
        runs = [_run_start(problem, z, per, rel_tol, simplex_step) for z in starts]
    sses = [r[0] for r in runs]
    if not np.any(np.isfinite(sses)):
        raise EvaluationError("every initial guess produced a non-finite residual")
    k = int(np.argmin(sses))
    trace = np.minimum.accumulate(np.concatenate([np.asarray(r[2], dtype=float) for r in runs]))
    return NlsResult(
        theta=problem.from_search(runs[k][1]),
        sse=float(sses[k]),
        evaluations=int(sum(r[3] for r in runs)),
        trace=trace,
        start_index=order[k],
        per_start_sse=[float(sses[order.index(i)]) for i in range(len(order))],
    )
