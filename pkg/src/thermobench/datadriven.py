"""Data-driven difference-equation model (Model A).

The zone temperatures follow

    x(k+1) = A x(k) + B u(k) + C v(k) + q(k) + noise

with ``u`` the per-zone supply airflow, ``v`` the known disturbances
(ambient and supply-air temperature) and ``q`` an unknown weekly internal
gains profile. The profile is removed by subtracting time-of-week smooths
from every channel, the coefficients are fitted by constrained least
squares with Gaussian priors, and the gains are recovered afterwards from
the smooths.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    IdentifiabilityError,
    InsufficientExcitationError,
    ShapeError,
)
from .optim import Qp, solve_qp
from .smoother import SmootherConfig, lwlr_smooth, select_bandwidth
from .timeseries import SEASONS, Dataset, Season, steps_per_week

ORIENTATIONS = ("E", "N", "S", "W")
A_DIAG_BOUNDS = (1e-6, 1.0 - 1e-6)


# --------------------------------------------------------------------------
# topology


@dataclass(frozen=True, eq=False)
class ZoneTopology:
    """Zones, which of them share a wall, exterior exposure and VAV mapping.

    Parameters
    ----------
    zone_names : sequence of str
    adjacency : (n, n) bool array
        Symmetric with a false diagonal.
    exterior : sequence of sets of orientation letters, one per zone
    vav_to_zone : mapping of VAV id to zone name
    floor_areas : optional per-zone floor areas (m^2), used for lumping
        weights and prior scaling
    """

    zone_names: tuple[str, ...]
    adjacency: np.ndarray
    exterior: tuple[frozenset, ...]
    vav_to_zone: Mapping[str, str]
    floor_areas: tuple[float, ...] | None = None

    def __post_init__(self):
        names = tuple(str(z) for z in self.zone_names)
        n = len(names)
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (n, n):
            raise ShapeError(f"adjacency has shape {adj.shape}, expected {(n, n)}")
        if np.any(adj != adj.T) or np.any(np.diag(adj)):
            raise ConfigurationError("adjacency must be symmetric with a false diagonal")
        ext = tuple(frozenset(e) for e in self.exterior)
        if len(ext) != n:
            raise ShapeError("one exterior orientation set per zone is required")
        for e in ext:
            if not e <= set(ORIENTATIONS):
                raise ConfigurationError(f"unknown orientation in {sorted(e)}")
        v2z = dict(self.vav_to_zone)
        for vav, zone in v2z.items():
            if zone not in names:
                raise ConfigurationError(f"VAV {vav!r} maps to unknown zone {zone!r}")
        areas = None
        if self.floor_areas is not None:
            areas = tuple(float(a) for a in self.floor_areas)
            if len(areas) != n or min(areas) <= 0:
                raise ConfigurationError("floor_areas must be positive, one per zone")
        set_ = object.__setattr__
        set_(self, "zone_names", names)
        set_(self, "adjacency", adj)
        set_(self, "exterior", ext)
        set_(self, "vav_to_zone", v2z)
        set_(self, "floor_areas", areas)

    @property
    def n(self) -> int:
        return len(self.zone_names)

    def vav_matrix(self, vav_ids: Sequence[str]) -> np.ndarray:
        """``[n_vav x n_zones]`` 0/1 matrix summing VAV flows into zone flows."""
        M = np.zeros((len(vav_ids), self.n))
        for j, vid in enumerate(vav_ids):
            if vid not in self.vav_to_zone:
                raise ConfigurationError(f"VAV {vid!r} is not mapped to a zone")
            M[j, self.zone_names.index(self.vav_to_zone[vid])] = 1.0
        return M

    def area_fractions(self) -> np.ndarray:
        a = np.ones(self.n) if self.floor_areas is None else np.asarray(self.floor_areas)
        return a / a.sum()

    def a_mask(self) -> np.ndarray:
        return self.adjacency | np.eye(self.n, dtype=bool)

    def c_mask(self, n_dist: int = 2) -> np.ndarray:
        """Ambient coupling only for zones with an exterior wall; supply air always."""
        mask = np.zeros((self.n, n_dist), dtype=bool)
        mask[:, 0] = [bool(e) for e in self.exterior]
        mask[:, 1:] = True
        return mask

    def lumped(self, name: str = "lumped") -> "ZoneTopology":
        outside = frozenset().union(*self.exterior)
        return ZoneTopology((name,), np.zeros((1, 1), bool), (outside,),
                            {v: name for v in self.vav_to_zone}, None)

    def to_dict(self) -> dict:
        return {
            "zone_names": list(self.zone_names),
            "adjacency": self.adjacency.astype(int).tolist(),
            "exterior": [sorted(e) for e in self.exterior],
            "vav_to_zone": dict(self.vav_to_zone),
            "floor_areas": None if self.floor_areas is None else list(self.floor_areas),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ZoneTopology":
        return cls(d["zone_names"], np.asarray(d["adjacency"], bool), d["exterior"],
                   d["vav_to_zone"], d.get("floor_areas"))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# priors


def _as_matrix(value, n, what):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full((n, n), float(a))
    if a.shape != (n, n):
        raise ShapeError(f"{what} must be a scalar or an {(n, n)} matrix")
    return a.copy()


def _as_vector(value, n, what):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.ndim == 2 and a.shape == (n, n):
        if np.any(a - np.diag(np.diag(a))):
            raise ConfigurationError(f"{what}: only diagonal covariances are supported")
        return np.diag(a).copy()
    if a.shape != (n,):
        raise ShapeError(f"{what} must be a scalar, a length-{n} vector or a diagonal matrix")
    return a.copy()


@dataclass(frozen=True, eq=False)
class Priors:
    """Independent Gaussian priors on the entries of A and the diagonal of B.

    ``sigma_a`` and ``sigma_b`` hold variances (a diagonal covariance).
    A variance of ``0`` pins the coefficient to its mean; ``inf`` removes
    the penalty. ``mu_a=None`` asks :func:`fit_model_a` to derive the mean
    from a prior-free fit.
    """

    mu_a: np.ndarray | None
    sigma_a: np.ndarray
    mu_b: np.ndarray
    sigma_b: np.ndarray

    @classmethod
    def build(cls, n: int, mu_a=None, sigma_a=None, mu_b=0.0, sigma_b=0.05 ** 2,
              off_diag_mean: float = 0.01, off_diag_var: float = 0.01 ** 2) -> "Priors":
        """Priors with the usual defaults.

        ``mu_a`` may be a scalar (diagonal value, off-diagonals set to
        ``off_diag_mean``) or a full matrix. ``sigma_a`` defaults to
        ``0.1^2`` on the diagonal and ``off_diag_var`` elsewhere.
        """
        if mu_a is not None:
            mu = np.asarray(mu_a, dtype=float)
            if mu.ndim == 0:
                mu = np.full((n, n), off_diag_mean)
                np.fill_diagonal(mu, float(mu_a))
            elif mu.ndim == 1:
                diag = mu
                mu = np.full((n, n), off_diag_mean)
                np.fill_diagonal(mu, diag)
            mu_a = mu
        if sigma_a is None:
            sigma_a = np.full((n, n), off_diag_var)
            np.fill_diagonal(sigma_a, 0.1 ** 2)
        if np.ndim(mu_b) == 0:
            mu_b = np.full(n, float(mu_b))
        return cls(mu_a, sigma_a, mu_b, sigma_b)

    def __post_init__(self):
        sizes = [np.shape(a)[0] for a in (self.mu_a, self.sigma_a, self.mu_b, self.sigma_b)
                 if a is not None and np.ndim(a) > 0]
        n = sizes[0] if sizes else 1
        set_ = object.__setattr__
        if self.mu_a is not None:
            set_(self, "mu_a", _as_matrix(self.mu_a, n, "mu_a"))
        set_(self, "sigma_a", _as_matrix(self.sigma_a, n, "sigma_a"))
        set_(self, "mu_b", _as_vector(self.mu_b, n, "mu_b"))
        set_(self, "sigma_b", _as_vector(self.sigma_b, n, "sigma_b"))
        for name in ("sigma_a", "sigma_b"):
            s = getattr(self, name)
            if np.any(np.isnan(s)) or np.any(s < 0):
                raise ConfigurationError(f"{name} variances must be non-negative")

    @property
    def n(self) -> int:
        return self.mu_b.size

    def with_mu_a(self, mu_a) -> "Priors":
        return Priors(_as_matrix(mu_a, self.n, "mu_a"), self.sigma_a, self.mu_b, self.sigma_b)

    def to_dict(self) -> dict:
        def enc(a):
            return None if a is None else np.where(np.isinf(a), -1.0, a).tolist()
        return {"mu_a": enc(self.mu_a), "sigma_a": enc(self.sigma_a),
                "mu_b": enc(self.mu_b), "sigma_b": enc(self.sigma_b), "inf_encoded_as": -1.0}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Priors":
        def dec(a):
            if a is None:
                return None
            a = np.asarray(a, dtype=float)
            return np.where(a == -1.0, np.inf, a)
        return cls(dec(d["mu_a"]), dec(d["sigma_a"]), dec(d["mu_b"]), dec(d["sigma_b"]))


def flat_priors(n: int) -> Priors:
    """No prior information at all (every variance infinite)."""
    return Priors(None, np.full((n, n), np.inf), np.zeros(n), np.full(n, np.inf))


# --------------------------------------------------------------------------
# regression data


def zone_flows(d: Dataset, topo: ZoneTopology) -> np.ndarray:
    if d.n_zones != topo.n:
        raise ShapeError(f"dataset has {d.n_zones} zones, topology {topo.n}")
    return d.vav_flows @ topo.vav_matrix(d.vav_ids)


def disturbance_matrix(d: Dataset, include_solar: bool = False) -> np.ndarray:
    v = d.disturbances
    if include_solar:
        if d.solar is None:
            raise ConfigurationError("solar columns requested but the dataset has none")
        v = np.column_stack([v, d.solar])
    return v


@dataclass(frozen=True, eq=False)
class Residualized:
    """Smoothing-differenced regression data for one season.

    Row ``r`` pairs step ``k`` with ``k + 1`` inside a week: ``target`` is
    ``x(k+1) - E[x(k+1) | k]`` and ``dx``, ``du``, ``dv`` are the
    deviations of state, zone flow and disturbances at ``k``.
    """

    target: np.ndarray
    dx: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    bandwidth: float
    n_weeks: int

    @property
    def n_rows(self) -> int:
        return self.target.shape[0]


def _pairs(weeks: Sequence[Dataset], topo: ZoneTopology, include_solar: bool):
    lead, x, u, v, pos = [], [], [], [], []
    for w in weeks:
        if len(w) < 2:
            raise ShapeError("every slice needs at least two samples")
        flows = zone_flows(w, topo)
        dist = disturbance_matrix(w, include_solar)
        lead.append(w.zone_temps[1:])
        x.append(w.zone_temps[:-1])
        u.append(flows[:-1])
        v.append(dist[:-1])
        pos.append(w.positions[:-1].astype(float))
    return (np.vstack(lead), np.vstack(x), np.vstack(u), np.vstack(v), np.concatenate(pos))


def season_bandwidth(weeks: Sequence[Dataset], cfg: SmootherConfig | None = None) -> float:
    """Bandwidth shared by every channel of a season (selected on temperature)."""
    cfg = cfg or SmootherConfig()
    if cfg.bandwidth is not None:
        return float(cfg.bandwidth)
    x = np.vstack([w.zone_temps for w in weeks])
    pos = np.concatenate([w.positions.astype(float) for w in weeks])
    return select_bandwidth(x, pos, cfg)


def residualize(weeks, topo: ZoneTopology, cfg: SmootherConfig | None = None,
                bandwidth: float | None = None, include_solar: bool = False) -> Residualized:
    """Subtract time-of-week smooths from every regression channel.

    ``weeks`` is a Dataset or a list of week slices belonging to one season;
    samples are pooled by time-of-week for smoothing. The lead temperature
    ``x(k+1)`` is smoothed as a channel of its own over the positions of
    ``k``, so with noiseless data and gains that equal their own smooth the
    residual equation holds exactly.
    """
    cfg = cfg or SmootherConfig()
    weeks = [weeks] if isinstance(weeks, Dataset) else list(weeks)
    if not weeks:
        raise ConfigurationError("no data to residualize")
    h = bandwidth if bandwidth is not None else season_bandwidth(weeks, cfg)
    lead, x, u, v, pos = _pairs(weeks, topo, include_solar)
    stacked = np.hstack([lead, x, u, v])
    smooth = lwlr_smooth(stacked, pos, cfg, bandwidth=h).values
    dev = stacked - smooth
    n = topo.n
    return Residualized(
        target=dev[:, :n],
        dx=dev[:, n:2 * n],
        du=dev[:, 2 * n:3 * n],
        dv=dev[:, 3 * n:],
        bandwidth=float(h),
        n_weeks=len(weeks),
    )


# --------------------------------------------------------------------------
# excitation prior


def excitation_ratios(d: Dataset, mask=None, topo: ZoneTopology | None = None):
    """Per-zone sums of ``(x(k+1) - x(k)) / u(k)`` over usable excitation
    steps, and the number of such steps."""
    mask = d.excitation_mask if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (len(d),):
        raise ShapeError("mask length must match the dataset")
    if topo is not None:
        u = zone_flows(d, topo)
    elif d.n_zones == 1:
        u = d.vav_flows.sum(axis=1, keepdims=True)
    elif d.n_vav == d.n_zones:
        u = d.vav_flows
    else:
        raise ConfigurationError("a topology is needed to map VAV flows to zones")
    dx = np.diff(d.zone_temps, axis=0)
    u = u[:-1]
    use = mask[:-1, None] & (u > 0)
    ratio = np.where(use, dx / np.where(u > 0, u, 1.0), 0.0)
    return ratio.sum(axis=0), use.sum(axis=0)


def prior_b_from_excitation(d: Dataset | Sequence[Dataset], mask=None, topo: ZoneTopology | None = None,
                            min_samples: int = 1) -> np.ndarray:
    """Mean of ``(x(k+1) - x(k)) / u(k)`` over excitation steps, per zone.

    Only steps with ``mask[k]`` set and positive zone flow count. A list of
    slices is pooled. Without a topology every VAV column is taken to feed
    the zone of the same index (one-to-one) or, for a single zone, all VAVs
    are summed.
    """
    slices = [d] if isinstance(d, Dataset) else list(d)
    if mask is not None and len(slices) != 1:
        raise ConfigurationError("an explicit mask needs a single dataset")
    sums, counts = 0.0, 0
    for w in slices:
        s, c = excitation_ratios(w, mask, topo)
        sums, counts = sums + s, counts + c
    counts = np.atleast_1d(counts)
    names = slices[0].zone_names if topo is None else topo.zone_names
    if np.any(counts < min_samples) or np.any(counts == 0):
        bad = [names[i] for i in np.flatnonzero((counts < min_samples) | (counts == 0))]
        raise InsufficientExcitationError(f"no usable excitation samples for zone(s) {bad}")
    if np.any(counts < 8):
        warnings.warn(f"fewer than 8 excitation samples for some zones ({counts.min()})",
                      RuntimeWarning, stacklevel=2)
    return sums / counts


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class DataDrivenModel:
    """Identified coefficients plus per-season weekly gains profiles."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    topology: ZoneTopology
    step_minutes: int = 15
    gains: Mapping[Season, np.ndarray] = field(default_factory=dict)
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = self.topology.n
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        B = np.diag(B) if B.ndim == 1 else np.atleast_2d(B)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if A.shape != (n, n) or B.shape != (n, n) or C.shape[0] != n:
            raise ShapeError("coefficient shapes do not match the topology")
        P = steps_per_week(self.step_minutes)
        gains = {}
        for s, g in dict(self.gains).items():
            g = np.asarray(g, dtype=float).reshape(P, n) if np.size(g) == P * n else None
            if g is None:
                raise ShapeError(f"gains profile for {s} must have {P} x {n} entries")
            gains[Season(s)] = g
        set_ = object.__setattr__
        set_(self, "A", A)
        set_(self, "B", B)
        set_(self, "C", C)
        set_(self, "gains", gains)
        set_(self, "metadata", dict(self.metadata))

    @property
    def n(self) -> int:
        return self.topology.n

    def with_gains(self, gains) -> "DataDrivenModel":
        return DataDrivenModel(self.A, self.B, self.C, self.topology, self.step_minutes,
                               gains, self.metadata)

    def gains_for(self, season) -> np.ndarray:
        try:
            return self.gains[Season(season)]
        except (KeyError, ValueError):
            raise ConfigurationError(f"model has no internal-gains profile for season {season}") from None

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def to_dict(self) -> dict:
        return {
            "kind": "data-driven",
            "step_minutes": self.step_minutes,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "topology": self.topology.to_dict(),
            "topology_digest": self.topology.digest(),
            "gains": {str(s): g.tolist() for s, g in self.gains.items()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DataDrivenModel":
        if d.get("kind") != "data-driven":
            raise ConfigurationError("not a data-driven model document")
        topo = ZoneTopology.from_dict(d["topology"])
        return cls(np.asarray(d["A"]), np.asarray(d["B"]), np.asarray(d["C"]), topo,
                   int(d["step_minutes"]), {Season(s): np.asarray(g) for s, g in d["gains"].items()},
                   d.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "DataDrivenModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Bayesian constrained least squares


def _layout(topo: ZoneTopology, n_dist: int):
    """Free coefficient slots as (kind, row, col, label)."""
    names = topo.zone_names
    dist_names = ("Ta", "Ts", "solE", "solN", "solS", "solW")[:n_dist]
    slots = []
    amask = topo.a_mask()
    cmask = topo.c_mask(n_dist)
    for i in range(topo.n):
        for j in range(topo.n):
            if amask[i, j]:
                slots.append(("A", i, j, f"A[{names[i]},{names[j]}]"))
        slots.append(("B", i, i, f"B[{names[i]}]"))
        for j in range(n_dist):
            if cmask[i, j]:
                slots.append(("C", i, j, f"C[{names[i]},{dist_names[j]}]"))
    return slots


def _dependent_columns(X, tol=1e-8):
    """Indices of columns that add nothing to the span of earlier ones."""
    bad = []
    scale = np.linalg.norm(X, axis=0)
    Q = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        if scale[j] == 0:
            bad.append(j)
            continue
        r = col - Q @ (Q.T @ col)
        nr = np.linalg.norm(r)
        if nr <= tol * scale[j]:
            bad.append(j)
        else:
            Q = np.column_stack([Q, r / nr])
    return bad


def identify_bcls(residuals: Mapping[Season, Residualized] | Sequence[Residualized],
                  priors: Priors, topo: ZoneTopology, step_minutes: int = 15,
                  tol: float = 1e-10) -> DataDrivenModel:
    """Bayesian constrained least squares over the stacked seasons.

    Minimizes the summed squared residuals of all seasons plus
    ``sum (theta - mu)^2 / var`` over the entries of A and diag(B), subject
    to ``0 < A_ii < 1``, ``B <= 0``, ``C >= 0`` and the sparsity pattern.
    One coefficient set is shared by all seasons.

    Raises
    ------
    IdentifiabilityError
        If the free regressor columns are linearly dependent.
    """
    parts = list(residuals.values()) if isinstance(residuals, Mapping) else list(residuals)
    if not parts:
        raise ConfigurationError("no residualized data")
    n = topo.n
    if priors.n != n:
        raise ShapeError(f"priors are for {priors.n} zones, topology has {n}")
    n_dist = parts[0].dv.shape[1]
    slots = _layout(topo, n_dist)
    p = len(slots)

    mu = np.zeros(p)
    var = np.full(p, np.inf)
    lo = np.full(p, -np.inf)
    hi = np.full(p, np.inf)
    for s, (kind, i, j, _) in enumerate(slots):
        if kind == "A":
            if priors.mu_a is not None:
                mu[s], var[s] = priors.mu_a[i, j], priors.sigma_a[i, j]
            if i == j:
                lo[s], hi[s] = A_DIAG_BOUNDS
        elif kind == "B":
            mu[s], var[s] = priors.mu_b[i], priors.sigma_b[i]
            hi[s] = 0.0
        else:
            lo[s] = 0.0

    pinned = var == 0
    for s in np.flatnonzero(pinned):
        if not lo[s] <= mu[s] <= hi[s]:
            raise ConfigurationError(f"pinned prior mean for {slots[s][3]} violates its constraint")
        lo[s] = hi[s] = mu[s]

    H = np.zeros((p, p))
    g = np.zeros(p)
    for r in parts:
        for i in range(n):
            cols = [s for s, sl in enumerate(slots) if sl[1] == i]
            X = np.zeros((r.n_rows, len(cols)))
            for c, s in enumerate(cols):
                kind, _, j, _ = slots[s]
                X[:, c] = {"A": r.dx, "B": r.du, "C": r.dv}[kind][:, j]
            H[np.ix_(cols, cols)] += X.T @ X
            g[cols] -= X.T @ r.target[:, i]

    # identifiability of every free coefficient from data alone
    free = np.flatnonzero(~pinned)
    if free.size:
        X_all = []
        for r in parts:
            block = np.zeros((r.n_rows * n, p))
            for s, (kind, i, j, _) in enumerate(slots):
                src = {"A": r.dx, "B": r.du, "C": r.dv}[kind][:, j]
                block[i * r.n_rows:(i + 1) * r.n_rows, s] = src
            X_all.append(block)
        X_all = np.vstack(X_all)[:, free]
        bad = _dependent_columns(X_all)
        if bad:
            labels = tuple(slots[free[b]][3] for b in bad)
            raise IdentifiabilityError(
                f"regressor columns are linearly dependent: {', '.join(labels)}; "
                "add excitation data or pin these coefficients with a zero-variance prior",
                columns=labels)

    penal = np.isfinite(var) & ~pinned
    H[penal, penal] += 1.0 / var[penal]
    g[penal] -= mu[penal] / var[penal]
    # pinned coefficients only enter through their bounds
    H[pinned, :] = 0.0
    H[:, pinned] = 0.0
    g[pinned] = 0.0
    H = 0.5 * (H + H.T)
    # rescale for conditioning; the solution is unchanged
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    d[pinned] = 1.0
    Hs = H / np.outer(d, d)
    res = solve_qp(Qp(H=Hs, g=g / d, lo=lo * d, hi=hi * d), tol=tol)
    theta = res.x / d
    theta[pinned] = mu[pinned]
    theta = np.clip(theta, lo, hi)

    A = np.zeros((n, n))
    B = np.zeros((n, n))
    C = np.zeros((n, n_dist))
    for s, (kind, i, j, _) in enumerate(slots):
        {"A": A, "B": B, "C": C}[kind][i, j] = theta[s]
    model = DataDrivenModel(A, B, C, topo, step_minutes, metadata={
        "objective": float(res.objective), "n_rows": int(sum(r.n_rows for r in parts)),
        "bandwidths": [r.bandwidth for r in parts]})
    rho = model.spectral_radius()
    if rho >= 1.0:
        warnings.warn(f"identified A has spectral radius {rho:.4f} >= 1", RuntimeWarning, stacklevel=2)
    return model


# --------------------------------------------------------------------------
# internal gains


def week_gains(week: Dataset, model: DataDrivenModel, bandwidth: float,
               cfg: SmootherConfig | None = None, include_solar: bool = False) -> np.ndarray:
    """Gains estimate ``x^(k+1) - (A x^(k) + B u^(k) + C v^(k))`` for one week.

    Returned as a ``[steps_per_week x n]`` profile indexed by the position
    of ``k``.
    """
    cfg = cfg or SmootherConfig()
    lead, x, u, v, pos = _pairs([week], model.topology, include_solar)
    stacked = np.hstack([lead, x, u, v])
    P = week.steps_per_week
    sm = lwlr_smooth(stacked, pos, cfg, bandwidth=bandwidth,
                     eval_positions=np.arange(P, dtype=float)).values
    n = model.n
    xl, xs, us, vs = sm[:, :n], sm[:, n:2 * n], sm[:, 2 * n:3 * n], sm[:, 3 * n:]
    return xl - (xs @ model.A.T + us @ model.B.T + vs @ model.C.T)


def estimate_gains(weeks: Mapping[Season, Sequence[Dataset]], model: DataDrivenModel,
                   cfg: SmootherConfig | None = None,
                   bandwidths: Mapping[Season, float] | None = None,
                   include_solar: bool = False) -> dict[Season, np.ndarray]:
    """Seasonal gains profiles: the per-week estimates averaged by time-of-week."""
    cfg = cfg or SmootherConfig()
    out = {}
    for season, ws in weeks.items():
        ws = list(ws)
        if not ws:
            continue
        h = (bandwidths or {}).get(season)
        if h is None:
            h = season_bandwidth(ws, cfg)
        profiles = [week_gains(w, model, h, cfg, include_solar) for w in ws]
        out[Season(season)] = np.mean(profiles, axis=0)
    return out


# --------------------------------------------------------------------------
# simulation


def simulate_model_a(model: DataDrivenModel, x0, u, v, season=None, start_position: int = 0,
                     positions=None) -> np.ndarray:
    """Open-loop rollout; returns ``T + 1`` rows starting with ``x0``.

    ``u`` holds per-zone flows ``[T x n]`` and ``v`` disturbances
    ``[T x m]``. Gains are looked up by time-of-week, starting from
    ``start_position`` unless explicit ``positions`` are given. With
    ``season=None`` no gains are added.
    """
    n = model.n
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size == 1 and n > 1:
        x = np.full(n, float(x[0]))
    U = np.asarray(u, dtype=float)
    U = U.reshape(-1, 1) if U.ndim == 1 else U
    V = np.atleast_2d(np.asarray(v, dtype=float))
    T = U.shape[0]
    if x.size != n or U.shape[1] != n:
        raise ShapeError(f"expected {n} zones, got x0 {x.size} and u {U.shape}")
    if V.shape != (T, model.C.shape[1]):
        raise ShapeError(f"disturbances have shape {V.shape}, expected {(T, model.C.shape[1])}")
    if season is None:
        Q = np.zeros((T, n))
    else:
        prof = model.gains_for(season)
        P = prof.shape[0]
        pos = (np.arange(T) + start_position) % P if positions is None else np.asarray(positions) % P
        if pos.size != T:
            raise ShapeError("positions must have one entry per step")
        Q = prof[pos]
    drive = U @ model.B.T + V @ model.C.T + Q
    X = np.empty((T + 1, n))
    X[0] = x
    for k in range(T):
        x = model.A @ x + drive[k]
        X[k + 1] = x
    return X


# --------------------------------------------------------------------------
# full procedure


@dataclass
class ModelAConfig:
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    sigma_a_diag: float = 0.1 ** 2
    sigma_a_off: float = 0.01 ** 2
    mu_a_off: float = 0.01
    sigma_b: float = 0.05 ** 2
    mu_a: float | None = None
    mu_b: float | None = None
    scale_priors_by_area: bool = False
    lumped_mu_b: float | None = None
    include_solar: bool = False


def fit_model_a(train: Mapping[Season, Sequence[Dataset]], topo: ZoneTopology,
                cfg: ModelAConfig | None = None, excitation: Dataset | None = None) -> DataDrivenModel:
    """Residualize, derive priors, run constrained least squares, extract gains.

    ``excitation`` (default: every training week concatenated per week)
    supplies the flow-response prior for B. The diagonal prior mean of A
    comes from a prior-free constrained fit unless ``cfg.mu_a`` is set.
    """
    cfg = cfg or ModelAConfig()
    seasons = [s for s in SEASONS if train.get(s)]
    if not seasons:
        raise ConfigurationError("no training weeks")
    step = next(iter(train[seasons[0]])).step_minutes
    bws = {s: season_bandwidth(train[s], cfg.smoother) for s in seasons}
    res = {s: residualize(train[s], topo, cfg.smoother, bws[s], cfg.include_solar) for s in seasons}

    n = topo.n
    if cfg.mu_b is not None:
        mu_b = np.full(n, float(cfg.mu_b))
    elif cfg.lumped_mu_b is not None and cfg.scale_priors_by_area:
        mu_b = cfg.lumped_mu_b / topo.area_fractions()
    else:
        sources = [excitation] if excitation is not None else [w for s in seasons for w in train[s]]
        mu_b = prior_b_from_excitation(sources, topo=topo)
    mu_b = np.minimum(mu_b, 0.0)

    base = Priors.build(n, None, None, mu_b, cfg.sigma_b, cfg.mu_a_off, cfg.sigma_a_off)
    sigma_a = np.full((n, n), cfg.sigma_a_off)
    np.fill_diagonal(sigma_a, cfg.sigma_a_diag)
    if cfg.mu_a is not None:
        mu_a = Priors.build(n, cfg.mu_a, off_diag_mean=cfg.mu_a_off).mu_a
    else:
        free = identify_bcls(res, flat_priors(n), topo, step)
        mu_a = np.full((n, n), cfg.mu_a_off)
        np.fill_diagonal(mu_a, np.diag(free.A))
    priors = Priors(mu_a, sigma_a, base.mu_b, base.sigma_b)
    model = identify_bcls(res, priors, topo, step)
    gains = estimate_gains(train, model, cfg.smoother, bws, cfg.include_solar)
    meta = dict(model.metadata)
    meta.update({"bandwidths": {str(s): bws[s] for s in seasons}, "priors": priors.to_dict(),
                 "training_weeks": {str(s): len(train[s]) for s in seasons}})
    return DataDrivenModel(model.A, model.B, model.C, topo, step, gains, meta)
