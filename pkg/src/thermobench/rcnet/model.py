"""Bilinear RC state-space model: parameters, assembly and simulation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import expm

from .. import kernels
from ..errors import ConfigurationError, DivergenceError, ShapeError
from ..timeseries import Season, steps_per_week
from .building import CP_AIR, BuildingDescription

GAINS_MODES = ("none", "const", "const+seasonal")


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    """Window transmission, four convection coefficients and constant gains.

    ``f_ig_const`` is in degrees per step added to each zone's air node.
    """

    u_win: float
    gamma_iw: float
    gamma_ew: float
    gamma_floor: float
    gamma_ceil: float
    f_ig_const: np.ndarray

    NAMES = ("u_win", "gamma_iw", "gamma_ew", "gamma_floor", "gamma_ceil")

    def __post_init__(self):
        object.__setattr__(self, "f_ig_const", np.atleast_1d(np.asarray(self.f_ig_const, dtype=float)).copy())
        vals = self.to_vector()
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ConfigurationError("physical parameters must be finite and strictly positive")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.u_win, self.gamma_iw, self.gamma_ew, self.gamma_floor,
                                self.gamma_ceil], self.f_ig_const])

    @classmethod
    def from_vector(cls, theta) -> "PhysicalParams":
        t = np.asarray(theta, dtype=float)
        return cls(*t[:5], t[5:])

    def scaled(self, factor) -> "PhysicalParams":
        return PhysicalParams.from_vector(self.to_vector() * np.asarray(factor, dtype=float))

    def labels(self) -> list[str]:
        return list(self.NAMES) + [f"f_ig_const[{i}]" for i in range(self.f_ig_const.size)]

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in self.NAMES}
        d["f_ig_const"] = self.f_ig_const.tolist()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhysicalParams":
        return cls(*(float(d[k]) for k in cls.NAMES), np.asarray(d["f_ig_const"], dtype=float))


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time matrices (per second) before discretization."""

    A: np.ndarray
    Bv: np.ndarray
    capacitance: np.ndarray
    conductance: np.ndarray  # symmetric node-node conductances (W/K)
    ambient: np.ndarray  # node-ambient conductances (W/K)
    air_nodes: np.ndarray


def _network(desc: BuildingDescription, gamma: PhysicalParams):
    zones = desc.zone_names
    nz = len(zones)
    caps = [desc.air_capacitance(z) for z in desc.zones]
    edges = []  # (i, j, G)
    amb = {}  # node -> G to ambient

    def add_amb(i, g):
        amb[i] = amb.get(i, 0.0) + g

    h = {"interior_wall": gamma.gamma_iw, "exterior_wall": gamma.gamma_ew,
         "floor": gamma.gamma_floor, "ceiling": gamma.gamma_ceil}
    for e in desc.elements:
        air = [zones.index(z) for z in e.zones]
        if e.kind == "window":
            add_amb(air[0], gamma.u_win * e.area)
            continue
        first = len(caps)
        caps.extend(c * e.area for c in e.capacitances)
        nodes = list(range(first, len(caps)))
        conv = h[e.kind] * e.area
        edges.append((air[0], nodes[0], conv))
        for a, b, k in zip(nodes, nodes[1:], e.conductances):
            edges.append((a, b, k * e.area))
        if e.kind == "interior_wall":
            edges.append((nodes[-1], air[1], conv))
        elif e.kind == "exterior_wall":
            add_amb(nodes[-1], desc.h_out * e.area)
    n = len(caps)
    G = np.zeros((n, n))
    for i, j, g in edges:
        G[i, j] += g
        G[j, i] += g
    Ga = np.zeros(n)
    for i, g in amb.items():
        Ga[i] += g
    return np.asarray(caps), G, Ga, np.arange(nz)


def continuous_matrices(desc: BuildingDescription, gamma: PhysicalParams) -> ContinuousModel:
    """Node heat balances ``C dT/dt = G (T_j - T_i) + G_amb (T_a - T_i)``.

    Supply air enters only through the bilinear flow terms, so the second
    column of ``Bv`` is zero here.
    """
    caps, G, Ga, air = _network(desc, gamma)
    L = G - np.diag(G.sum(axis=1) + Ga)
    A = L / caps[:, None]
    Bv = np.zeros((caps.size, 2))
    Bv[:, 0] = Ga / caps
    return ContinuousModel(A, Bv, caps, G, Ga, air)


@dataclass(frozen=True, eq=False)
class RcModel:
    """Discrete-time bilinear model

    ``x+ = A x + Bv v + Big f + sum_i (Bxu_i x + Bvu_i v) u_i``, ``y = C x``.

    The bilinear matrices are held in coordinate form (``xu``/``vu`` are
    ``(input, row, col, value)`` arrays); :meth:`bxu` and :meth:`bvu` return
    dense copies.
    """

    A: np.ndarray
    Bv: np.ndarray
    Big: np.ndarray
    xu: tuple
    vu: tuple
    C: np.ndarray
    step_minutes: int
    gamma: PhysicalParams
    zone_names: tuple[str, ...]
    vav_ids: tuple[str, ...]
    gains_v: Mapping[Season, np.ndarray] = field(default_factory=dict)
    u_bounds: tuple | None = None
    node_home: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "xu", tuple(np.asarray(a) for a in self.xu))
        set_(self, "vu", tuple(np.asarray(a) for a in self.vu))
        P = steps_per_week(self.step_minutes)
        gv = {}
        for s, g in dict(self.gains_v).items():
            g = np.asarray(g, dtype=float)
            if g.shape != (P, self.n_zones):
                raise ShapeError(f"gains profile for {s} must be {(P, self.n_zones)}")
            gv[Season(s)] = g
        set_(self, "gains_v", gv)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_zones(self) -> int:
        return self.C.shape[0]

    @property
    def n_inputs(self) -> int:
        return len(self.vav_ids)

    def bxu(self) -> list[np.ndarray]:
        return _dense(self.xu, self.n_inputs, (self.n_states, self.n_states))

    def bvu(self) -> list[np.ndarray]:
        return _dense(self.vu, self.n_inputs, (self.n_states, 2))

    def with_gains(self, gains_v) -> "RcModel":
        return RcModel(self.A, self.Bv, self.Big, self.xu, self.vu, self.C, self.step_minutes,
                       self.gamma, self.zone_names, self.vav_ids, gains_v, self.u_bounds, self.node_home)

    def transition(self, u) -> np.ndarray:
        """``A + sum_i u_i Bxu_i`` for one input vector."""
        F = self.A.copy()
        k, r, c, v = self.xu
        np.add.at(F, (r, c), v * np.asarray(u, dtype=float)[k])
        return F

    def input_gain(self, x, v) -> np.ndarray:
        """``[n_states x n_inputs]`` matrix whose column i is ``Bxu_i x + Bvu_i v``."""
        G = np.zeros((self.n_states, self.n_inputs))
        k, r, c, val = self.xu
        np.add.at(G, (r, k), val * np.asarray(x)[c])
        k, r, c, val = self.vu
        np.add.at(G, (r, k), val * np.asarray(v)[c])
        return G

    def gains_sequence(self, T: int, mode: str = "const", season=None, start_position: int = 0,
                       positions=None) -> np.ndarray:
        if mode not in GAINS_MODES:
            raise ConfigurationError(f"gains mode must be one of {GAINS_MODES}")
        if mode == "none":
            return np.zeros((T, self.n_zones))
        F = np.tile(self.gamma.f_ig_const, (T, 1))
        if mode == "const+seasonal":
            try:
                prof = self.gains_v[Season(season)]
            except (KeyError, ValueError):
                raise ConfigurationError(f"model has no internal-gains profile for season {season}") from None
            P = prof.shape[0]
            pos = (np.arange(T) + start_position) % P if positions is None else np.asarray(positions) % P
            F = F + prof[pos]
        return F

    def initial_guess(self, y0, v0=None) -> np.ndarray:
        """Every node at the measured temperature of its zone."""
        y0 = np.asarray(y0, dtype=float)
        home = self.node_home if self.node_home is not None else np.zeros(self.n_states, int)
        return y0[home].copy()

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": "rc",
            "step_minutes": self.step_minutes,
            "A": self.A.tolist(),
            "Bv": self.Bv.tolist(),
            "Big": self.Big.tolist(),
            "xu": [a.tolist() for a in self.xu],
            "vu": [a.tolist() for a in self.vu],
            "C": self.C.tolist(),
            "gamma": self.gamma.to_dict(),
            "zone_names": list(self.zone_names),
            "vav_ids": list(self.vav_ids),
            "gains_v": {str(s): g.tolist() for s, g in self.gains_v.items()},
            "u_bounds": None if self.u_bounds is None else [list(map(float, b)) for b in self.u_bounds],
            "node_home": None if self.node_home is None else self.node_home.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RcModel":
        if d.get("kind") != "rc":
            raise ConfigurationError("not an RC model document")
        return cls(np.asarray(d["A"]), np.asarray(d["Bv"]), np.asarray(d["Big"]),
                   (np.asarray(d["xu"][0], np.int64), np.asarray(d["xu"][1], np.int64),
                    np.asarray(d["xu"][2], np.int64), np.asarray(d["xu"][3], float)),
                   (np.asarray(d["vu"][0], np.int64), np.asarray(d["vu"][1], np.int64),
                    np.asarray(d["vu"][2], np.int64), np.asarray(d["vu"][3], float)),
                   np.asarray(d["C"]), int(d["step_minutes"]), PhysicalParams.from_dict(d["gamma"]),
                   tuple(d["zone_names"]), tuple(d["vav_ids"]),
                   {Season(s): np.asarray(g) for s, g in d.get("gains_v", {}).items()},
                   None if d.get("u_bounds") is None else tuple(np.asarray(b) for b in d["u_bounds"]),
                   None if d.get("node_home") is None else np.asarray(d["node_home"], int))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "RcModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _dense(coo, n_inputs, shape):
    k, r, c, v = coo
    out = [np.zeros(shape) for _ in range(n_inputs)]
    for kk, rr, cc, vv in zip(k, r, c, v):
        out[kk][rr, cc] += vv
    return out


def _node_home(desc: BuildingDescription, n_states: int) -> np.ndarray:
    zones = desc.zone_names
    home = list(range(len(zones)))
    for e in desc.elements:
        home.extend([zones.index(e.zones[0])] * len(e.capacitances))
    return np.asarray(home[:n_states], dtype=int)


def assemble(desc: BuildingDescription, gamma: PhysicalParams, step_minutes: int = 15) -> RcModel:
    """Discretize the RC network of ``desc`` at ``step_minutes``.

    The linear part uses the exact matrix exponential with inputs held over
    the step. Flow terms ``m c_p (T_s - T_air) / C_air`` are scaled by the
    step length (first-order), which keeps the state equation bilinear.
    """
    if step_minutes <= 0:
        raise ConfigurationError("step must be positive")
    if gamma.f_ig_const.size != len(desc.zones):
        raise ShapeError(f"f_ig_const needs {len(desc.zones)} entries")
    cont = continuous_matrices(desc, gamma)
    n = cont.A.shape[0]
    dt = 60.0 * step_minutes
    M = np.zeros((n + 2, n + 2))
    M[:n, :n] = cont.A * dt
    M[:n, n:] = cont.Bv * dt
    E = expm(M)
    A = E[:n, :n]
    Bv = E[:n, n:]
    nz = len(desc.zones)
    Big = np.zeros((n, nz))
    Big[np.arange(nz), np.arange(nz)] = 1.0
    C = np.zeros((nz, n))
    C[np.arange(nz), np.arange(nz)] = 1.0
    zones = desc.zone_names
    kx, rx, cx, vx, kv, rv, cv, vv = ([] for _ in range(8))
    for i, vav in enumerate(desc.vavs):
        z = zones.index(vav.zone)
        coef = dt * CP_AIR / cont.capacitance[z]
        kx.append(i), rx.append(z), cx.append(z), vx.append(-coef)
        kv.append(i), rv.append(z), cv.append(1), vv.append(coef)
    as_coo = lambda k, r, c, v: (np.asarray(k, np.int64), np.asarray(r, np.int64),  # noqa: E731
                                 np.asarray(c, np.int64), np.asarray(v, float))
    return RcModel(A, Bv, Big, as_coo(kx, rx, cx, vx), as_coo(kv, rv, cv, vv), C, step_minutes,
                   gamma, desc.zone_names, desc.vav_ids, {}, desc.flow_bounds(), _node_home(desc, n))


@dataclass(frozen=True)
class Simulation:
    states: np.ndarray  # [T+1, n_states]
    outputs: np.ndarray  # [T+1, n_zones]


def simulate(m: RcModel, x0, u, v, gains: str = "const", season=None, start_position: int = 0,
             f=None, backend=None) -> Simulation:
    """Roll the bilinear model forward over ``T = len(u)`` steps.

    ``gains`` selects ``none``, ``const`` (``f_ig_const`` only) or
    ``const+seasonal`` (adds the season's weekly profile, indexed from
    ``start_position``). An explicit ``f`` ``[T x n_zones]`` overrides it.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite; ``step`` is the first bad step.
    """
    U = np.atleast_2d(np.asarray(u, dtype=float))
    if U.shape[0] == 1 and m.n_inputs != 1 and U.shape[1] == 1:
        U = U.T
    V = np.atleast_2d(np.asarray(v, dtype=float))
    T = U.shape[0]
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != m.n_states:
        raise ShapeError(f"x0 has {x0.size} entries, model has {m.n_states} states")
    if U.shape[1] != m.n_inputs:
        raise ShapeError(f"u has {U.shape[1]} columns, model has {m.n_inputs} inputs")
    if V.shape != (T, 2):
        raise ShapeError(f"v must be [{T} x 2], got {V.shape}")
    F = m.gains_sequence(T, gains, season, start_position) if f is None else np.asarray(f, dtype=float)
    if F.shape != (T, m.n_zones):
        raise ShapeError("gains sequence has the wrong shape")
    X, bad = kernels.rollout_bilinear(m.A, m.Bv, m.Big, m.xu, m.vu, x0, U, V, F, backend=backend)
    if bad >= 0:
        raise DivergenceError(f"simulation diverged at step {bad}", step=bad)
    return Simulation(X, X @ m.C.T)


def one_step(m: RcModel, x, u, v, f) -> np.ndarray:
    """Single bilinear update (plain matrix arithmetic)."""
    return m.transition(u) @ x + m.Bv @ v + m.input_gain(np.zeros(m.n_states), v) @ u + m.Big @ f

