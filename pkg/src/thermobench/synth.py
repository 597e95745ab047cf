"""Synthetic ground truth: a simulated building with weather, occupancy,
a thermostat-driven flow schedule, Saturday flow-step experiments and
sensor noise.

Two truth models are available. ``kind="rc"`` simulates a bilinear RC
building; ``kind="difference"`` simulates the single-zone linear
difference equation ``x+ = a x + b u + c'v + q``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DivergenceError, OutOfSeasonError
from .rcnet.building import BuildingDescription, desk_building
from .rcnet.model import PhysicalParams, RcModel, assemble
from .timeseries import (
    MINUTES_PER_DAY,
    MINUTES_PER_WEEK,
    SEASONS,
    Dataset,
    Season,
    SeasonCalendar,
    steps_per_week,
    to_datetime,
    to_minutes,
)

SATURDAY = 5


@dataclass
class WeatherParams:
    seasonal_mean: Mapping[str, float] = field(
        default_factory=lambda: {"fall": 14.0, "winter": 8.0, "spring": 12.0})
    daily_amplitude: float = 4.0
    peak_hour: float = 15.0
    ar_phi: float = 0.9
    ar_std: float = 1.5
    supply_temp: float = 12.8
    supply_noise: float = 0.3


@dataclass
class OccupancyParams:
    amplitude: float | list = 0.3
    season_scale: Mapping[str, float] = field(
        default_factory=lambda: {"fall": 1.0, "winter": 0.5, "spring": 1.0})
    weekend_scale: float = 0.3
    morning_hour: float = 10.0
    peak_hour: float = 16.0
    width_hours: float = 2.5


@dataclass
class ThermostatParams:
    on_above: float = 21.5
    off_below: float = 20.5
    flow_on: float = 0.3  # fraction of u_max
    flow_off: float = 0.05


@dataclass
class ExcitationParams:
    """Saturday flow experiments: ``repeats`` single blocks of
    ``block_steps`` at flow ``level`` (fraction of u_max), separated by
    ``gap_steps``. With ``stagger`` the zones take turns, otherwise all are
    excited together."""

    enabled: bool = True
    start_hour: float = 8.0
    block_steps: int = 1
    gap_steps: int = 11
    repeats: int = 8
    level: float = 1.0
    stagger: bool = False


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a synthetic dataset."""

    kind: str = "rc"
    building: BuildingDescription | None = None
    gamma: PhysicalParams | None = None
    start: str = "2015-11-28"
    n_weeks: int = 12
    lead_in_days: int = 2
    step_minutes: int = 15
    noise_std: float = 0.1
    seed: int = 0
    weather: WeatherParams = field(default_factory=WeatherParams)
    occupancy: OccupancyParams = field(default_factory=OccupancyParams)
    thermostat: ThermostatParams = field(default_factory=ThermostatParams)
    excitation: ExcitationParams = field(default_factory=ExcitationParams)
    # single-zone difference-equation truth
    a: float = 0.80
    b: float = -0.18
    c: tuple = (0.0019, 0.028)
    q_const: float = 4.1
    n_vav: int = 21
    u_max: float = 0.4
    x0: float = 21.0

    def __post_init__(self):
        if self.kind not in ("rc", "difference"):
            raise ConfigurationError("kind must be 'rc' or 'difference'")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")
        if self.n_weeks < 1 or self.step_minutes <= 0:
            raise ConfigurationError("n_weeks and step_minutes must be positive")
        if self.kind == "rc":
            if self.building is None:
                self.building = desk_building()
            if self.gamma is None:
                self.gamma = default_gamma(len(self.building.zones))

    @property
    def n_steps(self) -> int:
        return (self.lead_in_days * MINUTES_PER_DAY + self.n_weeks * 7 * MINUTES_PER_DAY) // self.step_minutes

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind, "start": self.start, "n_weeks": self.n_weeks,
            "lead_in_days": self.lead_in_days, "step_minutes": self.step_minutes,
            "noise_std": self.noise_std, "seed": self.seed,
            "weather": asdict(self.weather), "occupancy": asdict(self.occupancy),
            "thermostat": asdict(self.thermostat), "excitation": asdict(self.excitation),
            "a": self.a, "b": self.b, "c": list(self.c), "q_const": self.q_const,
            "n_vav": self.n_vav, "u_max": self.u_max, "x0": self.x0,
        }
        if self.kind == "rc":
            d["building"] = self.building.to_dict()
            d["gamma"] = self.gamma.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping, base_dir=None) -> "ScenarioConfig":
        d = dict(d)
        building = d.pop("building", None)
        if isinstance(building, str):
            import os
            path = building if base_dir is None or os.path.isabs(building) else os.path.join(base_dir, building)
            building = BuildingDescription.load(path)
        elif isinstance(building, Mapping):
            building = BuildingDescription.from_dict(building)
        gamma = d.pop("gamma", None)
        if isinstance(gamma, Mapping):
            gamma = PhysicalParams.from_dict(gamma)
        sub = {
            "weather": WeatherParams, "occupancy": OccupancyParams,
            "thermostat": ThermostatParams, "excitation": ExcitationParams,
        }
        kw = {}
        for key, typ in sub.items():
            if key in d:
                kw[key] = typ(**d.pop(key))
        if "c" in d:
            d["c"] = tuple(d["c"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(building=building, gamma=gamma, **kw, **d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        import os
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh), base_dir=os.path.dirname(os.path.abspath(path)))
        except FileNotFoundError:
            raise ConfigurationError(f"scenario file not found: {path}") from None


def default_gamma(n_zones: int = 6) -> PhysicalParams:
    f = np.linspace(0.35, 0.45, n_zones) if n_zones > 1 else np.array([0.4])
    return PhysicalParams(2.5, 3.0, 3.5, 2.0, 4.0, f)


@dataclass
class GroundTruth:
    states: np.ndarray  # [T, n_states] state at each sample
    outputs: np.ndarray  # [T, n_zones] clean zone temperatures
    inputs: np.ndarray  # [T, n_vav]
    disturbances: np.ndarray  # [T, 2]
    gains: np.ndarray  # [T, n_zones] internal gains applied at each step
    gains_profiles: dict  # season -> [P, n_zones] time-varying part
    gains_const: np.ndarray
    model: RcModel | None = None
    coefficients: dict | None = None

    def to_dict(self) -> dict:
        return {
            "gains_profiles": {str(s): g.tolist() for s, g in self.gains_profiles.items()},
            "gains_const": self.gains_const.tolist(),
            "coefficients": self.coefficients,
            "gamma": None if self.model is None else self.model.gamma.to_dict(),
            "final_state": self.states[-1].tolist(),
            "n_steps": int(self.outputs.shape[0]),
        }


# --------------------------------------------------------------------------
# profiles


def _bump(h, center, width):
    return np.exp(-0.5 * ((h - center) / width) ** 2)


def occupancy_gains(params: OccupancyParams, season, n_zones: int = 1, step_minutes: int = 15) -> np.ndarray:
    """Weekly internal-gains profile ``[steps_per_week x n_zones]``.

    Weekdays carry a late-morning and a larger late-afternoon bump, nights
    are near zero, weekends are scaled by ``weekend_scale`` and each season
    by ``season_scale``.
    """
    P = steps_per_week(step_minutes)
    minutes = np.arange(P) * step_minutes
    day = minutes // MINUTES_PER_DAY
    hour = (minutes % MINUTES_PER_DAY) / 60.0
    shape = 0.6 * _bump(hour, params.morning_hour, params.width_hours) + _bump(hour, params.peak_hour, params.width_hours)
    shape = np.where(day >= SATURDAY, params.weekend_scale * shape, shape)
    amp = np.broadcast_to(np.asarray(params.amplitude, dtype=float), (n_zones,))
    scale = float(params.season_scale.get(str(Season(season)), 1.0))
    return scale * shape[:, None] * amp[None, :]


def _week_seasons(timestamps, calendar) -> list:
    """Season of every sample, taken from the Monday of its week so that a
    week never mixes two seasons (out-of-season weeks count as spring)."""
    out = []
    cache = {}
    for t in timestamps:
        monday = int(t - t % MINUTES_PER_WEEK)
        if monday not in cache:
            try:
                cache[monday] = calendar.season_of(to_datetime(monday).date())
            except OutOfSeasonError:
                cache[monday] = Season.SPRING
        out.append(cache[monday])
    return out


def _weather(cfg: ScenarioConfig, timestamps, rng, seasons):
    w = cfg.weather
    T = timestamps.size
    hours = (timestamps % MINUTES_PER_DAY) / 60.0
    means = np.array([w.seasonal_mean[str(s)] for s in seasons], dtype=float)
    noise = np.empty(T)
    e = rng.normal(0.0, w.ar_std)
    innov = w.ar_std * np.sqrt(1 - w.ar_phi ** 2)
    for k in range(T):
        noise[k] = e
        e = w.ar_phi * e + rng.normal(0.0, innov)
    ta = means + w.daily_amplitude * np.cos(2 * np.pi * (hours - w.peak_hour) / 24.0) + noise
    ts = w.supply_temp + w.supply_noise * rng.standard_normal(T)
    return ta, ts


def _excitation_plan(cfg: ScenarioConfig, timestamps, groups):
    """Boolean ``[T x n_groups]`` pulse plan and ``[T]`` hold flags.

    During the hold period the thermostat is bypassed and every box sits
    at its baseline flow between pulses.
    """
    ex = cfg.excitation
    T = timestamps.size
    plan = np.zeros((T, len(groups)), dtype=bool)
    hold = np.zeros(T, dtype=bool)
    if not ex.enabled:
        return plan, hold
    day = (timestamps // MINUTES_PER_DAY) % 7
    step_of_day = (timestamps % MINUTES_PER_DAY) // cfg.step_minutes
    first = int(ex.start_hour * 60 // cfg.step_minutes)
    period = ex.block_steps + ex.gap_steps
    n_slots = len(groups) if ex.stagger else 1
    for g in range(len(groups)):
        for r in range(ex.repeats):
            lo = first + (r * n_slots + (g if ex.stagger else 0)) * period
            hi = lo + ex.block_steps
            plan[:, g] |= (day == SATURDAY) & (step_of_day >= lo) & (step_of_day < hi)
    last = first + ex.repeats * n_slots * period
    hold = (day == SATURDAY) & (step_of_day >= first - ex.gap_steps) & (step_of_day < last)
    return plan, hold


def _thermostat(temp, state, p: ThermostatParams):
    state = np.where(temp > p.on_above, True, np.where(temp < p.off_below, False, state))
    return state


# --------------------------------------------------------------------------
# generation


def generate(cfg: ScenarioConfig) -> tuple[Dataset, GroundTruth]:
    """Simulate the scenario and return the noisy dataset plus clean truth.

    Raises
    ------
    DivergenceError
        If the reference model produces non-finite states.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    noise_rng = np.random.default_rng([cfg.seed, 1])
    start = to_minutes(cfg.start)
    T = cfg.n_steps
    ts = start + cfg.step_minutes * np.arange(T)
    seasons = _week_seasons(ts, SeasonCalendar())
    ta, tsup = _weather(cfg, ts, rng, seasons)
    V = np.column_stack([ta, tsup])
    P = steps_per_week(cfg.step_minutes)
    pos = ((ts // cfg.step_minutes) % P).astype(int)

    if cfg.kind == "rc":
        truth = _run_rc(cfg, V, pos, seasons, ts)
        names, vav_ids = cfg.building.zone_names, cfg.building.vav_ids
    else:
        truth = _run_difference(cfg, V, pos, seasons, ts)
        names, vav_ids = ("lumped",), tuple(f"vav{i + 1:02d}" for i in range(cfg.n_vav))

    y = truth.outputs + cfg.noise_std * noise_rng.standard_normal(truth.outputs.shape) if cfg.noise_std > 0 \
        else truth.outputs.copy()
    mask = truth.coefficients.pop("_mask")
    data = Dataset(
        step_minutes=cfg.step_minutes, timestamps=ts, zone_temps=y, vav_flows=truth.inputs,
        t_ambient=ta, t_supply=tsup, excitation_mask=mask, zone_names=names, vav_ids=vav_ids,
    )
    return data, truth


def _profiles(cfg, n_zones):
    return {s: occupancy_gains(cfg.occupancy, s, n_zones, cfg.step_minutes) for s in SEASONS}


def _run_rc(cfg: ScenarioConfig, V, pos, seasons, ts) -> GroundTruth:
    desc = cfg.building
    m = assemble(desc, cfg.gamma, cfg.step_minutes)
    nz, nv = m.n_zones, m.n_inputs
    profiles = _profiles(cfg, nz)
    T = V.shape[0]
    lo, hi = desc.flow_bounds()
    zone_of = np.array([desc.zone_names.index(v.zone) for v in desc.vavs])
    plan, hold = _excitation_plan(cfg, ts, list(range(nz)))
    th = cfg.thermostat
    x = np.full(m.n_states, cfg.x0)
    on = np.zeros(nz, dtype=bool)
    X = np.empty((T, m.n_states))
    U = np.empty((T, nv))
    F = np.empty((T, nz))
    mask = np.zeros(T, dtype=bool)
    for k in range(T):
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"reference model diverged at step {k}", step=k)
        X[k] = x
        y = x[:nz]
        on = _thermostat(y, on, th)
        frac = np.where(on & ~hold[k], th.flow_on, th.flow_off)[zone_of]
        forced = plan[k][zone_of]
        frac = np.where(forced, cfg.excitation.level, frac)
        u = np.clip(lo + frac * (hi - lo), lo, hi)
        mask[k] = forced.any()
        f = cfg.gamma.f_ig_const + profiles[seasons[k]][pos[k]]
        U[k], F[k] = u, f
        x = m.transition(u) @ x + m.Bv @ V[k] + m.input_gain(np.zeros(m.n_states), V[k]) @ u + m.Big @ f
    return GroundTruth(X, X @ m.C.T, U, V, F, profiles, cfg.gamma.f_ig_const.copy(), m,
                       {"_mask": mask})


def _run_difference(cfg: ScenarioConfig, V, pos, seasons, ts) -> GroundTruth:
    T = V.shape[0]
    profiles = _profiles(cfg, 1)
    c = np.asarray(cfg.c, dtype=float)
    th = cfg.thermostat
    plan, hold = _excitation_plan(cfg, ts, [0])
    plan = plan[:, 0]
    umax = cfg.u_max * np.ones(cfg.n_vav)
    x = cfg.x0
    on = np.zeros(1, dtype=bool)
    X = np.empty(T)
    U = np.empty((T, cfg.n_vav))
    Q = np.empty(T)
    for k in range(T):
        X[k] = x
        on = _thermostat(np.array([x]), on, th)
        frac = th.flow_on if on[0] and not hold[k] else th.flow_off
        if plan[k]:
            frac = cfg.excitation.level
        u = frac * umax
        q = cfg.q_const + profiles[seasons[k]][pos[k], 0]
        U[k], Q[k] = u, q
        x = cfg.a * x + cfg.b * u.sum() + c @ V[k] + q
        if not np.isfinite(x):
            raise DivergenceError(f"difference model diverged at step {k}", step=k)
    return GroundTruth(X[:, None], X[:, None], U, V, Q[:, None], profiles, np.array([cfg.q_const]),
                       None, {"a": cfg.a, "b": cfg.b, "c": list(cfg.c), "_mask": plan.copy()})


def desk_scenario(seed: int = 0, noise_std: float = 0.1, **overrides) -> ScenarioConfig:
    """Six-zone desk scenario: Saturday 2015-11-28 plus twelve weeks.

    Internal gains vanish on weekends so the weekend-only parameter fit
    sees purely constant gains.
    """
    occ = OccupancyParams(amplitude=[0.25, 0.25, 0.3, 0.3, 0.35, 0.3], weekend_scale=0.0)
    return ScenarioConfig(kind="rc", seed=seed, noise_std=noise_std, occupancy=occ, **overrides)


def lumped_scenario(seed: int = 0, noise_std: float = 0.05, **overrides) -> ScenarioConfig:
    """Single-zone difference-equation scenario over twelve weeks."""
    kw = dict(kind="difference", seed=seed, noise_std=noise_std,
              thermostat=ThermostatParams(21.5, 20.5, flow_on=0.3, flow_off=0.02),
              occupancy=OccupancyParams(amplitude=0.15))
    kw.update(overrides)
    return ScenarioConfig(**kw)

