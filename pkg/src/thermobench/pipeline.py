"""End-to-end orchestration shared by the command-line interface.

Configuration, data loading, identification of both model families,
open-loop evaluation (per-zone, per-season RMS tables) and closed-loop
control runs.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .datadriven import DataDrivenModel, ModelAConfig, ZoneTopology, fit_model_a, simulate_model_a, zone_flows
from .errors import ConfigurationError
from .mpc import ClosedLoopRun, MpcConfig, run_receding_horizon
from .rcnet.building import BuildingDescription, split_zone_flows
from .rcnet.identify import GammaFit, estimate_gains_v, estimate_gamma, model_inputs, training_weekends
from .rcnet.kalman import KalmanConfig, batch_smoothed_state, kalman_init
from .rcnet.model import PhysicalParams, RcModel, assemble, simulate
from .smoother import SmootherConfig
from .synth import GroundTruth, ScenarioConfig, generate
from .timeseries import SEASONS, Dataset, Season, SplitDataset, read_csv, split_train_test, zone_rms

DAY_STEPS = 96


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


@dataclass
class PipelineConfig:
    """Settings for every command.

    Exactly one data source is used: ``data_path`` (a CSV in the dataset
    layout, requires ``building``) or ``scenario`` (generated on the fly).
    """

    scenario: ScenarioConfig | None = None
    data_path: str | None = None
    building: BuildingDescription | None = None
    seed: int = 0
    train_fraction: float = 0.9
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    model_a: ModelAConfig = field(default_factory=ModelAConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    gamma_starts: list | None = None
    weekends_per_season: int | None = 1
    gamma_budget: int | None = None
    mpc: MpcConfig = field(default_factory=MpcConfig)
    rms_horizon: int = DAY_STEPS
    mpc_season: str | None = None
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario is None and self.data_path is None:
            raise ConfigurationError("config needs a 'scenario' or a 'data' source")
        if self.building is None and self.scenario is not None and self.scenario.kind == "rc":
            self.building = self.scenario.building
        if self.rms_horizon < 1:
            raise ConfigurationError("rms_horizon must be positive")

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is None:
            return self
        self.seed = int(seed)
        if self.scenario is not None:
            self.scenario.seed = int(seed)
        return self

    def digest(self) -> str:
        body = canonical_json({"config": self.raw, "seed": self.seed})
        return hashlib.sha256(body.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | None = None) -> "PipelineConfig":
        d = dict(d)
        raw = json.loads(canonical_json(d))

        def path(p):
            return p if base_dir is None or os.path.isabs(p) else os.path.join(base_dir, p)

        kw = {}
        scen = d.pop("scenario", None)
        if isinstance(scen, str):
            kw["scenario"] = ScenarioConfig.load(path(scen))
        elif isinstance(scen, Mapping):
            kw["scenario"] = ScenarioConfig.from_dict(scen, base_dir=base_dir)
        if "data" in d:
            kw["data_path"] = path(d.pop("data"))
        b = d.pop("building", None)
        if isinstance(b, str):
            kw["building"] = BuildingDescription.load(path(b))
        elif isinstance(b, Mapping):
            kw["building"] = BuildingDescription.from_dict(b)
        if "seed" in d:
            kw["seed"] = int(d.pop("seed"))
        if "train_fraction" in d:
            kw["train_fraction"] = float(d.pop("train_fraction"))
        sm = SmootherConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                               for k, v in d.pop("smoother", {}).items()})
        kw["smoother"] = sm
        ma = dict(d.pop("model_a", {}))
        kw["model_a"] = ModelAConfig(smoother=sm, **ma)
        kw["kalman"] = KalmanConfig(**d.pop("kalman", {}))
        g = d.pop("gamma", {})
        if "starts" in g:
            kw["gamma_starts"] = [PhysicalParams.from_dict(s) if isinstance(s, Mapping)
                                  else PhysicalParams.from_vector(np.asarray(s, float)) for s in g["starts"]]
        if "weekends_per_season" in g:
            kw["weekends_per_season"] = g["weekends_per_season"]
        if "budget" in g:
            kw["gamma_budget"] = g["budget"]
        if "mpc" in d:
            kw["mpc"] = MpcConfig.from_dict(d.pop("mpc"))
        if "rms_horizon" in d:
            kw["rms_horizon"] = int(d.pop("rms_horizon"))
        if "mpc_season" in d:
            kw["mpc_season"] = d.pop("mpc_season")
        if d:
            raise ConfigurationError(f"unknown config fields: {sorted(d)}")
        cfg = cls(raw=raw, **kw)
        if cfg.scenario is not None and "seed" in raw:
            cfg.scenario.seed = cfg.seed
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# data


def load_data(cfg: PipelineConfig) -> tuple[Dataset, GroundTruth | None]:
    if cfg.data_path is not None:
        return read_csv(cfg.data_path), None
    return generate(cfg.scenario)


def split_data(data: Dataset, cfg: PipelineConfig) -> SplitDataset:
    return split_train_test(data, cfg.train_fraction, seed=cfg.seed)


def topology_for(data: Dataset, building: BuildingDescription | None) -> ZoneTopology:
    if building is not None and data.n_zones == len(building.zones):
        return building.topology()
    if data.n_zones == 1:
        return ZoneTopology(data.zone_names, np.zeros((1, 1), bool), (frozenset("ENSW"),),
                            {v: data.zone_names[0] for v in data.vav_ids})
    raise ConfigurationError("a building description matching the data is required for multi-zone data")


def zone_flow_bounds(building: BuildingDescription | None, topo: ZoneTopology, vav_ids):
    if building is None:
        return None
    lo, hi = building.flow_bounds()
    M = topo.vav_matrix(vav_ids)
    return (lo @ M).tolist(), (hi @ M).tolist()


# --------------------------------------------------------------------------
# identification


def identify_model_a(split: SplitDataset, data: Dataset, cfg: PipelineConfig) -> DataDrivenModel:
    topo = topology_for(data, cfg.building)
    model = fit_model_a(split.train, topo, cfg.model_a)
    meta = dict(model.metadata)
    bounds = zone_flow_bounds(cfg.building, topo, data.vav_ids)
    if bounds is None and cfg.scenario is not None and cfg.scenario.kind == "difference":
        bounds = ([0.0], [cfg.scenario.n_vav * cfg.scenario.u_max])
    if bounds is not None:
        meta["u_bounds"] = bounds
    meta["seed"] = cfg.seed
    return DataDrivenModel(model.A, model.B, model.C, topo, model.step_minutes, model.gains, meta)


def default_gamma_starts(n_zones: int) -> list[PhysicalParams]:
    """Nominal guess: convection coefficients near 3 W/m^2K, window U near 2.5."""
    return [PhysicalParams(2.5, 3.0, 3.0, 3.0, 3.0, np.full(n_zones, 0.4))]


def identify_model_b(split: SplitDataset, data: Dataset, cfg: PipelineConfig) -> tuple[RcModel, GammaFit]:
    if cfg.building is None:
        raise ConfigurationError("Model B needs a building description")
    windows = training_weekends(split.train, cfg.weekends_per_season)
    starts = cfg.gamma_starts or default_gamma_starts(len(cfg.building.zones))
    fit = estimate_gamma(cfg.building, windows, starts, data.step_minutes, cfg.kalman, cfg.gamma_budget)
    m = assemble(cfg.building, fit.gamma, data.step_minutes)
    gains = estimate_gains_v(m, data, split.train, cfg.kalman)
    return m.with_gains(gains), fit


def lumped_equation(model: DataDrivenModel, digits: int = 4) -> str:
    """Single-zone coefficients as a one-line difference equation."""
    a, b = model.A[0, 0], model.B[0, 0]
    c = ", ".join(f"{x:.{digits}f}" for x in model.C[0])
    sign = "-" if b < 0 else "+"
    return f"x(k+1) = {a:.{digits}f} x(k) {sign} {abs(b):.{digits}f} u(k) + [{c}] v(k) + q_IG(k)"


# --------------------------------------------------------------------------
# open-loop prediction


def _season_of_week(week: Dataset, split: SplitDataset) -> Season:
    for s, ws in list(split.test.items()) + list(split.train.items()):
        for w in ws:
            if w.timestamps[0] == week.timestamps[0]:
                return s
    raise ConfigurationError("week not found in the split")


def predict_a(model: DataDrivenModel, data: Dataset, start: int, steps: int, season) -> np.ndarray:
    """Open-loop Model A prediction of ``steps`` transitions from row ``start``."""
    topo = model.topology
    u = zone_flows(data.slice(start, start + steps), topo)
    v = data.disturbances[start:start + steps]
    pos = data.positions[start:start + steps]
    return simulate_model_a(model, data.zone_temps[start], u, v, season, positions=pos)


def initial_state_b(model: RcModel, data: Dataset, start: int, kalman: KalmanConfig, season=None) -> np.ndarray:
    """Filtered state at row ``start`` from the preceding ``burn_in`` steps,
    or a smoothed estimate from the following steps when history is short."""
    U, V = model_inputs(model, data)
    B = kalman.burn_in
    mode = "const" if season is None else "const+seasonal"
    if start >= B:
        F = model.gains_sequence(B, mode, season, positions=data.positions[start - B:start])
        return kalman_init(model, data.zone_temps[start - B:start + 1], U[start - B:start],
                           V[start - B:start], F, kalman)
    stop = min(len(data) - 1, start + B)
    F = model.gains_sequence(stop - start, mode, season, positions=data.positions[start:stop])
    return batch_smoothed_state(model, data.zone_temps[start:stop + 1], U[start:stop], V[start:stop], F, kalman)


def predict_b(model: RcModel, data: Dataset, start: int, steps: int, season, kalman: KalmanConfig) -> np.ndarray:
    U, V = model_inputs(model, data)
    x0 = initial_state_b(model, data, start, kalman, season)
    F = model.gains_sequence(steps, "const+seasonal", season, positions=data.positions[start:start + steps])
    return simulate(model, x0, U[start:start + steps], V[start:start + steps], f=F).outputs


def segment_rms(measured, predicted) -> np.ndarray:
    return np.sqrt(np.mean((np.asarray(measured) - np.asarray(predicted)) ** 2, axis=0))


def rms_table(models: Mapping[str, object], data: Dataset, split: SplitDataset, horizon: int,
              kalman: KalmanConfig) -> dict:
    """Per-zone, per-season open-loop RMS on the test weeks.

    Every test week is cut into ``horizon``-step segments; each segment is
    predicted from a fresh initial condition and the segment RMS values are
    averaged.
    """
    out = {}
    for name, model in models.items():
        table = {}
        for season in SEASONS:
            weeks = split.test.get(season, [])
            if not weeks:
                continue
            vals = []
            for w in weeks:
                s0 = data.index_of(int(w.timestamps[0]))
                for s in range(s0, s0 + len(w) - horizon + 1, horizon):
                    if s + horizon >= len(data):
                        break
                    meas = data.zone_temps[s:s + horizon + 1]
                    if isinstance(model, DataDrivenModel):
                        pred = predict_a(model, data, s, horizon, season)
                    else:
                        pred = predict_b(model, data, s, horizon, season, kalman)
                    vals.append(segment_rms(meas[1:], pred[1:]))
            per_zone = np.mean(vals, axis=0)
            row = {z: float(r) for z, r in zip(data.zone_names, per_zone)}
            row["mean"] = float(per_zone.mean())
            table[str(season)] = row
        out[name] = table
    return out


def format_rms_table(table: Mapping, zone_names) -> list[list[str]]:
    rows = [["model", "season"] + list(zone_names) + ["mean"]]
    for model, seasons in table.items():
        for season, row in seasons.items():
            rows.append([model, season] + [f"{row[z]:.4f}" for z in zone_names] + [f"{row['mean']:.4f}"])
    return rows


def week_comparison(models: Mapping[str, object], data: Dataset, week: Dataset, season,
                    kalman: KalmanConfig) -> dict:
    """Week-long open-loop predictions from a matched initial condition."""
    s = data.index_of(int(week.timestamps[0]))
    steps = min(len(week), len(data) - 1 - s)
    out = {"measured": data.zone_temps[s:s + steps + 1]}
    for name, model in models.items():
        if isinstance(model, DataDrivenModel):
            out[name] = predict_a(model, data, s, steps, season)
        else:
            out[name] = predict_b(model, data, s, steps, season, kalman)
    out["timestamps"] = data.timestamps[s:s + steps + 1]
    out["rms"] = {name: zone_rms(out["measured"][1:], out[name][1:])[0].tolist()
                  for name in models}
    return out


# --------------------------------------------------------------------------
# control


def mpc_week(split: SplitDataset, season=None) -> tuple[Season, Dataset]:
    seasons = [Season(season)] if season is not None else [s for s in SEASONS if split.test.get(s)]
    for s in seasons:
        if split.test.get(s):
            return s, split.test[s][0]
    raise ConfigurationError(f"no test week available for season {season}")


def run_control(model, data: Dataset, week: Dataset, season, cfg: PipelineConfig, mode: str = "open",
                truth: GroundTruth | None = None) -> ClosedLoopRun:
    """Week-long receding-horizon run starting at the first sample of ``week``."""
    s = data.index_of(int(week.timestamps[0]))
    steps = min(len(week), len(data) - s - cfg.mpc.horizon)
    V = data.disturbances[s:s + steps + cfg.mpc.horizon]
    pos = int(data.positions[s])
    ts = data.timestamps[s:s + steps]
    is_a = isinstance(model, DataDrivenModel)
    if is_a:
        x0 = np.clip(data.zone_temps[s], cfg.mpc.t_min, cfg.mpc.t_max)
    else:
        x0 = initial_state_b(model, data, s, cfg.kalman, season)
    if mode == "open":
        return run_receding_horizon(model, x0, V, season, cfg.mpc, steps, pos, timestamps=ts,
                                    step_minutes=data.step_minutes)
    if mode != "plant":
        raise ConfigurationError("mode must be 'open' or 'plant'")
    if truth is None or truth.model is None:
        raise ConfigurationError("plant mode needs a generated RC scenario (ground-truth plant)")
    plant = truth.model
    to_plant = None
    if is_a:
        if model.n != plant.n_zones:
            raise ConfigurationError("Model A zones do not match the plant")
        x0 = truth.outputs[s]
        desc = cfg.building

        def to_plant(u):
            return split_zone_flows(desc, u)
    return run_receding_horizon(model, x0, V, season, cfg.mpc, steps, pos, plant=plant,
                                plant_x0=truth.states[s], plant_gains=truth.gains[s:s + steps],
                                to_plant=to_plant, kalman=cfg.kalman, timestamps=ts,
                                step_minutes=data.step_minutes)
