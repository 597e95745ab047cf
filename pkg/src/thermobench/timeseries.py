"""Aligned building time series: container, resampling, seasons, splits, RMS.

Timestamps are integer minutes since :data:`EPOCH`, a Monday at 00:00, so
``t // MINUTES_PER_WEEK`` is a Monday-aligned week number and
``(t % MINUTES_PER_WEEK) // step`` is the time-of-week index.
"""
from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    OutOfSeasonError,
    ShapeError,
)

EPOCH = _dt.datetime(2000, 1, 3)  # a Monday
MINUTES_PER_DAY = 24 * 60
MINUTES_PER_WEEK = 7 * MINUTES_PER_DAY
SOLAR_COLUMNS = ("sol_e", "sol_n", "sol_s", "sol_w")


def to_minutes(when) -> int:
    """Convert a ``datetime``/``date``/ISO string to epoch minutes."""
    if isinstance(when, str):
        when = _dt.datetime.fromisoformat(when)
    elif isinstance(when, _dt.date) and not isinstance(when, _dt.datetime):
        when = _dt.datetime(when.year, when.month, when.day)
    minutes = (when - EPOCH).total_seconds() / 60.0
    if minutes != int(minutes):
        raise ConfigurationError(f"{when} is not on a whole minute")
    return int(minutes)


def to_datetime(minutes: int) -> _dt.datetime:
    return EPOCH + _dt.timedelta(minutes=int(minutes))


def steps_per_week(step_minutes: int) -> int:
    if MINUTES_PER_WEEK % step_minutes:
        raise ConfigurationError(f"step of {step_minutes} min does not divide a week")
    return MINUTES_PER_WEEK // step_minutes


def time_of_week(timestamps, step_minutes: int) -> np.ndarray:
    """Time-of-week index (0 = Monday 00:00) for each timestamp."""
    t = np.asarray(timestamps, dtype=np.int64)
    return (t % MINUTES_PER_WEEK) // step_minutes


@dataclass(frozen=True)
class DisturbanceFrame:
    ambient_temp: float
    supply_air_temp: float
    solar: tuple[float, float, float, float] | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned zone temperatures, VAV flows and disturbances on a fixed grid."""

    step_minutes: int
    timestamps: np.ndarray
    zone_temps: np.ndarray
    vav_flows: np.ndarray
    t_ambient: np.ndarray
    t_supply: np.ndarray
    excitation_mask: np.ndarray
    solar: np.ndarray | None = None
    zone_names: tuple[str, ...] = ()
    vav_ids: tuple[str, ...] = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        temps = np.asarray(self.zone_temps, dtype=float)
        if temps.ndim == 1:
            temps = temps[:, None]
        flows = np.asarray(self.vav_flows, dtype=float)
        if flows.ndim == 1:
            flows = flows[:, None]
        T = ts.size
        set_ = object.__setattr__
        set_(self, "timestamps", ts)
        set_(self, "zone_temps", temps)
        set_(self, "vav_flows", flows)
        set_(self, "t_ambient", np.asarray(self.t_ambient, dtype=float).reshape(-1))
        set_(self, "t_supply", np.asarray(self.t_supply, dtype=float).reshape(-1))
        set_(self, "excitation_mask", np.asarray(self.excitation_mask, dtype=bool).reshape(-1))
        if self.solar is not None:
            set_(self, "solar", np.asarray(self.solar, dtype=float).reshape(T, 4))
        for name in ("zone_temps", "vav_flows", "t_ambient", "t_supply", "excitation_mask"):
            if getattr(self, name).shape[0] != T:
                raise ShapeError(f"{name} has {getattr(self, name).shape[0]} rows, expected {T}")
        if not self.zone_names:
            set_(self, "zone_names", tuple(f"z{i}" for i in range(temps.shape[1])))
        if not self.vav_ids:
            set_(self, "vav_ids", tuple(f"v{i}" for i in range(flows.shape[1])))
        if len(self.zone_names) != temps.shape[1] or len(self.vav_ids) != flows.shape[1]:
            raise ShapeError("zone_names/vav_ids do not match column counts")
        if self.step_minutes <= 0:
            raise ConfigurationError("step_minutes must be positive")
        if T and ts[0] < 0:
            raise ConfigurationError("timestamps must be non-negative")
        if T > 1 and np.any(np.diff(ts) != self.step_minutes):
            raise ConfigurationError("timestamps must be evenly spaced by step_minutes")
        if not np.all(np.isfinite(temps)):
            raise ConfigurationError("zone temperatures must be finite")
        if np.any(flows < 0) or not np.all(np.isfinite(flows)):
            raise ConfigurationError("VAV flows must be finite and non-negative")
        if not np.all(np.isfinite(self.t_supply)):
            raise ConfigurationError("supply air temperature must be finite")
        if self.solar is not None and np.any(self.solar < 0):
            raise ConfigurationError("solar irradiation must be non-negative")

    def __len__(self):
        return self.timestamps.size

    @property
    def n_zones(self) -> int:
        return self.zone_temps.shape[1]

    @property
    def n_vav(self) -> int:
        return self.vav_flows.shape[1]

    @property
    def disturbances(self) -> np.ndarray:
        """``[T x 2]`` matrix of (ambient, supply-air) temperatures."""
        return np.column_stack([self.t_ambient, self.t_supply])

    def frame(self, k: int) -> DisturbanceFrame:
        sol = None if self.solar is None else tuple(float(s) for s in self.solar[k])
        return DisturbanceFrame(float(self.t_ambient[k]), float(self.t_supply[k]), sol)

    @property
    def positions(self) -> np.ndarray:
        return time_of_week(self.timestamps, self.step_minutes)

    @property
    def steps_per_week(self) -> int:
        return steps_per_week(self.step_minutes)

    def slice(self, start: int, stop: int) -> "Dataset":
        sl = slice(start, stop)
        return replace(
            self,
            timestamps=self.timestamps[sl],
            zone_temps=self.zone_temps[sl],
            vav_flows=self.vav_flows[sl],
            t_ambient=self.t_ambient[sl],
            t_supply=self.t_supply[sl],
            excitation_mask=self.excitation_mask[sl],
            solar=None if self.solar is None else self.solar[sl],
        )

    def with_temps(self, zone_temps, zone_names=None) -> "Dataset":
        return replace(self, zone_temps=zone_temps,
                       zone_names=tuple(zone_names) if zone_names else self.zone_names)

    def index_of(self, minutes: int) -> int:
        """Row index of an exact timestamp."""
        if len(self) == 0:
            raise KeyError(minutes)
        offset = int(minutes) - int(self.timestamps[0])
        k, rem = divmod(offset, self.step_minutes)
        if rem or not 0 <= k < len(self):
            raise KeyError(minutes)
        return k

    def week_starts(self) -> list[int]:
        """Row indices at which a complete Monday-aligned week begins."""
        P = self.steps_per_week
        starts = np.flatnonzero(self.timestamps % MINUTES_PER_WEEK == 0)
        return [int(s) for s in starts if s + P <= len(self)]


def lump(d: Dataset, weights: Sequence[float] | None = None, name: str = "lumped") -> Dataset:
    """Collapse to a single zone: weighted mean temperature, summed flow."""
    w = np.ones(d.n_zones) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    return replace(
        d,
        zone_temps=(d.zone_temps @ w)[:, None],
        vav_flows=d.vav_flows.sum(axis=1)[:, None],
        zone_names=(name,),
        vav_ids=("total",),
    )


# --------------------------------------------------------------------------
# resampling


def _bin_mean(values, bins, n_bins):
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], -1)
    out = np.zeros((n_bins, flat.shape[1]))
    np.add.at(out, bins, flat)
    counts = np.bincount(bins, minlength=n_bins)
    out /= counts[:, None]
    return out.reshape((n_bins,) + values.shape[1:])


def resample(raw: Dataset, target_minutes: int) -> Dataset:
    """Put ``raw`` on a ``target_minutes`` grid.

    Downsampling averages each target bin (bins aligned to multiples of
    ``target_minutes`` since the epoch; incomplete edge bins are dropped) and
    flags a bin as excitation if any source sample in it is. Upsampling
    interpolates linearly, holding the excitation flag of the preceding
    source sample.
    """
    m = raw.step_minutes
    if target_minutes <= 0 or (target_minutes % m and m % target_minutes):
        raise ConfigurationError(
            f"cannot resample a {m}-minute series to {target_minutes} minutes")
    if target_minutes == m:
        return raw
    if target_minutes > m:
        ratio = target_minutes // m
        bins_abs = raw.timestamps // target_minutes
        first = bins_abs[0]
        bins = (bins_abs - first).astype(np.int64)
        counts = np.bincount(bins)
        complete = np.flatnonzero(counts == ratio)
        if complete.size == 0:
            raise InsufficientDataError("no complete target bin in the input")
        keep = np.isin(bins, complete)
        b = np.searchsorted(complete, bins[keep])
        n = complete.size
        mask = np.zeros(n, dtype=bool)
        np.logical_or.at(mask, b, raw.excitation_mask[keep])
        return replace(
            raw,
            step_minutes=target_minutes,
            timestamps=(first + complete) * target_minutes,
            zone_temps=_bin_mean(raw.zone_temps[keep], b, n),
            vav_flows=_bin_mean(raw.vav_flows[keep], b, n),
            t_ambient=_bin_mean(raw.t_ambient[keep], b, n),
            t_supply=_bin_mean(raw.t_supply[keep], b, n),
            excitation_mask=mask,
            solar=None if raw.solar is None else _bin_mean(raw.solar[keep], b, n),
        )
    t_new = np.arange(raw.timestamps[0], raw.timestamps[-1] + 1, target_minutes, dtype=np.int64)

    def interp(a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            return np.interp(t_new, raw.timestamps, a)
        return np.column_stack([np.interp(t_new, raw.timestamps, c) for c in a.T])

    src = np.searchsorted(raw.timestamps, t_new, side="right") - 1
    return replace(
        raw,
        step_minutes=target_minutes,
        timestamps=t_new,
        zone_temps=interp(raw.zone_temps),
        vav_flows=interp(raw.vav_flows),
        t_ambient=interp(raw.t_ambient),
        t_supply=interp(raw.t_supply),
        excitation_mask=raw.excitation_mask[src],
        solar=None if raw.solar is None else interp(raw.solar),
    )


# --------------------------------------------------------------------------
# seasons and splitting


class Season(str, Enum):
    FALL = "fall"
    WINTER = "winter"
    SPRING = "spring"

    def __str__(self):
        return self.value


SEASONS = (Season.FALL, Season.WINTER, Season.SPRING)


@dataclass(frozen=True)
class SeasonCalendar:
    """Inclusive (month, day) start dates; each season ends the day before the next."""

    fall_start: tuple[int, int] = (9, 1)
    winter_start: tuple[int, int] = (12, 16)
    spring_start: tuple[int, int] = (1, 26)
    spring_end: tuple[int, int] = (5, 15)

    def season_of(self, day: _dt.date) -> Season:
        md = (day.month, day.day)
        if self.fall_start <= md < self.winter_start:
            return Season.FALL
        if md >= self.winter_start or md < self.spring_start:
            return Season.WINTER
        if self.spring_start <= md <= self.spring_end:
            return Season.SPRING
        raise OutOfSeasonError(f"{day.isoformat()} falls outside every season")


def assign_season(t, calendar: SeasonCalendar | None = None) -> Season:
    """Season containing a timestamp (epoch minutes, date, or datetime)."""
    calendar = calendar or SeasonCalendar()
    if isinstance(t, (int, np.integer)):
        t = to_datetime(int(t))
    if isinstance(t, _dt.datetime):
        t = t.date()
    return calendar.season_of(t)


@dataclass
class SplitDataset:
    train: dict[Season, list[Dataset]]
    test: dict[Season, list[Dataset]]
    dropped_weeks: list[int] = field(default_factory=list)

    def seasons(self) -> list[Season]:
        return [s for s in SEASONS if self.train.get(s)]

    def summary(self) -> dict:
        return {
            str(s): {
                "train": [to_datetime(w.timestamps[0]).date().isoformat() for w in self.train.get(s, [])],
                "test": [to_datetime(w.timestamps[0]).date().isoformat() for w in self.test.get(s, [])],
            }
            for s in SEASONS if s in self.train or s in self.test
        }


def weeks_by_season(d: Dataset, calendar: SeasonCalendar | None = None):
    """Group complete week start indices by the season of their Monday."""
    groups: dict[Season, list[int]] = {}
    dropped = []
    for start in d.week_starts():
        try:
            season = assign_season(int(d.timestamps[start]), calendar)
        except OutOfSeasonError:
            dropped.append(int(d.timestamps[start]))
            continue
        groups.setdefault(season, []).append(start)
    return groups, dropped


def split_train_test(d: Dataset, train_fraction: float = 0.9, seed: int = 0,
                     calendar: SeasonCalendar | None = None) -> SplitDataset:
    """Per-season random split of complete Monday-aligned weeks.

    ``ceil(train_fraction * n)`` weeks of each season go to training, capped
    at ``n - 1`` so every season keeps a test week. Weeks whose Monday is out
    of season are dropped and listed in ``dropped_weeks``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
    groups, dropped = weeks_by_season(d, calendar)
    if not groups:
        raise InsufficientDataError("no complete in-season week in the dataset")
    P = d.steps_per_week
    train, test = {}, {}
    for season in SEASONS:
        starts = groups.get(season)
        if not starts:
            continue
        n = len(starts)
        if n < 2:
            raise InsufficientDataError(f"season {season} has {n} complete week(s); need 2")
        n_train = min(math.ceil(train_fraction * n - 1e-12), n - 1)
        rng = np.random.default_rng([seed, SEASONS.index(season)])
        order = rng.permutation(n)
        chosen = set(order[:n_train].tolist())
        train[season] = [d.slice(s, s + P) for i, s in enumerate(starts) if i in chosen]
        test[season] = [d.slice(s, s + P) for i, s in enumerate(starts) if i not in chosen]
    return SplitDataset(train, test, dropped)


# --------------------------------------------------------------------------
# error metric


def rms_error(measured, predicted):
    """Root-mean-square error.

    1-D inputs give a float; ``[N x n_zones]`` inputs give the per-zone RMS
    vector (use :func:`zone_rms` for the mean across zones as well).
    """
    a = np.asarray(measured, dtype=float)
    b = np.asarray(predicted, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ShapeError("need at least one sample")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigurationError("RMS inputs must be finite")
    r = np.sqrt(np.mean((a - b) ** 2, axis=0))
    return float(r) if r.ndim == 0 else r


def zone_rms(measured, predicted) -> tuple[np.ndarray, float]:
    per_zone = np.atleast_1d(rms_error(np.atleast_2d(np.asarray(measured).T).T,
                                       np.atleast_2d(np.asarray(predicted).T).T))
    return per_zone, float(per_zone.mean())


# --------------------------------------------------------------------------
# CSV


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(d: Dataset, path) -> None:
    """Write the ``timestamp,zone_*,vav_*,t_ambient,t_supply[,sol_*],excitation`` layout."""
    header = (["timestamp"] + [f"zone_{z}" for z in d.zone_names]
              + [f"vav_{v}" for v in d.vav_ids] + ["t_ambient", "t_supply"])
    if d.solar is not None:
        header += list(SOLAR_COLUMNS)
    header.append("excitation")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(d)):
            row = [to_datetime(d.timestamps[k]).isoformat(timespec="minutes")]
            row += [_fmt(x) for x in d.zone_temps[k]]
            row += [_fmt(x) for x in d.vav_flows[k]]
            row += [_fmt(d.t_ambient[k]), _fmt(d.t_supply[k])]
            if d.solar is not None:
                row += [_fmt(x) for x in d.solar[k]]
            row.append("1" if d.excitation_mask[k] else "0")
            w.writerow(row)


def read_csv(path) -> Dataset:
    """Read the CSV layout written by :func:`write_csv`.

    Missing rows on the inferred grid (the most common spacing) are filled by
    linear interpolation with the excitation flag off.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if not rows:
        raise InsufficientDataError(f"{path} has no data rows")
    required = {"timestamp", "t_ambient", "t_supply", "excitation"}
    if not required <= set(header):
        raise ConfigurationError(f"{path} lacks columns {sorted(required - set(header))}")
    col = {name: i for i, name in enumerate(header)}
    zones = [h for h in header if h.startswith("zone_")]
    vavs = [h for h in header if h.startswith("vav_")]
    has_solar = all(s in col for s in SOLAR_COLUMNS)
    ts = np.array([to_minutes(r[col["timestamp"]]) for r in rows], dtype=np.int64)

    def num(names):
        return np.array([[float(r[col[n]]) for n in names] for r in rows], dtype=float)

    temps, flows = num(zones), num(vavs)
    ta, tsup = num(["t_ambient"])[:, 0], num(["t_supply"])[:, 0]
    sol = num(list(SOLAR_COLUMNS)) if has_solar else None
    exc = np.array([r[col["excitation"]].strip() in ("1", "true", "True") for r in rows])
    order = np.argsort(ts, kind="stable")
    ts, temps, flows, ta, tsup, exc = ts[order], temps[order], flows[order], ta[order], tsup[order], exc[order]
    if sol is not None:
        sol = sol[order]
    if ts.size > 1:
        diffs = np.diff(ts)
        if np.any(diffs <= 0):
            raise ConfigurationError(f"{path} has duplicate timestamps")
        vals, counts = np.unique(diffs, return_counts=True)
        step = int(vals[np.argmax(counts)])
        if np.any(diffs % step):
            raise ConfigurationError(f"{path} timestamps are not on a {step}-minute grid")
        grid = np.arange(ts[0], ts[-1] + 1, step, dtype=np.int64)
        if grid.size != ts.size:
            def fill(a):
                if a.ndim == 1:
                    return np.interp(grid, ts, a)
                return np.column_stack([np.interp(grid, ts, c) for c in a.T]) if a.shape[1] else np.zeros((grid.size, 0))
            temps, flows, ta, tsup = fill(temps), fill(flows), fill(ta), fill(tsup)
            sol = None if sol is None else fill(sol)
            exc = np.isin(grid, ts[exc])
            ts = grid
    else:
        step = 15
    return Dataset(
        step_minutes=step, timestamps=ts, zone_temps=temps, vav_flows=flows,
        t_ambient=ta, t_supply=tsup, excitation_mask=exc, solar=sol,
        zone_names=tuple(z[len("zone_"):] for z in zones),
        vav_ids=tuple(v[len("vav_"):] for v in vavs),
    )
