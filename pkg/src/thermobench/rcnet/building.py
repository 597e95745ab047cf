"""Building descriptions: zones, envelope elements and VAV boxes.

A description is a small JSON document (``schema: 1``)::

    {"schema": 1, "name": "...", "furniture_multiplier": 5.0, "h_out": 25.0,
     "zones": [{"name": "N", "floor_area": 100.0, "height": 3.0}, ...],
     "elements": [{"kind": "exterior_wall", "zones": ["N"], "area": 30.0,
                   "orientation": "N", "capacitances": [1.2e5, 6e4],
                   "conductances": [0.5]}, ...],
     "vavs": [{"id": "v1", "zone": "N", "u_min": 0.0, "u_max": 0.4}, ...]}

Element kinds are ``interior_wall`` (two zones), ``exterior_wall``,
``floor``, ``ceiling`` and ``window`` (one zone). Capacitances are per
square metre (J/m^2K) for each layer node, ``conductances`` (W/m^2K) link
consecutive layers. Windows are massless.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..datadriven import ORIENTATIONS, ZoneTopology
from ..errors import AssemblyError, ConfigurationError

AIR_DENSITY = 1.2  # kg/m^3
CP_AIR = 1005.0  # J/kgK
SCHEMA_VERSION = 1

ELEMENT_KINDS = ("interior_wall", "exterior_wall", "floor", "ceiling", "window")


@dataclass(frozen=True)
class Zone:
    name: str
    floor_area: float
    height: float = 3.0
    air_capacitance: float | None = None  # J/K, overrides the volume estimate


@dataclass(frozen=True)
class Element:
    kind: str
    zones: tuple[str, ...]
    area: float
    capacitances: tuple[float, ...] = ()
    conductances: tuple[float, ...] = ()
    orientation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "capacitances", tuple(float(c) for c in self.capacitances))
        object.__setattr__(self, "conductances", tuple(float(c) for c in self.conductances))


@dataclass(frozen=True)
class Vav:
    id: str
    zone: str
    u_min: float = 0.0
    u_max: float = 0.5


@dataclass(frozen=True, eq=False)
class BuildingDescription:
    name: str
    zones: tuple[Zone, ...]
    elements: tuple[Element, ...]
    vavs: tuple[Vav, ...]
    furniture_multiplier: float = 5.0
    h_out: float = 25.0
    schema: int = SCHEMA_VERSION
    extra: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "vavs", tuple(self.vavs))
        self.validate()

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.schema != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported building schema {self.schema}")
        names = [z.name for z in self.zones]
        if not names or len(set(names)) != len(names):
            raise ConfigurationError("zone names must be unique and non-empty")
        if self.furniture_multiplier <= 0 or self.h_out <= 0:
            raise ConfigurationError("furniture_multiplier and h_out must be positive")
        for z in self.zones:
            if z.floor_area <= 0 or z.height <= 0:
                raise ConfigurationError(f"zone {z.name}: floor area and height must be positive")
            if z.air_capacitance is not None and z.air_capacitance <= 0:
                raise ConfigurationError(f"zone {z.name}: capacitance must be positive")
        touched = set()
        for k, e in enumerate(self.elements):
            where = f"element {k} ({e.kind})"
            if e.kind not in ELEMENT_KINDS:
                raise ConfigurationError(f"{where}: unknown kind")
            want = 2 if e.kind == "interior_wall" else 1
            if len(e.zones) != want:
                raise ConfigurationError(f"{where}: needs {want} zone(s)")
            for z in e.zones:
                if z not in names:
                    raise ConfigurationError(f"{where}: unknown zone {z!r}")
            if want == 2 and e.zones[0] == e.zones[1]:
                raise ConfigurationError(f"{where}: connects a zone to itself")
            touched.update(e.zones)
            if e.area <= 0:
                raise ConfigurationError(f"{where}: area must be positive")
            if e.kind == "window":
                if e.capacitances:
                    raise ConfigurationError(f"{where}: windows are massless")
            else:
                if not e.capacitances:
                    raise ConfigurationError(f"{where}: at least one layer is required")
                if min(e.capacitances) <= 0:
                    raise ConfigurationError(f"{where}: capacitances must be positive")
                if len(e.conductances) != len(e.capacitances) - 1 or any(c <= 0 for c in e.conductances):
                    raise ConfigurationError(f"{where}: need one positive conductance between consecutive layers")
            if e.kind in ("exterior_wall", "window"):
                if e.orientation not in ORIENTATIONS:
                    raise ConfigurationError(f"{where}: orientation must be one of {ORIENTATIONS}")
        missing = set(names) - touched
        if missing:
            raise ConfigurationError(f"zones without any element: {sorted(missing)}")
        ids = [v.id for v in self.vavs]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("VAV ids must be unique")
        for v in self.vavs:
            if v.zone not in names:
                raise ConfigurationError(f"VAV {v.id}: unknown zone {v.zone!r}")
            if not 0 <= v.u_min <= v.u_max:
                raise ConfigurationError(f"VAV {v.id}: need 0 <= u_min <= u_max")
        self._check_connected()

    def _check_connected(self):
        # zones linked through interior walls, or each reaching the ambient
        n = len(self.zones)
        idx = {z.name: i for i, z in enumerate(self.zones)}
        parent = list(range(n + 1))  # node n is the ambient

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for e in self.elements:
            ends = [idx[z] for z in e.zones]
            if e.kind in ("exterior_wall", "window"):
                ends.append(n)
            for a, b in zip(ends, ends[1:]):
                parent[find(a)] = find(b)
        roots = {find(i) for i in range(n)}
        if len(roots) > 1:
            raise AssemblyError("element graph is disconnected: some zones share no path")

    # -- derived quantities -----------------------------------------------

    @property
    def zone_names(self) -> tuple[str, ...]:
        return tuple(z.name for z in self.zones)

    @property
    def vav_ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.vavs)

    def air_capacitance(self, zone: Zone) -> float:
        if zone.air_capacitance is not None:
            return float(zone.air_capacitance)
        return zone.floor_area * zone.height * AIR_DENSITY * CP_AIR * self.furniture_multiplier

    def topology(self) -> ZoneTopology:
        names = self.zone_names
        n = len(names)
        adj = np.zeros((n, n), dtype=bool)
        ext = [set() for _ in range(n)]
        for e in self.elements:
            if e.kind == "interior_wall":
                i, j = names.index(e.zones[0]), names.index(e.zones[1])
                adj[i, j] = adj[j, i] = True
            elif e.kind in ("exterior_wall", "window"):
                ext[names.index(e.zones[0])].add(e.orientation)
        return ZoneTopology(names, adj, ext, {v.id: v.zone for v in self.vavs},
                            tuple(z.floor_area for z in self.zones))

    def flow_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([v.u_min for v in self.vavs]), np.array([v.u_max for v in self.vavs]))

    def node_labels(self) -> list[str]:
        labels = [f"air:{z.name}" for z in self.zones]
        for k, e in enumerate(self.elements):
            for layer in range(len(e.capacitances)):
                labels.append(f"{e.kind}{k}:{'/'.join(e.zones)}:{layer}")
        return labels

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        def elem(e):
            d = {"kind": e.kind, "zones": list(e.zones), "area": e.area}
            if e.capacitances:
                d["capacitances"] = list(e.capacitances)
                d["conductances"] = list(e.conductances)
            if e.orientation is not None:
                d["orientation"] = e.orientation
            return d

        out = {
            "schema": self.schema,
            "name": self.name,
            "furniture_multiplier": self.furniture_multiplier,
            "h_out": self.h_out,
            "zones": [{k: v for k, v in (("name", z.name), ("floor_area", z.floor_area),
                                         ("height", z.height), ("air_capacitance", z.air_capacitance))
                       if v is not None} for z in self.zones],
            "elements": [elem(e) for e in self.elements],
            "vavs": [{"id": v.id, "zone": v.zone, "u_min": v.u_min, "u_max": v.u_max} for v in self.vavs],
        }
        if self.extra:
            out["extra"] = dict(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "BuildingDescription":
        try:
            zones = [Zone(z["name"], float(z["floor_area"]), float(z.get("height", 3.0)),
                          z.get("air_capacitance")) for z in d["zones"]]
            elements = [Element(e["kind"], tuple(e["zones"]), float(e["area"]),
                                tuple(e.get("capacitances", ())), tuple(e.get("conductances", ())),
                                e.get("orientation")) for e in d["elements"]]
            vavs = [Vav(str(v["id"]), v["zone"], float(v.get("u_min", 0.0)), float(v.get("u_max", 0.5)))
                    for v in d["vavs"]]
            return cls(d.get("name", "building"), zones, elements, vavs,
                       float(d.get("furniture_multiplier", 5.0)), float(d.get("h_out", 25.0)),
                       int(d.get("schema", SCHEMA_VERSION)), d.get("extra", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed building description: {exc}") from None

    @classmethod
    def load(cls, path) -> "BuildingDescription":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigurationError(f"building description not found: {path}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def single_zone(floor_area: float = 100.0, window_area: float = 10.0, n_vav: int = 1,
                u_max: float = 0.5, with_walls: bool = False) -> BuildingDescription:
    """Small one-zone building (air, floor and ceiling nodes plus a window)."""
    elements = [
        Element("floor", ("Z",), floor_area, (2.0e5,), ()),
        Element("ceiling", ("Z",), floor_area, (8.0e4,), ()),
        Element("window", ("Z",), window_area, orientation="S"),
    ]
    if with_walls:
        elements.append(Element("exterior_wall", ("Z",), 30.0, (1.2e5, 6.0e4), (0.5,), "S"))
    vavs = [Vav(f"v{i + 1}", "Z", 0.0, u_max) for i in range(n_vav)]
    return BuildingDescription("single-zone", (Zone("Z", floor_area),), tuple(elements), tuple(vavs))


def desk_building(window_fraction: float = 0.25) -> BuildingDescription:
    """Six-zone reference floor used by the demo scenario.

    Perimeter zones NW, NE, W, E, S surround a core zone C. 21 VAV boxes are
    spread 3/3/3/3/5/4 over NW/NE/W/E/S/C. The assignment is illustrative.
    """
    height = 3.0
    zones = [Zone("NW", 150.0), Zone("NE", 150.0), Zone("W", 120.0), Zone("E", 120.0),
             Zone("S", 250.0), Zone("C", 200.0)]
    facade = {  # facade length (m) per exterior orientation
        "NW": {"N": 12.0, "W": 12.0}, "NE": {"N": 12.0, "E": 12.0},
        "W": {"W": 10.0}, "E": {"E": 10.0}, "S": {"S": 25.0, "E": 5.0, "W": 5.0}, "C": {},
    }
    shared = [  # interior partitions: (a, b, length m)
        ("NW", "NE", 8.0), ("NW", "W", 10.0), ("NE", "E", 10.0), ("W", "C", 10.0),
        ("E", "C", 10.0), ("W", "S", 8.0), ("E", "S", 8.0), ("S", "C", 15.0),
        ("NW", "C", 6.0), ("NE", "C", 6.0),
    ]
    elements = []
    for z in zones:
        elements.append(Element("floor", (z.name,), z.floor_area, (2.4e5,), ()))
        elements.append(Element("ceiling", (z.name,), z.floor_area, (9.0e4,), ()))
        for orient, length in facade[z.name].items():
            area = length * height
            elements.append(Element("exterior_wall", (z.name,), (1 - window_fraction) * area,
                                    (1.4e5, 5.0e4), (0.6,), orient))
            elements.append(Element("window", (z.name,), window_fraction * area, orientation=orient))
    for a, b, length in shared:
        elements.append(Element("interior_wall", (a, b), length * height, (3.0e4,), ()))
    counts = {"NW": 3, "NE": 3, "W": 3, "E": 3, "S": 5, "C": 4}
    vavs = []
    for name, c in counts.items():
        for _ in range(c):
            vavs.append(Vav(f"vav{len(vavs) + 1:02d}", name, 0.0, 0.4))
    return BuildingDescription("desk-six-zone", tuple(zones), tuple(elements), tuple(vavs))


def vav_zone_matrix(desc: BuildingDescription) -> np.ndarray:
    """``[n_vav x n_zones]`` assignment matrix."""
    return desc.topology().vav_matrix(desc.vav_ids)


def split_zone_flows(desc: BuildingDescription, zone_flows: Sequence[float]) -> np.ndarray:
    """Distribute zone flows over their VAVs in proportion to ``u_max``."""
    M = vav_zone_matrix(desc)
    _, hi = desc.flow_bounds()
    share = hi[:, None] * M
    tot = share.sum(axis=0)
    share = share / np.where(tot > 0, tot, 1.0)
    return np.asarray(zone_flows, dtype=float) @ share.T
