"""Coordinates, great-circle distance, grid cells and location resolution."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .parser import fuzzy_pick, normalize

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
MAX_RADIUS_KM = 50.0


class MalformedRow(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon < 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


class Source(str, enum.Enum):
    TOWER = "TOWER"
    POSTCODE = "POSTCODE"
    VILLAGE = "VILLAGE"
    NONE = "NONE"


@dataclass(frozen=True)
class LocationEstimate:
    point: Optional[GeoPoint]
    radius_km: float
    source: Source

    def __post_init__(self):
        if (self.source is Source.NONE) != (self.point is None):
            raise ValueError("source NONE iff no point")
        if not 0.0 <= self.radius_km <= MAX_RADIUS_KM:
            raise ValueError(f"radius {self.radius_km} outside [0, 50] km")


NO_LOCATION = LocationEstimate(None, 0.0, Source.NONE)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class GridSpec:
    origin: GeoPoint  # south-west corner
    cell_deg: float = 0.1
    n_rows: int = 1
    n_cols: int = 1

    def __post_init__(self):
        if self.cell_deg <= 0 or self.n_rows <= 0 or self.n_cols <= 0:
            raise ValueError("grid needs positive cell size and dimensions")

    def south(self, row: int) -> float:
        return self.origin.lat + row * self.cell_deg

    def west(self, col: int) -> float:
        return self.origin.lon + col * self.cell_deg

    def center(self, row: int, col: int) -> tuple[float, float]:
        return (self.origin.lat + (row + 0.5) * self.cell_deg,
                self.origin.lon + (col + 0.5) * self.cell_deg)

    def corners(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(south, west, north, east) edges of a cell."""
        return self.south(row), self.west(col), self.south(row + 1), self.west(col + 1)


def _index(value: float, origin: float, step: float, edge) -> int:
    i = math.floor((value - origin) / step)
    # align with the corner formula used for polygons
    if value < edge(i):
        i -= 1
    elif value >= edge(i + 1):
        i += 1
    return i


def cell_of(p: GeoPoint, g: GridSpec) -> Optional[tuple[int, int]]:
    r = _index(p.lat, g.origin.lat, g.cell_deg, g.south)
    c = _index(p.lon, g.origin.lon, g.cell_deg, g.west)
    if 0 <= r < g.n_rows and 0 <= c < g.n_cols:
        return r, c
    return None


# ---------------------------------------------------------------- tables

@dataclass
class TowerTable:
    towers: dict[str, GeoPoint] = field(default_factory=dict)
    skipped: int = 0

    def __len__(self):
        return len(self.towers)

    def get(self, tower_id):
        return self.towers.get(tower_id)


@dataclass
class Gazetteer:
    postcodes: dict[str, GeoPoint] = field(default_factory=dict)
    villages: dict[str, GeoPoint] = field(default_factory=dict)
    skipped: int = 0

    def __len__(self):
        return len(self.postcodes) + len(self.villages)


def place_key(name: str) -> str:
    return "".join(normalize(name))


def _point(row: dict) -> GeoPoint:
    try:
        return GeoPoint(float(row["lat"]), float(row["lon"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise MalformedRow(str(exc)) from exc


def _rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        yield from enumerate(csv.DictReader(fh), 2)


def load_towers(path) -> TowerTable:
    table = TowerTable()
    for n, row in _rows(path):
        try:
            tid = (row.get("tower_id") or "").strip()
            if not tid:
                raise MalformedRow("empty tower_id")
            pt = _point(row)
        except MalformedRow as exc:
            log.warning("%s:%d skipped: %s", path, n, exc)
            table.skipped += 1
            continue
        if tid in table.towers:
            log.warning("%s:%d duplicate tower %s, last wins", path, n, tid)
        table.towers[tid] = pt
    return table


def load_gazetteer(path) -> Gazetteer:
    gaz = Gazetteer()
    for n, row in _rows(path):
        try:
            key = place_key(row.get("name") or "")
            kind = (row.get("kind") or "").strip().lower()
            if not key or kind not in ("postcode", "village"):
                raise MalformedRow(f"bad name/kind {row.get('name')!r}/{kind!r}")
            pt = _point(row)
        except MalformedRow as exc:
            log.warning("%s:%d skipped: %s", path, n, exc)
            gaz.skipped += 1
            continue
        table = gaz.postcodes if kind == "postcode" else gaz.villages
        if key in table:
            log.warning("%s:%d duplicate %s %s, last wins", path, n, kind, key)
        table[key] = pt
    return gaz


def resolve_location(frame, report, towers: TowerTable, gazetteer: Gazetteer,
                     tower_radius_km: float = 5.0, place_radius_km: float = 10.0) -> LocationEstimate:
    """Tower beats postcode beats village name; no match gives ``NO_LOCATION``."""
    if frame.tower_id is not None:
        pt = towers.get(frame.tower_id)
        if pt is not None:
            return LocationEstimate(pt, tower_radius_km, Source.TOWER)
    if report is not None:
        for tok in report.unmatched_tokens:
            pt = gazetteer.postcodes.get(tok)
            if pt is not None:
                return LocationEstimate(pt, place_radius_km, Source.POSTCODE)
        hints = [report.location_hint] if report.location_hint else []
        hints += [t for t in report.unmatched_tokens
                  if t.isalpha() and len(t) >= 4 and t != report.location_hint]
        for hint in hints:
            pt = fuzzy_pick(hint, gazetteer.villages)
            if pt is not None:
                return LocationEstimate(pt, place_radius_km, Source.VILLAGE)
    return NO_LOCATION
