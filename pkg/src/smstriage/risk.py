"""Spatio-temporal risk surface from assessed reports.

Each cell centre x accumulates  w * exp(-d(x, p)^2 / (2 sigma^2)) * exp(-dt / tau)
over case records (p, w, t), with d the great-circle distance in km and dt the
record age in days. Forecasting blurs the surface with a Gaussian whose width
grows with the median mobility speed of recent senders.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import events as ev
from .geo import EARTH_RADIUS_KM, GeoPoint, GridSpec, haversine_km

DAY = 86400.0
KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0


class NegativeHorizon(ValueError):
    pass


@dataclass(frozen=True)
class RiskParams:
    sigma_km: float = 10.0
    tau_days: float = 7.0
    incubation_days: int = 21
    default_speed_kmpd: float = 5.0
    orbit_size: int = 10


@dataclass(frozen=True)
class CaseRecord:
    sender_key: str
    lat: float
    lon: float
    weight: float
    at: int


@dataclass
class MovementOrbit:
    sender_key: str
    size: int = 10
    locations: deque = field(default_factory=deque)  # (lat, lon, at)

    def add(self, lat: float, lon: float, at: int) -> None:
        self.locations.append((lat, lon, at))
        while len(self.locations) > self.size:
            self.locations.popleft()

    @property
    def centroid(self) -> GeoPoint:
        n = len(self.locations)
        # fsum keeps the mean independent of insertion order
        return GeoPoint(math.fsum(p[0] for p in self.locations) / n,
                        math.fsum(p[1] for p in self.locations) / n)

    @property
    def radius_km(self) -> float:
        if len(self.locations) < 2:
            return 0.0
        c = self.centroid
        return max(haversine_km(c, GeoPoint(lat, lon)) for lat, lon, _ in self.locations)

    @property
    def span_days(self) -> float:
        ts = [p[2] for p in self.locations]
        return (max(ts) - min(ts)) / DAY

    @property
    def last_seen(self) -> int:
        return max(p[2] for p in self.locations)


@dataclass
class RiskGrid:
    spec: GridSpec
    values: np.ndarray
    as_of: int
    horizon_days: float = 0.0

    def __post_init__(self):
        if self.values.shape != (self.spec.n_rows, self.spec.n_cols):
            raise ValueError("values shape does not match grid")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("risk values must be finite and non-negative")


def sender_key(msisdn: str, salt: str) -> str:
    return hashlib.sha256(f"{salt}:{msisdn}".encode()).hexdigest()[:16]


class RiskStore:
    """Case records and per-sender orbits; mutated only by CASE_RECORD events."""

    def __init__(self, params: RiskParams = RiskParams(), salt: str = ""):
        self.params = params
        self.salt = salt
        self.records: list[CaseRecord] = []
        self.orbits: dict[str, MovementOrbit] = {}
        self.emit = ev.LocalEmitter(self)

    def apply(self, e: ev.Event) -> None:
        if e.kind != ev.CASE_RECORD:
            return
        d = e.data
        self.records.append(CaseRecord(d["sender"], d["lat"], d["lon"], d["weight"], e.at))
        orbit = self.orbits.get(d["sender"])
        if orbit is None:
            orbit = self.orbits[d["sender"]] = MovementOrbit(d["sender"], self.params.orbit_size)
        orbit.add(d["lat"], d["lon"], e.at)

    def state(self) -> dict:
        return {
            "records": [[r.sender_key, r.lat, r.lon, r.weight, r.at] for r in self.records],
            "orbits": {k: [list(p) for p in o.locations] for k, o in sorted(self.orbits.items())},
        }

    def record_case(self, assessment, loc, msisdn: str, now: int) -> Optional[CaseRecord]:
        """Append a record weighted by the assessment score; NONE locations are skipped."""
        if loc.point is None:
            return None
        self.emit(ev.CASE_RECORD, now, sender=sender_key(msisdn, self.salt),
                  lat=loc.point.lat, lon=loc.point.lon, weight=assessment.score)
        return self.records[-1]


def _haversine_np(lat1, lon1, lat2, lon2):
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(lon2 - lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def build_grid(records: Iterable[CaseRecord], spec: GridSpec, now: int,
               params: RiskParams = RiskParams(), chunk: int = 256) -> RiskGrid:
    max_age = 2 * params.incubation_days
    live = []
    for r in records:
        age = max(0.0, (now - r.at) / DAY)
        if age <= max_age and r.weight != 0:
            live.append((r.lat, r.lon, r.weight * math.exp(-age / params.tau_days)))
    rows = spec.origin.lat + (np.arange(spec.n_rows) + 0.5) * spec.cell_deg
    cols = spec.origin.lon + (np.arange(spec.n_cols) + 0.5) * spec.cell_deg
    clat, clon = np.meshgrid(rows, cols, indexing="ij")
    clat, clon = clat.ravel()[:, None], clon.ravel()[:, None]
    values = np.zeros(clat.shape[0])
    two_s2 = 2.0 * params.sigma_km ** 2
    for i in range(0, len(live), chunk):
        block = np.asarray(live[i:i + chunk], dtype=float)
        d = _haversine_np(clat, clon, block[None, :, 0], block[None, :, 1])
        values += (block[None, :, 2] * np.exp(-(d * d) / two_s2)).sum(axis=1)
    return RiskGrid(spec, values.reshape(spec.n_rows, spec.n_cols), now, 0.0)


def median_speed(orbits: Iterable[MovementOrbit], as_of: int, params: RiskParams = RiskParams()) -> float:
    """Median km/day over orbits with 2+ points seen within the incubation window."""
    cutoff = as_of - params.incubation_days * DAY
    speeds = [
        o.radius_km / max(1.0, o.span_days)
        for o in orbits
        if len(o.locations) >= 2 and cutoff <= o.last_seen <= as_of
    ]
    return statistics.median(speeds) if speeds else params.default_speed_kmpd


def gaussian_kernel(sigma_cells: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at 3 sigma."""
    radius = int(math.ceil(3 * sigma_cells))
    k = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-(k * k) / (2 * sigma_cells ** 2))
    return w / w.sum()


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    n = a.shape[axis]
    full = np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="full"), axis, a)
    return np.take(full, np.arange(r, r + n), axis=axis)


def cell_sigmas(spec: GridSpec, sigma_km: float) -> tuple[float, float]:
    """Blur width in (row, col) cells; columns shrink with cos(latitude at grid centre)."""
    mid_lat = spec.origin.lat + spec.n_rows * spec.cell_deg / 2
    row_km = spec.cell_deg * KM_PER_DEG
    col_km = row_km * max(math.cos(math.radians(mid_lat)), 1e-6)
    return sigma_km / row_km, sigma_km / col_km


def forecast(grid: RiskGrid, orbits: Iterable[MovementOrbit], horizon_days: float,
             params: RiskParams = RiskParams(), speed_kmpd: Optional[float] = None) -> RiskGrid:
    if horizon_days < 0:
        raise NegativeHorizon(horizon_days)
    if horizon_days == 0:
        return grid
    v = median_speed(orbits, grid.as_of, params) if speed_kmpd is None else speed_kmpd
    s_row, s_col = cell_sigmas(grid.spec, v * horizon_days)
    out = grid.values.astype(float, copy=True)
    if s_row > 0:
        out = _convolve_axis(out, gaussian_kernel(s_row), 0)
    if s_col > 0:
        out = _convolve_axis(out, gaussian_kernel(s_col), 1)
    np.maximum(out, 0.0, out=out)
    return RiskGrid(grid.spec, out, grid.as_of, float(horizon_days))


def export_geojson(grid: RiskGrid, threshold: float) -> str:
    """FeatureCollection with one Polygon per cell at or above ``threshold``, row-major."""
    features = []
    spec = grid.spec
    for r in range(spec.n_rows):
        for c in range(spec.n_cols):
            v = float(grid.values[r, c])
            if v < threshold:
                continue
            s, w, n, e = spec.corners(r, c)
            ring = [[w, s], [e, s], [e, n], [w, n], [w, s]]  # counter-clockwise
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"risk": round(v, 6), "row": r, "col": c},
            })
    return json.dumps({"type": "FeatureCollection", "features": features}, separators=(",", ":"))
