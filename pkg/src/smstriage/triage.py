"""Additive case-definition rubric with a spatial outbreak prior."""

from __future__ import annotations

import bisect
import enum
import logging
import math
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, replace
from typing import Optional

from . import events as ev
from .geo import EARTH_RADIUS_KM, GeoPoint, LocationEstimate
from .parser import CanonicalSymptom, EpiRiskFlag, Polarity, SymptomReport

log = logging.getLogger(__name__)

DAY = 86400

COMMON = frozenset({
    CanonicalSymptom.HEADACHE, CanonicalSymptom.MUSCLE_PAIN, CanonicalSymptom.WEAKNESS,
    CanonicalSymptom.FATIGUE, CanonicalSymptom.VOMITING, CanonicalSymptom.DIARRHEA,
    CanonicalSymptom.ABDOMINAL_PAIN,
})
THRESHOLD_MIN, THRESHOLD_MAX = 3, 8


class Label(str, enum.Enum):
    LIKELY = "LIKELY"
    POSSIBLE = "POSSIBLE"
    UNLIKELY = "UNLIKELY"


class UnknownCode(LookupError):
    pass


@dataclass(frozen=True)
class RubricWeights:
    fever_pts: int = 2
    common_symptom_pts: int = 1
    hemorrhage_pts: int = 2
    epi_pts: int = 2
    spatial_prior_pts: int = 1
    likely_threshold: int = 5
    possible_threshold: int = 3
    tune_step: int = 0

    def __post_init__(self):
        if any(v < 0 for v in asdict(self).values()):
            raise ValueError("rubric weights must be non-negative")
        if self.possible_threshold > self.likely_threshold:
            raise ValueError("possible_threshold must not exceed likely_threshold")


@dataclass(frozen=True)
class PriorParams:
    radius_km: float = 20.0
    min_cases: int = 3
    incubation_days: int = 21


@dataclass(frozen=True)
class CaseAssessment:
    report: SymptomReport
    points: int
    score: float
    label: Label
    spatial_prior_applied: bool
    assessed_at: int


@dataclass(frozen=True)
class HistoryEntry:
    label: Label
    point: Optional[GeoPoint]
    at: int


def _at(item: tuple) -> int:
    return item[0]


class CaseHistory:
    """Recent assessments; LIKELY ones with a point are bucketed for the prior query."""

    BUCKET_DEG = 0.1

    def __init__(self, incubation_days: int = 21):
        self.incubation_days = incubation_days
        self.entries: deque[HistoryEntry] = deque()
        # bucket -> time-ordered (at, lat, lon, phi, cos phi)
        self._likely: dict[tuple[int, int], list[tuple]] = defaultdict(list)
        self._since_prune = 0
        self.clock = 0

    def add(self, entry: HistoryEntry) -> None:
        self.clock = max(self.clock, entry.at)
        self.entries.append(entry)
        if entry.label is Label.LIKELY and entry.point is not None:
            lat, lon = entry.point.lat, entry.point.lon
            phi = math.radians(lat)
            item = (entry.at, lat, lon, phi, math.cos(phi))
            bucket = self._likely[self._bucket(lat, lon)]
            if bucket and bucket[-1][0] > entry.at:
                bisect.insort(bucket, item, key=_at)
            else:
                bucket.append(item)
        cutoff = self.clock - self.incubation_days * DAY
        while self.entries[0].at < cutoff:
            self.entries.popleft()
        self._since_prune += 1
        if self._since_prune >= 4096:
            self._prune(cutoff)

    def _prune(self, cutoff: int) -> None:
        self._since_prune = 0
        for key in list(self._likely):
            bucket = self._likely[key]
            i = bisect.bisect_left(bucket, cutoff, key=_at)
            if i == len(bucket):
                del self._likely[key]
            elif i:
                del bucket[:i]

    def _bucket(self, lat: float, lon: float) -> tuple[int, int]:
        return math.floor(lat / self.BUCKET_DEG), math.floor(lon / self.BUCKET_DEG)

    def likely_buckets(self, point: GeoPoint, radius_km: float):
        """Time-ordered LIKELY lists whose bucket could lie within ``radius_km`` of ``point``."""
        dlat = radius_km / 111.0 + self.BUCKET_DEG
        coslat = max(math.cos(math.radians(min(89.0, abs(point.lat) + dlat))), 0.01)
        dlon = radius_km / (111.0 * coslat) + self.BUCKET_DEG
        r0, c0 = self._bucket(point.lat - dlat, point.lon - dlon)
        r1, c1 = self._bucket(point.lat + dlat, point.lon + dlon)
        if (r1 - r0 + 1) * (c1 - c0 + 1) > len(self._likely):
            yield from self._likely.values()
            return
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                bucket = self._likely.get((r, c))
                if bucket:
                    yield bucket

    def window(self, now: int) -> list[HistoryEntry]:
        cutoff = now - self.incubation_days * DAY
        return [e for e in self.entries if cutoff <= e.at <= now]


def spatial_prior(loc: LocationEstimate, history: CaseHistory, now: int,
                  params: PriorParams = PriorParams()) -> bool:
    if loc.point is None:
        return False
    cutoff = now - params.incubation_days * DAY
    p = loc.point
    r = params.radius_km
    # great-circle distance is at least R * |dlat|, so this band test is exact-safe
    max_dlat = math.degrees(r / EARTH_RADIUS_KM) * (1 + 1e-9)
    phi1 = math.radians(p.lat)
    c1 = math.cos(phi1)
    sin, radians = math.sin, math.radians
    count = 0
    for bucket in history.likely_buckets(p, r):
        # newest first; stop at the incubation cutoff
        for at, lat, lon, phi2, c2 in reversed(bucket):
            if at > now:
                continue
            if at < cutoff:
                break
            if abs(lat - p.lat) > max_dlat:
                continue
            # haversine_km, inlined with the same operation order
            h = sin((phi2 - phi1) / 2) ** 2 + c1 * c2 * sin(radians(lon - p.lon) / 2) ** 2
            if 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h))) <= r:
                count += 1
                if count >= params.min_cases:
                    return True
    return False


def rubric_points(report: SymptomReport, weights: RubricWeights, prior: bool) -> int:
    s = report.symptoms
    pts = 0
    if CanonicalSymptom.FEVER in s:
        pts += weights.fever_pts
    pts += weights.common_symptom_pts * len(s & COMMON)
    if CanonicalSymptom.HEMORRHAGE in s:
        pts += weights.hemorrhage_pts
    if report.epi_flags:
        pts += weights.epi_pts
    if prior:
        pts += weights.spatial_prior_pts
    return pts


def label_for(points: int, has_fever: bool, weights: RubricWeights) -> Label:
    # fever is the mandatory anchor for LIKELY
    if has_fever and points >= weights.likely_threshold:
        return Label.LIKELY
    if points >= weights.possible_threshold:
        return Label.POSSIBLE
    return Label.UNLIKELY


def evaluate(report: SymptomReport, loc: LocationEstimate, history: CaseHistory,
             weights: RubricWeights, now: int, params: PriorParams = PriorParams()) -> CaseAssessment:
    """Score without recording anything."""
    prior = spatial_prior(loc, history, now, params)
    pts = rubric_points(report, weights, prior)
    label = label_for(pts, CanonicalSymptom.FEVER in report.symptoms, weights)
    return CaseAssessment(report, pts, min(1.0, pts / 10), label, prior, now)


class TriageState:
    """Weights plus case history, mutated only by applied events."""

    def __init__(self, weights: RubricWeights = RubricWeights(), params: PriorParams = PriorParams()):
        self.weights = weights
        self.params = params
        self.history = CaseHistory(params.incubation_days)
        self.emit = ev.LocalEmitter(self)

    def apply(self, e: ev.Event) -> None:
        if e.kind == ev.ASSESSMENT:
            d = e.data
            pt = GeoPoint(d["lat"], d["lon"]) if d.get("lat") is not None else None
            self.history.add(HistoryEntry(Label(d["label"]), pt, e.at))
        elif e.kind == ev.WEIGHTS_TUNED:
            self.weights = replace(self.weights, likely_threshold=e.data["likely_threshold"])
        elif e.kind == ev.CONFIG_LOADED and "weights" in e.data:
            self.weights = RubricWeights(**e.data["weights"])

    def state(self) -> dict:
        return {
            "weights": asdict(self.weights),
            "history": [
                [h.label.value, None if h.point is None else [h.point.lat, h.point.lon], h.at]
                for h in self.history.window(self.history.clock)
            ],
        }


def assess(report: SymptomReport, loc: LocationEstimate, triage: TriageState, now: int,
           **context) -> CaseAssessment:
    """Score a report and append it to the case history (via an ASSESSMENT event)."""
    a = evaluate(report, loc, triage.history, triage.weights, now, triage.params)
    triage.emit(
        ev.ASSESSMENT, now,
        label=a.label.value, points=a.points, score=a.score, prior=a.spatial_prior_applied,
        symptoms=sorted(s.value for s in report.symptoms),
        epi=sorted(f.value for f in report.epi_flags),
        lat=None if loc.point is None else loc.point.lat,
        lon=None if loc.point is None else loc.point.lon,
        source=loc.source.value, **context,
    )
    return a


def apply_feedback_tuning(fb, original, weights: RubricWeights) -> RubricWeights:
    """Raise the LIKELY threshold after a rejected boundary case, if tuning is on.

    ``original`` is anything carrying the issued ``label`` and ``points``.
    """
    if original is None:
        raise UnknownCode(fb.code)
    if (weights.tune_step > 0 and fb.polarity is Polarity.NEGATIVE
            and Label(original.label) is Label.LIKELY
            and original.points == weights.likely_threshold):
        new = min(THRESHOLD_MAX, max(THRESHOLD_MIN, weights.likely_threshold + weights.tune_step))
        if new != weights.likely_threshold:
            log.info("likely_threshold %d -> %d after %s", weights.likely_threshold, new, fb.code)
            return replace(weights, likely_threshold=new)
    return weights
