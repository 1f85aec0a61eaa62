"""Health-facility knowledgebase with a TTL-governed capacity state machine.

Capacity transitions::

    update beds n>0           -> REPORTED{n, now}
    update beds 0             -> PRESUMED_FULL{now}
    recommendation issued     REPORTED{n} -> REPORTED{n-1}, REPORTED{1} -> PRESUMED_FULL{now}
    positive feedback         -> AVAILABLE
    negative feedback         -> PRESUMED_FULL{now}
    now >= since + ttl        PRESUMED_FULL -> AVAILABLE (lazily, on read)
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import events as ev
from .geo import GeoPoint, MalformedRow
from .parser import FacilityUpdate, Feedback, Polarity
from .wire import MSISDN_RE

log = logging.getLogger(__name__)

AVAILABLE = "AVAILABLE"
PRESUMED_FULL = "PRESUMED_FULL"
REPORTED = "REPORTED"

ISOLATION = "ISOLATION"
GENERAL = "GENERAL"
CAPABILITIES = frozenset({ISOLATION, GENERAL})

CODE_RE = re.compile(r"[A-Z0-9]+")


class UnknownFacility(LookupError):
    pass


class UnknownCode(LookupError):
    pass


class DuplicateFeedback(ValueError):
    pass


@dataclass(frozen=True)
class CapacityState:
    kind: str = AVAILABLE
    since: Optional[int] = None  # PRESUMED_FULL start, or REPORTED time
    beds: Optional[int] = None   # REPORTED only

    def __post_init__(self):
        if self.beds is not None and self.beds < 0:
            raise ValueError("beds_anticipated must be non-negative")

    def as_list(self) -> list:
        return [self.kind, self.since, self.beds]


def available() -> CapacityState:
    return CapacityState()


def presumed_full(since: int) -> CapacityState:
    return CapacityState(PRESUMED_FULL, since)


def reported(beds: int, at: int) -> CapacityState:
    return presumed_full(at) if beds == 0 else CapacityState(REPORTED, at, beds)


@dataclass
class Facility:
    code: str
    name: str
    point: GeoPoint
    contact_msisdn: str
    capabilities: frozenset
    capacity: CapacityState = field(default_factory=available)

    def admits(self, label: str) -> bool:
        if label in ("LIKELY", "POSSIBLE"):
            return ISOLATION in self.capabilities
        return True


class Registry:
    def __init__(self, ttl_hours: float = 24.0):
        self.ttl_s = int(round(ttl_hours * 3600))
        self.facilities: dict[str, Facility] = {}
        self.emit = ev.LocalEmitter(self)
        self.skipped = 0

    # ------------------------------------------------------------ fold

    def apply(self, e: ev.Event) -> None:
        k = e.kind
        d = e.data
        if k == ev.SEED_IMPORT:
            self.facilities[d["code"]] = Facility(
                d["code"], d["name"], GeoPoint(d["lat"], d["lon"]), d["contact"],
                frozenset(d["capabilities"]),
            )
            return
        f = self.facilities.get(d.get("facility"))
        if f is None:
            return
        if k == ev.FACILITY_UPDATE:
            if d.get("beds") is not None:
                f.capacity = reported(d["beds"], e.at)
            if d.get("lat") is not None:
                f.point = GeoPoint(d["lat"], d["lon"])
        elif k == ev.RECOMMENDATION_ISSUED:
            c = f.capacity
            if c.kind == REPORTED:
                f.capacity = presumed_full(e.at) if c.beds <= 1 else CapacityState(REPORTED, c.since, c.beds - 1)
        elif k == ev.FEEDBACK_POSITIVE and not d.get("fallback"):
            f.capacity = available()
        elif k == ev.FEEDBACK_NEGATIVE and not d.get("fallback"):
            f.capacity = presumed_full(e.at)
        elif k == ev.STATE_EXPIRED:
            f.capacity = available()

    def state(self) -> dict:
        return {
            code: [f.name, f.point.lat, f.point.lon, f.contact_msisdn,
                   sorted(f.capabilities), f.capacity.as_list()]
            for code, f in sorted(self.facilities.items())
        }

    # ------------------------------------------------------------ commands

    def import_seed(self, path, now: int = 0) -> int:
        """Load ``code,name,lat,lon,contact,capabilities`` rows; returns rows imported."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        count = 0
        seen = set()
        with open(path, newline="", encoding="utf-8") as fh:
            for n, row in enumerate(csv.DictReader(fh), 2):
                try:
                    rec = _seed_row(row)
                except MalformedRow as exc:
                    log.warning("%s:%d skipped: %s", path, n, exc)
                    self.skipped += 1
                    continue
                if rec["code"] in seen:
                    log.warning("%s:%d duplicate facility %s, last wins", path, n, rec["code"])
                seen.add(rec["code"])
                self.emit(ev.SEED_IMPORT, now, **rec)
                count += 1
        return count

    def get(self, code: str) -> Facility:
        try:
            return self.facilities[code]
        except KeyError:
            raise UnknownFacility(code) from None

    def by_contact(self, msisdn: str) -> Optional[Facility]:
        for code in sorted(self.facilities):
            if self.facilities[code].contact_msisdn == msisdn:
                return self.facilities[code]
        return None

    def apply_facility_update(self, u: FacilityUpdate, now: int, code: Optional[str] = None) -> CapacityState:
        f = self.get(code or u.facility_code)
        data = {"facility": f.code, "beds": u.beds_available}
        if u.new_location is not None:
            data["lat"], data["lon"] = u.new_location
        self.emit(ev.FACILITY_UPDATE, now, **data)
        return f.capacity

    def apply_feedback(self, fb: Feedback, rec, now: int) -> CapacityState:
        if rec is None or rec.code != fb.code:
            raise UnknownCode(fb.code)
        if rec.status != "OPEN":
            raise DuplicateFeedback(fb.code)
        kind = ev.FEEDBACK_POSITIVE if fb.polarity is Polarity.POSITIVE else ev.FEEDBACK_NEGATIVE
        self.emit(kind, now, facility=rec.facility_code, ref=rec.code, fallback=rec.fallback)
        return self.get(rec.facility_code).capacity

    def on_recommendation(self, code: str, now: int) -> CapacityState:
        f = self.get(code)
        self.emit(ev.RECOMMENDATION_ISSUED, now, facility=code)
        return f.capacity

    def effective_state(self, f: Facility, now: int) -> CapacityState:
        c = f.capacity
        if c.kind == PRESUMED_FULL and now >= c.since + self.ttl_s:
            self.emit(ev.STATE_EXPIRED, now, facility=f.code)
            return f.capacity
        return c

    def eligible(self, assessment, now: int) -> list[Facility]:
        """Non-full facilities whose capabilities admit the case label, sorted by code."""
        label = getattr(assessment, "label", assessment)
        label = getattr(label, "value", label)
        out = []
        for code in sorted(self.facilities):
            f = self.facilities[code]
            if self.effective_state(f, now).kind != PRESUMED_FULL and f.admits(label):
                out.append(f)
        return out


def _seed_row(row: dict) -> dict:
    code = (row.get("code") or "").strip().upper()
    if not CODE_RE.fullmatch(code):
        raise MalformedRow(f"bad facility code {row.get('code')!r}")
    try:
        pt = GeoPoint(float(row["lat"]), float(row["lon"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise MalformedRow(f"bad coordinates: {exc}") from exc
    contact = (row.get("contact") or "").strip()
    if contact and not MSISDN_RE.fullmatch(contact):
        raise MalformedRow(f"bad contact {contact!r}")
    caps = {c.strip().upper() for c in (row.get("capabilities") or "").split(";") if c.strip()}
    if not caps <= CAPABILITIES:
        raise MalformedRow(f"unknown capabilities {sorted(caps - CAPABILITIES)}")
    return {
        "code": code, "name": (row.get("name") or code).strip(), "lat": pt.lat, "lon": pt.lon,
        "contact": contact, "capabilities": sorted(caps or {GENERAL}),
    }
