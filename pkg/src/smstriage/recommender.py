"""Nearest eligible facility selection, reply templates and feedback re-routing."""

from __future__ import annotations

import base64
import hashlib
import logging
import math
import unicodedata
from dataclasses import asdict, dataclass
from typing import Optional

from . import events as ev
from .geo import GeoPoint, LocationEstimate, Source, haversine_km
from .parser import Feedback, Polarity
from .registry import DuplicateFeedback, Facility, Registry, UnknownCode
from .triage import TriageState, apply_feedback_tuning
from .wire import GSM7_SUBSET, MAX_BODY_OUT, OutboundMessage

log = logging.getLogger(__name__)

OPEN, CONFIRMED, REJECTED, REROUTED = "OPEN", "CONFIRMED", "REJECTED", "REROUTED"

NO_LOCATION_TEXT = "SEND VILLAGE NAME TO GET NEAREST CLINIC"
NO_FACILITY_TEXT = "NO CLINIC FOUND NEAR YOU. CALL YOUR HEALTH OFFICE"
HELP_TEXT = "SEND SYMPTOMS E.G. FEVER VOMITING VILLAGE NAME"
UNKNOWN_REF_TEXT = "UNKNOWN REF"
CHAIN_END_TEXT = "NO MORE CLINICS TO SUGGEST. CALL YOUR HEALTH OFFICE"


class NoLocation(LookupError):
    pass


class NoFacility(LookupError):
    pass


class EpisodeClosed(LookupError):
    """Reroute limit for a patient episode reached."""


@dataclass
class Recommendation:
    code: str
    patient_msisdn: str
    facility_code: str
    distance_km: float
    label: str
    points: int
    issued_at: int
    lat: float
    lon: float
    loc_source: str
    loc_radius_km: float
    status: str = OPEN
    fallback: bool = False
    episode: str = ""
    chain: int = 0
    rerouted_from: Optional[str] = None

    @property
    def location(self) -> LocationEstimate:
        return LocationEstimate(GeoPoint(self.lat, self.lon), self.loc_radius_km, Source(self.loc_source))


def mint_code(seed: int, counter: int) -> str:
    digest = hashlib.blake2b(f"{seed}:{counter}".encode(), digest_size=5).digest()
    return base64.b32encode(digest).decode("ascii")[:6]


class RecommendationBook:
    """Issued recommendations keyed by reference code, plus the code counter."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.counter = 0
        self.recs: dict[str, Recommendation] = {}
        self.episodes: dict[str, list[str]] = {}
        self.emit = ev.LocalEmitter(self)

    def apply(self, e: ev.Event) -> None:
        d = e.data
        if e.kind == ev.RECOMMENDATION:
            fields = {k: v for k, v in d.items() if k in Recommendation.__dataclass_fields__}
            rec = self.recs[d["code"]] = Recommendation(**fields)
            self.episodes.setdefault(rec.episode, []).append(rec.code)
            self.counter = d["counter"]
            prev = self.recs.get(d.get("rerouted_from"))
            if prev is not None:
                prev.status = REROUTED
        elif e.kind == ev.FEEDBACK_POSITIVE and d.get("ref") in self.recs:
            self.recs[d["ref"]].status = CONFIRMED
        elif e.kind == ev.FEEDBACK_NEGATIVE and d.get("ref") in self.recs:
            self.recs[d["ref"]].status = REJECTED

    def state(self) -> dict:
        return {"counter": self.counter,
                "recs": {c: asdict(r) for c, r in sorted(self.recs.items())}}

    def next_code(self) -> tuple[str, int]:
        c = self.counter
        while True:
            code = mint_code(self.seed, c)
            c += 1
            if code not in self.recs:
                return code, c

    def get(self, code: str) -> Optional[Recommendation]:
        return self.recs.get(code)

    def rejected_in_episode(self, episode: str) -> set[str]:
        recs = (self.recs[c] for c in self.episodes.get(episode, ()))
        return {r.facility_code for r in recs if r.status in (REJECTED, REROUTED)}


# distances this close count as a tie (absorbs formula rounding on symmetric layouts)
TIE_KM = 1e-9


def nearest(point: GeoPoint, facilities) -> tuple[Facility, float]:
    """Closest facility and its distance; ties go to the smaller code."""
    scored = [(haversine_km(point, f.point), f.code, f) for f in facilities]
    dmin = min(s[0] for s in scored)
    d, _, f = min((s for s in scored if s[0] <= dmin + TIE_KM), key=lambda s: s[1])
    return f, d


def recommend(assessment, loc: LocationEstimate, registry: Registry, book: RecommendationBook,
              now: int, patient_msisdn: str, *, exclude=frozenset(), episode: Optional[str] = None,
              chain: int = 0, rerouted_from: Optional[str] = None, **context) -> Recommendation:
    """Route to the nearest eligible facility; ties go to the smaller facility code.

    With nothing eligible, the nearest admitting (else any) facility is named as
    a fallback: a code is still minted but no bed is decremented.
    """
    if loc.point is None:
        raise NoLocation(patient_msisdn)
    label = getattr(assessment.label, "value", assessment.label)
    cands = [f for f in registry.eligible(label, now) if f.code not in exclude]
    fallback = not cands
    if fallback:
        rest = [f for c, f in sorted(registry.facilities.items()) if c not in exclude]
        cands = [f for f in rest if f.admits(label)] or rest
        if not cands:
            raise NoFacility(patient_msisdn)
    best, dist = nearest(loc.point, cands)
    if not fallback:
        registry.on_recommendation(best.code, now)
    code, counter = book.next_code()
    book.emit(
        ev.RECOMMENDATION, now, code=code, counter=counter, patient_msisdn=patient_msisdn,
        facility_code=best.code, distance_km=dist, label=label, points=assessment.points,
        issued_at=now, lat=loc.point.lat, lon=loc.point.lon, loc_source=loc.source.value,
        loc_radius_km=loc.radius_km, status=OPEN, fallback=fallback, episode=episode or code,
        chain=chain, rerouted_from=rerouted_from, **context,
    )
    return book.recs[code]


# ---------------------------------------------------------------- templates

def gsm_text(text: str) -> str:
    """Uppercase, accent-folded, restricted to the outbound character subset."""
    folded = unicodedata.normalize("NFKD", text.upper())
    chars = [c if c in GSM7_SUBSET else " " for c in folded if not unicodedata.combining(c)]
    return " ".join("".join(chars).split())


def whole_km(d: float) -> int:
    return int(math.floor(d + 0.5))


def _fit(template: str, name: str) -> str:
    room = MAX_BODY_OUT - len(template.format(name=""))
    return template.format(name=name[:max(0, room)].rstrip())


def compose_patient_reply(outcome, msisdn: str, facility_name: str = "",
                          in_reply_to: Optional[int] = None) -> OutboundMessage:
    """Reply for a Recommendation, or for a NoLocation / NoFacility outcome."""
    if isinstance(outcome, NoLocation) or outcome is NoLocation:
        return OutboundMessage(msisdn, NO_LOCATION_TEXT, in_reply_to)
    if isinstance(outcome, NoFacility) or outcome is NoFacility:
        return OutboundMessage(msisdn, NO_FACILITY_TEXT, in_reply_to)
    rec = outcome
    name = gsm_text(facility_name) or rec.facility_code
    tail = f" {whole_km(rec.distance_km)}KM. REF {rec.code}. REPLY YES {rec.code} OR NO {rec.code}"
    if rec.fallback:
        head = f"EBOLA RISK {rec.label}. CALL FIRST, MAY BE FULL: "
    else:
        head = f"EBOLA RISK {rec.label}. GO TO "
    body = _fit(head + "{name}" + tail, name)
    return OutboundMessage(msisdn, body, in_reply_to)


def compose_facility_alert(rec: Recommendation, contact_msisdn: str) -> Optional[OutboundMessage]:
    if rec.label not in ("LIKELY", "POSSIBLE"):
        return None
    if not contact_msisdn:
        log.info("facility %s has no contact; alert %s skipped", rec.facility_code, rec.code)
        return None
    body = f"ALERT {rec.code}. {rec.label} CASE EN ROUTE. {whole_km(rec.distance_km)}KM AWAY."
    return OutboundMessage(contact_msisdn, body, None)


def handle_feedback(fb: Feedback, registry: Registry, book: RecommendationBook, triage: TriageState,
                    now: int, sender: Optional[str] = None, chain_max: int = 3,
                    **context) -> Optional[Recommendation]:
    """Record feedback; on NEGATIVE, re-route within the episode.

    Raises UnknownCode, DuplicateFeedback, EpisodeClosed or NoFacility.
    """
    rec = book.get(fb.code)
    if rec is None or (sender is not None and sender != rec.patient_msisdn):
        raise UnknownCode(fb.code)
    if rec.status != OPEN:
        raise DuplicateFeedback(fb.code)
    registry.apply_feedback(fb, rec, now)
    if fb.polarity is Polarity.POSITIVE:
        return None
    tuned = apply_feedback_tuning(fb, rec, triage.weights)
    if tuned != triage.weights:
        triage.emit(ev.WEIGHTS_TUNED, now, likely_threshold=tuned.likely_threshold, ref=fb.code)
    if rec.chain >= chain_max:
        raise EpisodeClosed(rec.episode)
    return recommend(
        rec, rec.location, registry, book, now, rec.patient_msisdn,
        exclude=book.rejected_in_episode(rec.episode), episode=rec.episode,
        chain=rec.chain + 1, rerouted_from=rec.code, **context,
    )


__all__ = [
    "Recommendation", "RecommendationBook", "recommend", "compose_patient_reply",
    "compose_facility_alert", "handle_feedback", "mint_code", "gsm_text", "nearest",
    "NoLocation", "NoFacility", "EpisodeClosed", "UnknownCode", "DuplicateFeedback",
]
