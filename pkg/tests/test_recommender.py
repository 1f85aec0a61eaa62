import pytest
from hypothesis import given, strategies as st

from smstriage import events as ev
from smstriage.geo import GeoPoint, LocationEstimate, NO_LOCATION, Source
from smstriage.oracles import oracle_nearest
from smstriage.parser import FacilityUpdate, Feedback, Polarity
from smstriage.recommender import (
    CONFIRMED, NO_LOCATION_TEXT, REJECTED, REROUTED, DuplicateFeedback, EpisodeClosed, NoFacility,
    NoLocation, Recommendation, RecommendationBook, UnknownCode, compose_facility_alert,
    compose_patient_reply, handle_feedback, mint_code, recommend,
)
from smstriage.registry import GENERAL, ISOLATION, PRESUMED_FULL, REPORTED, Registry
from smstriage.triage import CaseAssessment, Label, TriageState
from smstriage.parser import SymptomReport
from smstriage.wire import check_reply

T0 = 1_412_150_400
KM_LAT = 1 / 111.19508
HERE = LocationEstimate(GeoPoint(8.0, -11.0), 5.0, Source.TOWER)
PATIENT = "+22462000001"


def _world(facs, ttl_hours=24.0):
    """``facs``: (code, lat, lon, caps, contact)."""
    reg, book, tri = Registry(ttl_hours), RecommendationBook(seed=7), TriageState()
    emit = ev.LocalEmitter(reg, book, tri)
    reg.emit = book.emit = tri.emit = emit
    for code, lat, lon, caps, contact in facs:
        emit(ev.SEED_IMPORT, T0, code=code, name=f"{code} clinic", lat=lat, lon=lon, contact=contact,
             capabilities=sorted(caps))
    return reg, book, tri


def _assessment(label="LIKELY", points=6):
    return CaseAssessment(SymptomReport(), points, points / 10, Label(label), False, T0)


def _north(code, km, caps=(ISOLATION,), contact="+224620100001"):
    return code, 8.0 + km * KM_LAT, -11.0, set(caps), contact


def test_single_facility():
    reg, book, _ = _world([_north("A", 40)])
    rec = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    assert rec.facility_code == "A" and not rec.fallback and rec.status == "OPEN"


def test_nearest_of_three():
    reg, book, _ = _world([_north("A", 30), _north("B", 5), _north("C", 12)])
    rec = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    assert rec.facility_code == "B" and rec.distance_km == pytest.approx(5, abs=1e-6)


def test_tie_smaller_code():
    # mirror images east and west of the patient
    reg, book, _ = _world([("Z", 8.0, -10.9, {ISOLATION}, ""), ("M", 8.0, -11.1, {ISOLATION}, "")])
    assert recommend(_assessment(), HERE, reg, book, T0, PATIENT).facility_code == "M"
    reg, book, _ = _world([("Q", 8.1, -11.0, {ISOLATION}, ""), ("P", 8.1, -11.0, {ISOLATION}, "")])
    assert recommend(_assessment(), HERE, reg, book, T0, PATIENT).facility_code == "P"


def test_capability_filter():
    reg, book, _ = _world([_north("GEN", 1, caps=(GENERAL,)), _north("ISO", 50)])
    assert recommend(_assessment("POSSIBLE"), HERE, reg, book, T0, PATIENT).facility_code == "ISO"
    assert recommend(_assessment("UNLIKELY", 0), HERE, reg, book, T0, PATIENT).facility_code == "GEN"


def test_no_location():
    reg, book, _ = _world([_north("A", 3)])
    with pytest.raises(NoLocation):
        recommend(_assessment(), NO_LOCATION, reg, book, T0, PATIENT)


def test_decrements_reported():
    reg, book, _ = _world([_north("A", 3)])
    reg.apply_facility_update(FacilityUpdate("A", 2), T0)
    recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    assert reg.get("A").capacity.beds == 1
    recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    assert reg.get("A").capacity.kind == PRESUMED_FULL


def test_fallback_when_all_full():
    reg, book, _ = _world([_north("A", 3), _north("B", 9), _north("G", 1, caps=(GENERAL,))])
    reg.apply_facility_update(FacilityUpdate("A", 0), T0)
    reg.apply_facility_update(FacilityUpdate("B", 1), T0)
    recommend(_assessment(), HERE, reg, book, T0, PATIENT)  # consumes B's last bed
    n_events = len(reg.emit.events)
    rec = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    # nearest admitting facility, no bed decrement, code still minted
    assert rec.fallback and rec.facility_code == "A"
    assert not any(e.kind == ev.RECOMMENDATION_ISSUED for e in reg.emit.events[n_events:])
    assert rec.code in book.recs
    reply = compose_patient_reply(rec, PATIENT, "A clinic")
    assert "CALL FIRST" in reply.body and len(reply.body) <= 160


def test_no_facility_at_all():
    reg, book, _ = _world([])
    with pytest.raises(NoFacility):
        recommend(_assessment(), HERE, reg, book, T0, PATIENT)


def _rec(**kw):
    base = dict(code="A3F2K9", patient_msisdn=PATIENT, facility_code="ETU01", distance_km=7.3, label="LIKELY",
                points=5, issued_at=T0, lat=8.0, lon=-11.0, loc_source="TOWER", loc_radius_km=5.0)
    base.update(kw)
    return Recommendation(**base)


def test_patient_reply_template():
    expected = "EBOLA RISK LIKELY. GO TO KINDIA ETU 7KM. REF A3F2K9. REPLY YES A3F2K9 OR NO A3F2K9"
    assert len(expected) == 82
    msg = compose_patient_reply(_rec(), PATIENT, "Kindia ETU", 3)
    assert msg.body == expected and msg.in_reply_to == 3
    check_reply(msg)


def test_patient_reply_fixed_texts():
    assert compose_patient_reply(NoLocation(PATIENT), PATIENT).body == NO_LOCATION_TEXT
    assert compose_patient_reply(NoLocation(PATIENT), PATIENT).body == "SEND VILLAGE NAME TO GET NEAREST CLINIC"
    check_reply(compose_patient_reply(NoFacility(PATIENT), PATIENT))


def test_long_name_truncated():
    msg = compose_patient_reply(_rec(), PATIENT, "Very Long Facility Name " * 9)
    assert len(msg.body) <= 160
    assert msg.body.endswith("REPLY YES A3F2K9 OR NO A3F2K9")
    check_reply(msg)


@given(st.text(max_size=300), st.floats(0, 20000), st.sampled_from(["LIKELY", "POSSIBLE", "UNLIKELY"]),
       st.booleans())
def test_reply_always_valid(name, dist, label, fallback):
    msg = compose_patient_reply(_rec(distance_km=dist, label=label, fallback=fallback), PATIENT, name)
    check_reply(msg)


def test_facility_alert():
    alert = compose_facility_alert(_rec(distance_km=7.0), "+224620100001")
    assert alert.body == "ALERT A3F2K9. LIKELY CASE EN ROUTE. 7KM AWAY."
    assert alert.in_reply_to is None and alert.msisdn == "+224620100001"
    assert compose_facility_alert(_rec(label="UNLIKELY"), "+224620100001") is None
    assert compose_facility_alert(_rec(), "") is None


def test_whole_km_rounding():
    assert "8KM" in compose_patient_reply(_rec(distance_km=7.5), PATIENT, "X").body
    assert "7KM" in compose_patient_reply(_rec(distance_km=7.49), PATIENT, "X").body


def test_mint_code():
    codes = [mint_code(3, i) for i in range(500)]
    assert codes == [mint_code(3, i) for i in range(500)]
    assert all(len(c) == 6 and set(c) <= set("ABCDEFGHIJKLMNOPQRSTUVWXYZ234567") for c in codes)
    assert mint_code(3, 0) != mint_code(4, 0)


def test_codes_unique_even_on_collision():
    book = RecommendationBook(seed=1)
    taken = mint_code(1, 0)
    book.recs[taken] = None
    code, counter = book.next_code()
    assert code != taken and counter == 2


def test_feedback_reroute():
    reg, book, tri = _world([_north("A", 3), _north("B", 9)])
    first = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    new = handle_feedback(Feedback(first.code, Polarity.NEGATIVE), reg, book, tri, T0 + 60)
    assert new.facility_code == "B" and new.episode == first.code and new.chain == 1
    assert book.get(first.code).status == REROUTED
    assert reg.get("A").capacity.kind == PRESUMED_FULL


def test_feedback_no_alternative():
    reg, book, tri = _world([_north("A", 3)])
    first = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    with pytest.raises(NoFacility):
        handle_feedback(Feedback(first.code, Polarity.NEGATIVE), reg, book, tri, T0 + 60)
    assert book.get(first.code).status == REJECTED


def test_feedback_yes_and_duplicates():
    reg, book, tri = _world([_north("A", 3)])
    reg.apply_facility_update(FacilityUpdate("A", 5), T0)
    first = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    assert reg.get("A").capacity.kind == REPORTED
    assert handle_feedback(Feedback(first.code, Polarity.POSITIVE), reg, book, tri, T0 + 1) is None
    assert book.get(first.code).status == CONFIRMED
    assert reg.get("A").capacity.kind == "AVAILABLE"
    with pytest.raises(DuplicateFeedback):
        handle_feedback(Feedback(first.code, Polarity.POSITIVE), reg, book, tri, T0 + 2)
    with pytest.raises(UnknownCode):
        handle_feedback(Feedback("ZZZZZZ", Polarity.POSITIVE), reg, book, tri, T0 + 2)
    with pytest.raises(UnknownCode):
        handle_feedback(Feedback(first.code, Polarity.POSITIVE), reg, book, tri, T0 + 2, sender="+22400000000")


@given(st.integers(1, 8), st.integers(0, 4))
def test_reroute_chain_terminates(n_facilities, chain_max):
    reg, book, tri = _world([_north(f"F{i}", 2 + 3 * i) for i in range(n_facilities)])
    rec = recommend(_assessment(), HERE, reg, book, T0, PATIENT)
    visited = [rec.facility_code]
    steps = 0
    while True:
        try:
            rec = handle_feedback(Feedback(rec.code, Polarity.NEGATIVE), reg, book, tri, T0 + steps + 1,
                                  chain_max=chain_max)
        except (EpisodeClosed, NoFacility):
            break
        steps += 1
        assert rec.facility_code not in visited
        visited.append(rec.facility_code)
    assert steps <= min(chain_max, n_facilities - 1)


coords = st.integers(-200, 200).map(lambda v: v / 100)
facility_sets = st.lists(
    st.tuples(coords, coords, st.sampled_from([{ISOLATION}, {GENERAL}, {ISOLATION, GENERAL}]),
              st.sampled_from([None, 0, 1, 3])),
    min_size=1, max_size=12,
)


@given(facility_sets, coords, coords, st.sampled_from(["LIKELY", "POSSIBLE", "UNLIKELY"]), st.data())
def test_optimality(facs, dlat, dlon, label, data):
    # duplicate positions create exact ties
    if len(facs) > 1 and data.draw(st.booleans()):
        facs = facs + [facs[0]]
    reg, book, _ = _world([(f"F{i:02d}", 8 + la, -11 + lo, caps, "") for i, (la, lo, caps, _) in enumerate(facs)])
    for i, (*_, beds) in enumerate(facs):
        if beds is not None:
            reg.apply_facility_update(FacilityUpdate(f"F{i:02d}", beds), T0)
    loc = LocationEstimate(GeoPoint(8 + dlat, -11 + dlon), 5.0, Source.TOWER)
    eligible = [(f.code, f.point.lat, f.point.lon) for f in reg.eligible(label, T0)]
    expected = oracle_nearest(loc.point.lat, loc.point.lon, eligible)
    rec = recommend(_assessment(label), loc, reg, book, T0, PATIENT)
    if expected is None:
        assert rec.fallback
    else:
        assert rec.facility_code == expected and not rec.fallback
