from types import SimpleNamespace

import pytest
from hypothesis import given, strategies as st

from smstriage import events as ev
from smstriage.geo import GeoPoint
from smstriage.oracles import oracle_eligible
from smstriage.parser import FacilityUpdate, Feedback, Polarity
from smstriage.registry import (
    AVAILABLE, GENERAL, ISOLATION, PRESUMED_FULL, REPORTED, CapacityState, DuplicateFeedback, Facility,
    Registry, UnknownCode, UnknownFacility,
)
from smstriage.service import Config

T0 = 1_412_150_400
TTL = 24 * 3600
SEED = ("code,name,lat,lon,contact,capabilities\n"
        "ETU01,Kindia ETU,10.05,-12.86,+224620100001,ISOLATION;GENERAL\n"
        "HC01,Kindia HC,10.06,-12.85,+224620100011,GENERAL\n")


@pytest.fixture
def reg(tmp_path):
    p = tmp_path / "seed.csv"
    p.write_text(SEED)
    r = Registry()
    r.import_seed(p, T0)
    return r


def _rec(code="ABCDEF", facility="ETU01", status="OPEN", fallback=False):
    return SimpleNamespace(code=code, facility_code=facility, status=status, fallback=fallback)


def test_import_sample():
    r = Registry()
    assert r.import_seed(Config().data_path("facilities")) == 10
    assert len(r.facilities) == 10
    assert all(f.capacity.kind == AVAILABLE for f in r.facilities.values())
    assert [e.kind for e in r.emit.events] == [ev.SEED_IMPORT] * 10


def test_import_duplicates_and_bad_rows(tmp_path, caplog):
    p = tmp_path / "seed.csv"
    p.write_text(SEED + "ETU01,Renamed,10,-12,+224620100001,ISOLATION\nBAD1,Bad,95,0,+2246201,GENERAL\n"
                 "BAD2,Bad,1,1,+2246201,SURGERY\n")
    r = Registry()
    assert r.import_seed(p) == 3
    assert r.facilities["ETU01"].name == "Renamed"
    assert r.skipped == 2
    assert "last wins" in caplog.text
    with pytest.raises(FileNotFoundError):
        r.import_seed(tmp_path / "missing.csv")


def test_facility_update_examples(reg):
    assert reg.apply_facility_update(FacilityUpdate("ETU01", 12), T0) == CapacityState(REPORTED, T0, 12)
    assert reg.apply_facility_update(FacilityUpdate("ETU01", 0), T0 + 1) == CapacityState(PRESUMED_FULL, T0 + 1)
    with pytest.raises(UnknownFacility):
        reg.apply_facility_update(FacilityUpdate("ETU99", 3), T0)


def test_facility_relocation(reg):
    reg.apply_facility_update(FacilityUpdate("ETU01", None, (9.0, -11.0)), T0)
    f = reg.get("ETU01")
    assert f.point == GeoPoint(9.0, -11.0) and f.capacity.kind == AVAILABLE


def test_feedback_examples(reg):
    reg.apply_facility_update(FacilityUpdate("ETU01", 3), T0)
    yes = Feedback("ABCDEF", Polarity.POSITIVE)
    assert reg.apply_feedback(yes, _rec(), T0 + 5).kind == AVAILABLE
    no = Feedback("BCDEFG", Polarity.NEGATIVE)
    assert reg.apply_feedback(no, _rec("BCDEFG"), T0 + 9) == CapacityState(PRESUMED_FULL, T0 + 9)
    assert reg.effective_state(reg.get("ETU01"), T0 + 9 + TTL - 1).kind == PRESUMED_FULL
    assert reg.effective_state(reg.get("ETU01"), T0 + 9 + TTL).kind == AVAILABLE
    with pytest.raises(DuplicateFeedback):
        reg.apply_feedback(yes, _rec(status="CONFIRMED"), T0)
    with pytest.raises(UnknownCode):
        reg.apply_feedback(yes, None, T0)
    with pytest.raises(UnknownCode):
        reg.apply_feedback(yes, _rec("ZZZZZZ"), T0)


def test_fallback_feedback_leaves_capacity(reg):
    reg.apply_facility_update(FacilityUpdate("ETU01", 0), T0)
    reg.apply_feedback(Feedback("ABCDEF", Polarity.POSITIVE), _rec(fallback=True), T0 + 1)
    assert reg.get("ETU01").capacity.kind == PRESUMED_FULL


def test_on_recommendation_examples(reg):
    reg.apply_facility_update(FacilityUpdate("ETU01", 2), T0)
    assert reg.on_recommendation("ETU01", T0 + 1) == CapacityState(REPORTED, T0, 1)
    assert reg.on_recommendation("ETU01", T0 + 2) == CapacityState(PRESUMED_FULL, T0 + 2)
    assert reg.on_recommendation("HC01", T0 + 2) == CapacityState(AVAILABLE)


def test_effective_state_examples(reg):
    reg.apply_facility_update(FacilityUpdate("ETU01", 0), T0)
    f = reg.get("ETU01")
    assert reg.effective_state(f, T0 + TTL - 1).kind == PRESUMED_FULL
    assert reg.effective_state(f, T0 + TTL + 1).kind == AVAILABLE
    assert reg.emit.events[-1].kind == ev.STATE_EXPIRED
    reg.apply_facility_update(FacilityUpdate("ETU01", 4), T0)
    assert reg.effective_state(f, T0 + 100 * TTL).kind == REPORTED


def test_eligible_examples(reg):
    for code in reg.facilities:
        reg.apply_facility_update(FacilityUpdate(code, 0), T0)
    assert reg.eligible("UNLIKELY", T0) == []
    reg.apply_facility_update(FacilityUpdate("HC01", 5), T0)
    assert reg.eligible("LIKELY", T0) == []
    assert [f.code for f in reg.eligible("UNLIKELY", T0)] == ["HC01"]
    assert reg.eligible("POSSIBLE", T0) == []


def test_capacity_state_nonnegative():
    with pytest.raises(ValueError):
        CapacityState(REPORTED, T0, -1)


codes = [f"F{i:02d}" for i in range(8)]
op = st.one_of(
    st.tuples(st.just("update"), st.sampled_from(codes), st.one_of(st.none(), st.integers(0, 4)),
              st.one_of(st.none(), st.tuples(st.floats(-10, 10), st.floats(-10, 10)))),
    st.tuples(st.just("rec"), st.sampled_from(codes)),
    st.tuples(st.just("feedback"), st.sampled_from(codes), st.booleans(), st.booleans()),
    st.tuples(st.just("query"), st.sampled_from(["LIKELY", "POSSIBLE", "UNLIKELY"])),
)


def _fresh(caps):
    r = Registry()
    for code, cap in zip(codes, caps):
        r.emit(ev.SEED_IMPORT, T0, code=code, name=code, lat=0.0, lon=0.0, contact="",
               capabilities=sorted(cap))
    return r


caps_strategy = st.lists(st.sampled_from([{ISOLATION}, {GENERAL}, {ISOLATION, GENERAL}]),
                         min_size=len(codes), max_size=len(codes))


@given(caps_strategy, st.lists(st.tuples(op, st.integers(0, 3 * TTL)), max_size=40))
def test_fold_equals_live(caps, script):
    live = _fresh(caps)
    now = T0
    for n, ((kind, *args), dt) in enumerate(script):
        now += dt
        if kind == "update":
            code, beds, loc = args
            if beds is None and loc is None:
                continue
            live.apply_facility_update(FacilityUpdate(code, beds, loc), now)
        elif kind == "rec":
            live.on_recommendation(args[0], now)
        elif kind == "feedback":
            code, positive, fallback = args
            fb = Feedback(f"R{n:05d}", Polarity.POSITIVE if positive else Polarity.NEGATIVE)
            live.apply_feedback(fb, _rec(fb.code, code, fallback=fallback), now)
        else:
            live.eligible(args[0], now)
    folded = Registry()
    for e in live.emit.events:
        folded.apply(e)
    assert folded.state() == live.state()


@given(caps_strategy, st.lists(st.tuples(st.sampled_from(codes), st.integers(0, 4), st.integers(-TTL, TTL)),
                               max_size=10),
       st.sampled_from(["LIKELY", "POSSIBLE", "UNLIKELY"]), st.integers(-2 * TTL, 2 * TTL))
def test_eligible_matches_oracle(caps, updates, label, offset):
    r = _fresh(caps)
    for code, beds, dt in updates:
        r.apply_facility_update(FacilityUpdate(code, beds), T0 + TTL + dt)
    now = T0 + TTL + offset
    snapshot = [(c, 0.0, 0.0, sorted(f.capabilities), (f.capacity.kind, f.capacity.since, f.capacity.beds))
                for c, f in sorted(r.facilities.items())]
    expected = [c for c, *_ in oracle_eligible(snapshot, label, now, TTL)]
    assert [f.code for f in r.eligible(label, now)] == expected


@given(st.integers(0, 10 * TTL), st.integers(1, 48))
def test_ttl_monotone(start, ttl_hours):
    r = Registry(ttl_hours)
    r.emit(ev.SEED_IMPORT, 0, code="X", name="X", lat=0.0, lon=0.0, contact="", capabilities=[ISOLATION])
    r.apply_facility_update(FacilityUpdate("X", 0), start)
    ttl = ttl_hours * 3600
    for t in (start, start + 1, start + ttl // 2, start + ttl - 1):
        assert r.eligible("LIKELY", t) == []
    assert [f.code for f in r.eligible("LIKELY", start + ttl)] == ["X"]


def test_facility_admits():
    f = Facility("X", "X", GeoPoint(0, 0), "", frozenset({GENERAL}))
    assert not f.admits("LIKELY") and not f.admits("POSSIBLE") and f.admits("UNLIKELY")
