"""Event records shared by every stateful store.

All mutations go through ``Event`` objects so that folding a log from an
empty state reproduces the live state exactly.
"""

from __future__ import annotations

import calendar
import json
import re
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable

# registry events
SEED_IMPORT = "SEED_IMPORT"
FACILITY_UPDATE = "FACILITY_UPDATE"
FEEDBACK_POSITIVE = "FEEDBACK_POSITIVE"
FEEDBACK_NEGATIVE = "FEEDBACK_NEGATIVE"
RECOMMENDATION_ISSUED = "RECOMMENDATION_ISSUED"
STATE_EXPIRED = "STATE_EXPIRED"
# core events
ASSESSMENT = "ASSESSMENT"
RECOMMENDATION = "RECOMMENDATION"
REPLY = "REPLY"
CASE_RECORD = "CASE_RECORD"
CONFIG_LOADED = "CONFIG_LOADED"
WEIGHTS_TUNED = "WEIGHTS_TUNED"

KINDS = frozenset({
    SEED_IMPORT, FACILITY_UPDATE, FEEDBACK_POSITIVE, FEEDBACK_NEGATIVE,
    RECOMMENDATION_ISSUED, STATE_EXPIRED, ASSESSMENT, RECOMMENDATION, REPLY,
    CASE_RECORD, CONFIG_LOADED, WEIGHTS_TUNED,
})


_ENCODER = json.JSONEncoder(separators=(",", ":"), sort_keys=True)


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    at: int  # unix seconds, UTC
    data: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return _ENCODER.encode(
            {"seq": self.seq, "kind": self.kind, "at": format_ts(self.at), "data": self.data})

    @classmethod
    def from_json(cls, line: str) -> "Event":
        d = json.loads(line)
        if d["kind"] not in KINDS:
            raise ValueError(f"unknown event kind {d['kind']!r}")
        return cls(int(d["seq"]), d["kind"], parse_ts(d["at"]), d.get("data") or {})


Emitter = Callable[..., Event]


class LocalEmitter:
    """Apply-and-remember emitter for stores used outside the core loop."""

    def __init__(self, *stores):
        self.stores = list(stores)
        self.events: list[Event] = []

    def __call__(self, kind: str, at: int, **data) -> Event:
        ev = Event(len(self.events), kind, at, data)
        self.events.append(ev)
        for s in self.stores:
            s.apply(ev)
        return ev


_TS_RE = re.compile(r"(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})", re.ASCII)


def parse_ts(text: str) -> int:
    """Parse ``YYYY-MM-DDTHH:MM:SSZ`` (or ``+00:00``) to unix seconds."""
    if text.endswith("Z"):
        text = text[:-1]
    elif text.endswith("+00:00"):
        text = text[:-6]
    else:
        raise ValueError(f"timestamp not UTC: {text!r}")
    m = _TS_RE.fullmatch(text)
    if m is None:
        raise ValueError(f"bad timestamp: {text!r}")
    # datetime() range-checks the fields
    return calendar.timegm(datetime(*map(int, m.groups())).timetuple())


def format_ts(ts: int) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(ts))
