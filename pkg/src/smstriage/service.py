"""Configuration, the core event loop, event-log persistence and snapshots."""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional

from . import events as ev
from .geo import GeoPoint, Gazetteer, GridSpec, TowerTable, load_gazetteer, load_towers, resolve_location
from .parser import (
    BadCode, BadUpdate, Intent, Lexicon, NoSymptoms, parse_message,
)
from .recommender import (
    CHAIN_END_TEXT, HELP_TEXT, NO_FACILITY_TEXT, UNKNOWN_REF_TEXT, EpisodeClosed, NoFacility,
    NoLocation, Recommendation, RecommendationBook, compose_facility_alert, compose_patient_reply,
    gsm_text, handle_feedback, recommend,
)
from .registry import DuplicateFeedback, Registry, UnknownCode
from .risk import CaseRecord, MovementOrbit, RiskParams, RiskStore
from .triage import HistoryEntry, Label, PriorParams, RubricWeights, TriageState, assess
from .wire import InboundFrame, OutboundMessage

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str = "unknown key"):
        super().__init__(f"{key}: {msg}")
        self.key = key


class SnapshotVersionMismatch(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:7070"


@dataclass
class TriageConfig:
    fever_pts: int = 2
    common_symptom_pts: int = 1
    hemorrhage_pts: int = 2
    epi_pts: int = 2
    spatial_prior_pts: int = 1
    likely_threshold: int = 5
    possible_threshold: int = 3
    prior_radius_km: float = 20.0
    prior_min_cases: int = 3
    incubation_days: int = 21
    tune_step: int = 0

    def weights(self) -> RubricWeights:
        return RubricWeights(
            self.fever_pts, self.common_symptom_pts, self.hemorrhage_pts, self.epi_pts,
            self.spatial_prior_pts, self.likely_threshold, self.possible_threshold, self.tune_step,
        )

    def prior(self) -> PriorParams:
        return PriorParams(self.prior_radius_km, self.prior_min_cases, self.incubation_days)


@dataclass
class RegistryConfig:
    ttl_hours: float = 24.0
    feedback_chain_max: int = 3
    code_seed: int = 0


@dataclass
class GeoConfig:
    tower_radius_km: float = 5.0
    place_radius_km: float = 10.0


@dataclass
class RiskConfig:
    sigma_km: float = 10.0
    tau_days: float = 7.0
    cell_deg: float = 0.1
    origin_lat: float = 4.0      # covers Guinea, Sierra Leone and Liberia
    origin_lon: float = -15.2
    n_rows: int = 88
    n_cols: int = 76
    default_speed_kmpd: float = 5.0
    orbit_size: int = 10
    hash_salt: str = "smstriage"

    def grid(self) -> GridSpec:
        return GridSpec(GeoPoint(self.origin_lat, self.origin_lon), self.cell_deg, self.n_rows, self.n_cols)


@dataclass
class DataConfig:
    # "" selects the shipped sample file, "none" an empty table
    lexicon: str = ""
    towers: str = ""
    gazetteer: str = ""
    facilities: str = ""
    event_log: str = "events.jsonl"


@dataclass
class Config:
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    triage: TriageConfig = field(default_factory=TriageConfig)
    registry: RegistryConfig = field(default_factory=RegistryConfig)
    geo: GeoConfig = field(default_factory=GeoConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    data: DataConfig = field(default_factory=DataConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def risk_params(self) -> RiskParams:
        r = self.risk
        return RiskParams(r.sigma_km, r.tau_days, self.triage.incubation_days, r.default_speed_kmpd, r.orbit_size)

    def data_path(self, name: str) -> Optional[Path]:
        """Resolved path for a data key; None means an empty table."""
        value = getattr(self.data, name)
        if value.lower() == "none":
            return None
        if not value:
            return Path(str(resources.files("smstriage").joinpath(f"data/{_SAMPLES[name]}")))
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


_SAMPLES = {"lexicon": "lexicon.txt", "towers": "towers.csv", "gazetteer": "gazetteer.csv",
            "facilities": "facilities.csv", "event_log": "events.jsonl"}


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def config_from_mapping(sections: dict, base_dir: Path = Path(".")) -> Config:
    cfg = Config(base_dir=base_dir)
    for sname, values in sections.items():
        sect = getattr(cfg, sname, None) if sname != "base_dir" else None
        if sect is None or not hasattr(sect, "__dataclass_fields__"):
            raise ConfigError(sname, "unknown section")
        known = {f.name: f for f in fields(sect)}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"{sname}.{key}")
            default = getattr(sect, key)
            value = _coerce(f"{sname}.{key}", raw, default) if isinstance(raw, str) else raw
            setattr(sect, key, value)
    try:
        cfg.triage.weights()
        cfg.risk.grid()
    except ValueError as exc:
        raise ConfigError("triage/risk", str(exc)) from None
    return cfg


def load_config(path=None) -> Config:
    """Read an INI-style config; missing keys take their defaults."""
    if path is None:
        return Config()
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(path), f"unreadable: {exc}") from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return config_from_mapping(sections, path.parent)


# ---------------------------------------------------------------- event log

class EventLog:
    """Append-only JSON-lines file; buffered lines are flushed before replies go out."""

    def __init__(self, path, truncate: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "w" if truncate else "a", encoding="utf-8", newline="\n")

    def write(self, e: ev.Event) -> None:
        self._fh.write(e.to_json() + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path) -> Iterator[ev.Event]:
        last = -1
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    e = ev.Event.from_json(line)
                except (ValueError, KeyError) as exc:
                    # a torn final line after a crash is tolerated
                    log.warning("%s:%d unreadable event: %s", path, n, exc)
                    continue
                if e.seq <= last:
                    raise ValueError(f"{path}:{n}: event seq {e.seq} not increasing")
                last = e.seq
                yield e


# ---------------------------------------------------------------- core

class Core:
    """Owns all mutable state; every mutation is an event written ahead of replies."""

    def __init__(self, config: Optional[Config] = None, log_path=None, *, fresh: bool = True,
                 truncate: bool = False):
        self.config = config or Config()
        c = self.config
        lex = c.data_path("lexicon")
        self.lexicon = Lexicon.load(lex) if lex else Lexicon({})
        towers = c.data_path("towers")
        self.towers = load_towers(towers) if towers else TowerTable()
        gaz = c.data_path("gazetteer")
        self.gazetteer = load_gazetteer(gaz) if gaz else Gazetteer()

        self.triage = TriageState(c.triage.weights(), c.triage.prior())
        self.registry = Registry(c.registry.ttl_hours)
        self.book = RecommendationBook(c.registry.code_seed)
        self.risk = RiskStore(c.risk_params(), c.risk.hash_salt)
        self.stores = (self.triage, self.registry, self.book, self.risk)
        for s in self.stores:
            s.emit = self.emit

        self.seq = 0
        self.clock = 0
        self.log: Optional[EventLog] = None
        self._log_path = Path(log_path) if log_path else None
        if fresh:
            if self._log_path:
                self.log = EventLog(self._log_path, truncate=truncate)
            self.emit(ev.CONFIG_LOADED, 0, weights=asdict(self.triage.weights), config=c.to_dict())
            seed = c.data_path("facilities")
            if seed:
                self.registry.import_seed(seed)
            self._flush()

    # ------------------------------------------------------------ events

    def emit(self, kind: str, at: int, **data) -> ev.Event:
        e = ev.Event(self.seq, kind, at, data)
        self.seq += 1
        if self.log is not None:
            self.log.write(e)
        self._apply(e)
        return e

    def _apply(self, e: ev.Event) -> None:
        if e.at > self.clock:
            self.clock = e.at
        for s in self.stores:
            s.apply(e)

    def _flush(self) -> None:
        if self.log is not None:
            self.log.flush()

    def close(self) -> None:
        if self.log is not None:
            self.log.close()
            self.log = None

    @classmethod
    def restore(cls, config: Optional[Config], log_path, append: bool = True) -> "Core":
        """Rebuild state by folding the event log, then (optionally) keep appending to it."""
        core = cls(config, fresh=False)
        for e in EventLog.read(log_path):
            core._fold(e)
        if append:
            core.log = EventLog(log_path)
        return core

    def _fold(self, e: ev.Event) -> None:
        self.seq = e.seq + 1
        self._apply(e)

    # ------------------------------------------------------------ state

    def state(self) -> dict:
        return {
            "seq": self.seq,
            "clock": self.clock,
            "triage": self.triage.state(),
            "registry": self.registry.state(),
            "book": self.book.state(),
            "risk": self.risk.state(),
        }

    def snapshot(self, path) -> None:
        self._flush()
        doc = {"version": SNAPSHOT_VERSION, "state": self.state()}
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_snapshot(cls, config: Optional[Config], snapshot_path, log_path=None) -> "Core":
        """Load a snapshot, then fold any logged events newer than it."""
        doc = json.loads(Path(snapshot_path).read_text(encoding="utf-8"))
        if doc.get("version") != SNAPSHOT_VERSION:
            raise SnapshotVersionMismatch(f"snapshot version {doc.get('version')}, expected {SNAPSHOT_VERSION}")
        core = cls(config, fresh=False)
        core._load_state(doc["state"])
        if log_path is not None and Path(log_path).exists():
            for e in EventLog.read(log_path):
                if e.seq >= core.seq:
                    core._fold(e)
            core.log = EventLog(log_path)
        return core

    def _load_state(self, st: dict) -> None:
        from .registry import CapacityState, Facility

        self.seq, self.clock = st["seq"], st["clock"]
        tr = st["triage"]
        self.triage.weights = RubricWeights(**tr["weights"])
        for label, pt, at in tr["history"]:
            self.triage.history.add(HistoryEntry(Label(label), GeoPoint(*pt) if pt else None, at))
        for code, (name, lat, lon, contact, caps, cap) in st["registry"].items():
            self.registry.facilities[code] = Facility(
                code, name, GeoPoint(lat, lon), contact, frozenset(caps), CapacityState(*cap))
        self.book.counter = st["book"]["counter"]
        for code, r in st["book"]["recs"].items():
            rec = self.book.recs[code] = Recommendation(**r)
            self.book.episodes.setdefault(rec.episode, []).append(code)
        for sender, lat, lon, w, at in st["risk"]["records"]:
            self.risk.records.append(CaseRecord(sender, lat, lon, w, at))
        for sender, pts in st["risk"]["orbits"].items():
            o = self.risk.orbits[sender] = MovementOrbit(sender, self.risk.params.orbit_size)
            for lat, lon, at in pts:
                o.add(lat, lon, at)

    # ------------------------------------------------------------ frames

    def handle_frame(self, frame: InboundFrame) -> list[OutboundMessage]:
        # late frames are clamped to the logical clock
        now = max(self.clock, frame.received_at)
        try:
            replies = self._dispatch(frame, now)
        except Exception:  # no frame may stop the loop
            log.exception("frame %d dropped after internal error", frame.seq)
            replies = []
        for msg in replies:
            self.emit(ev.REPLY, now, msisdn=msg.msisdn, body=msg.body, in_reply_to=msg.in_reply_to)
        self._flush()
        return replies

    def _dispatch(self, frame: InboundFrame, now: int) -> list[OutboundMessage]:
        def reply(text: str) -> list[OutboundMessage]:
            return [OutboundMessage(frame.msisdn, text, frame.seq)]

        try:
            parsed = parse_message(frame.body, self.lexicon)
        except BadUpdate:
            return reply("BAD UPDATE. SEND FAC CODE BEDS N OR FAC CODE LOC LAT LON")
        except (BadCode, NoSymptoms):
            return reply(HELP_TEXT)

        if parsed.intent is Intent.SYMPTOM_REPORT:
            return self._symptom_report(frame, parsed.payload, now)
        if parsed.intent is Intent.FEEDBACK:
            return self._feedback(frame, parsed.payload, now)
        if parsed.intent is Intent.FACILITY_UPDATE:
            return self._facility_update(frame, parsed.payload, now)
        return reply(HELP_TEXT)

    def _routing_replies(self, frame: InboundFrame, rec: Recommendation) -> list[OutboundMessage]:
        f = self.registry.facilities[rec.facility_code]
        out = [compose_patient_reply(rec, frame.msisdn, f.name, frame.seq)]
        if not rec.fallback:
            alert = compose_facility_alert(rec, f.contact_msisdn)
            if alert is not None:
                out.append(alert)
        return out

    def _symptom_report(self, frame, report, now) -> list[OutboundMessage]:
        g = self.config.geo
        loc = resolve_location(frame, report, self.towers, self.gazetteer,
                               g.tower_radius_km, g.place_radius_km)
        a = assess(report, loc, self.triage, now, frame=frame.seq)
        self.risk.record_case(a, loc, frame.msisdn, now)
        try:
            rec = recommend(a, loc, self.registry, self.book, now, frame.msisdn, frame=frame.seq)
        except (NoLocation, NoFacility) as exc:
            return [compose_patient_reply(exc, frame.msisdn, in_reply_to=frame.seq)]
        return self._routing_replies(frame, rec)

    def _feedback(self, frame, fb, now) -> list[OutboundMessage]:
        def reply(text):
            return [OutboundMessage(frame.msisdn, text, frame.seq)]

        try:
            new = handle_feedback(fb, self.registry, self.book, self.triage, now, sender=frame.msisdn,
                                  chain_max=self.config.registry.feedback_chain_max, frame=frame.seq)
        except UnknownCode:
            return reply(UNKNOWN_REF_TEXT)
        except DuplicateFeedback:
            log.info("duplicate feedback on %s ignored", fb.code)
            return reply(f"REF {fb.code} ALREADY NOTED")
        except EpisodeClosed:
            return reply(CHAIN_END_TEXT)
        except NoFacility:
            return reply(NO_FACILITY_TEXT)
        if new is None:
            return reply(f"THANK YOU. REF {fb.code} CONFIRMED")
        return self._routing_replies(frame, new)

    def _facility_update(self, frame, u, now) -> list[OutboundMessage]:
        def reply(text):
            return [OutboundMessage(frame.msisdn, text[:160], frame.seq)]

        code = u.facility_code
        if code is None:
            f = self.registry.by_contact(frame.msisdn)
            if f is None:
                return reply("UNKNOWN FACILITY. SEND FAC CODE BEDS N")
            code = f.code
        f = self.registry.facilities.get(code)
        shown = gsm_text(code)[:20]
        if f is None:
            return reply(f"UNKNOWN FACILITY {shown}")
        if f.contact_msisdn != frame.msisdn:
            return reply(f"NOT AUTHORIZED FOR {shown}")
        self.registry.apply_facility_update(u, now, code)
        text = f"UPDATED {shown}."
        if u.beds_available is not None:
            text += f" BEDS {u.beds_available}." if u.beds_available else " FULL."
        if u.new_location is not None:
            text += f" LOC {u.new_location[0]:.4f} {u.new_location[1]:.4f}."
        return reply(text)
