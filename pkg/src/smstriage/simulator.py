"""Synthetic populations and message streams, replayed through the full pipeline.

``generate`` writes a replay file, a ground-truth JSON-lines file and the
facility/tower/gazetteer tables for one scenario. ``run`` replays it, lets
simulated patients answer reference codes with YES/NO feedback, and scores the
outcome against brute-force oracles.
"""

from __future__ import annotations

import configparser
import heapq
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import events as ev
from . import oracles
from .geo import GeoPoint, GridSpec
from .parser import CanonicalSymptom, EpiRiskFlag, Lexicon, levenshtein
from .risk import build_grid
from .service import Config, Core, EventLog, config_from_mapping
from .wire import InboundFrame, OutboundMessage, encode_frame, replay_file

T0 = 1412121600  # 2014-10-01T00:00:00Z
REF_RE = re.compile(r"REF ([A-Z2-7]{6})")

SYLLABLES = ["ba", "be", "bo", "da", "di", "fa", "fo", "ga", "gi", "ka", "ke", "ko", "la", "lo",
             "ma", "me", "mo", "na", "ni", "sa", "se", "so", "ta", "te", "to", "wa", "ya", "zu"]
NOISE_WORDS = ["hello", "credit", "please", "thanks", "mama", "call", "airtime", "good", "morning"]
COMMON = ["HEADACHE", "MUSCLE_PAIN", "WEAKNESS", "FATIGUE", "VOMITING", "DIARRHEA", "ABDOMINAL_PAIN"]


class InvalidSpec(ValueError):
    pass


@dataclass
class ScenarioSpec:
    seed: int = 1
    n_patients: int = 50
    n_facilities: int = 5
    origin_lat: float = 7.5
    origin_lon: float = -11.0
    cell_deg: float = 0.1
    n_rows: int = 20
    n_cols: int = 20
    likely_fraction: float = 0.4
    possible_fraction: float = 0.3
    noise_fraction: float = 0.3
    typo_rate: float = 0.0
    feedback_rate: float = 0.0
    duration_days: float = 14.0
    # extensions beyond the core fields
    negative_fraction: float = 0.5
    beds_per_facility: int = 0          # 0: facilities never report beds
    update_every_hours: float = 24.0
    isolation_fraction: float = 0.6
    tower_fraction: float = 0.6
    max_reports_per_patient: int = 3
    n_villages: int = 24

    @property
    def area(self) -> GridSpec:
        return GridSpec(GeoPoint(self.origin_lat, self.origin_lon), self.cell_deg, self.n_rows, self.n_cols)

    def validate(self) -> None:
        mix = (self.likely_fraction, self.possible_fraction, self.noise_fraction)
        if any(f < 0 for f in mix) or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
            raise InvalidSpec("profile fractions must be non-negative and sum to 1")
        for name in ("typo_rate", "feedback_rate", "negative_fraction", "isolation_fraction", "tower_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.n_patients < 0 or self.n_facilities < 1 or self.n_villages < 1:
            raise InvalidSpec("need n_patients >= 0, n_facilities >= 1, n_villages >= 1")
        if self.duration_days <= 0 or self.max_reports_per_patient < 1 or self.beds_per_facility < 0:
            raise InvalidSpec("duration, reports per patient and beds must be positive")
        try:
            self.area
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None


def load_spec(path) -> ScenarioSpec:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("scenario"):
        raise InvalidSpec("missing [scenario] section")
    spec = ScenarioSpec()
    known = {f.name: f for f in fields(spec)}
    for key, raw in parser.items("scenario"):
        if key not in known:
            raise InvalidSpec(f"unknown key {key!r}")
        default = getattr(spec, key)
        setattr(spec, key, type(default)(raw))
    spec.validate()
    return spec


@dataclass(frozen=True)
class ScenarioFiles:
    out_dir: Path
    replay: Path
    truth: Path


# ---------------------------------------------------------------- generation

class _Gen:
    """Thin wrapper over a counter-based (Philox) generator."""

    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.Philox(key=seed))

    def uniform(self, lo=0.0, hi=1.0) -> float:
        return float(self.rng.uniform(lo, hi))

    def int(self, lo: int, hi: int) -> int:  # inclusive
        return int(self.rng.integers(lo, hi + 1))

    def choice(self, seq):
        return seq[int(self.rng.integers(0, len(seq)))]

    def sample(self, seq, k: int) -> list:
        idx = self.rng.permutation(len(seq))[:k]
        return [seq[i] for i in sorted(idx)]

    def shuffle(self, seq) -> list:
        return [seq[i] for i in self.rng.permutation(len(seq))]


def _typo(word: str, g: _Gen) -> str:
    """One substitution, insertion or deletion, kept within parser tolerance."""
    n = len(word)
    if n < 4:
        return word
    ops = ["sub", "ins"] + (["del"] if n >= 5 else [])
    op = g.choice(ops)
    i = g.int(0, n - 1)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if op == "sub":
        c = g.choice([ch for ch in letters if ch != word[i]])
        return word[:i] + c + word[i + 1:]
    if op == "ins":
        return word[:i] + g.choice(letters) + word[i:]
    return word[:i] + word[i + 1:]


def _village_names(n: int, g: _Gen, lexicon: Lexicon) -> list[str]:
    names: list[str] = []
    words = list(lexicon.unigrams)
    attempts = 0
    while len(names) < n:
        attempts += 1
        if attempts > 100000:
            raise InvalidSpec("cannot generate enough distinct village names")
        name = "".join(g.choice(SYLLABLES) for _ in range(3))
        if all(levenshtein(name, o) >= 4 for o in names) and all(levenshtein(name, w) >= 4 for w in words):
            names.append(name)
    return names


def _phrases_by_target(lexicon: Lexicon) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for phrase, target in lexicon.entries.items():
        out.setdefault(target.value, []).append(phrase)
    return out


def _nearest(lat, lon, table: dict[str, tuple[float, float]]) -> str:
    return min(table, key=lambda k: ((table[k][0] - lat) ** 2 + (table[k][1] - lon) ** 2, k))


def _profile_symptoms(profile: str, g: _Gen) -> tuple[list[str], list[str]]:
    if profile == "likely":
        symptoms = ["FEVER"] + g.sample(COMMON, g.int(3, 4))
        epi = [g.choice([f.value for f in EpiRiskFlag])] if g.uniform() < 0.3 else []
        return symptoms, epi
    if profile == "possible":
        kind = g.int(0, 2)
        if kind == 0:
            return ["HEMORRHAGE"] + g.sample(COMMON, 1), []
        if kind == 1:
            return g.sample(COMMON, 3), []
        return g.sample(COMMON, 1), [g.choice([f.value for f in EpiRiskFlag])]
    if g.uniform() < 0.5:
        return g.sample(COMMON, 1), []
    return [], []


def generate(spec: ScenarioSpec, out_dir) -> ScenarioFiles:
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = _Gen(spec.seed)
    lexicon = Lexicon.default()
    phrases = _phrases_by_target(lexicon)
    area = spec.area
    lat0, lon0 = spec.origin_lat, spec.origin_lon
    lat1 = lat0 + spec.n_rows * spec.cell_deg
    lon1 = lon0 + spec.n_cols * spec.cell_deg
    margin = 0.05 * min(lat1 - lat0, lon1 - lon0)

    def random_point():
        return (round(g.uniform(lat0 + margin, lat1 - margin), 5),
                round(g.uniform(lon0 + margin, lon1 - margin), 5))

    villages = {name: random_point() for name in _village_names(spec.n_villages, g, lexicon)}
    towers = {}
    step = 0.3
    for i in range(max(1, math.ceil((lat1 - lat0) / step))):
        for j in range(max(1, math.ceil((lon1 - lon0) / step))):
            towers[f"T{i:02d}{j:02d}"] = (round(min(lat1 - 1e-6, lat0 + (i + 0.5) * step), 5),
                                           round(min(lon1 - 1e-6, lon0 + (j + 0.5) * step), 5))
    n_iso = max(1, round(spec.isolation_fraction * spec.n_facilities))
    iso_flags = g.shuffle([True] * n_iso + [False] * (spec.n_facilities - n_iso))
    facilities = []
    for k in range(spec.n_facilities):
        lat, lon = random_point()
        caps = "ISOLATION;GENERAL" if iso_flags[k] and g.uniform() < 0.5 else ("ISOLATION" if iso_flags[k] else "GENERAL")
        facilities.append((f"F{k + 1:02d}", f"Facility {k + 1}", lat, lon, f"+23100000{k + 1:04d}", caps))

    msgs = []  # (at, order, msisdn, tower, body, truth)
    order = 0
    horizon = int(spec.duration_days * 86400)
    profiles = ["likely", "possible", "noise"]
    cum = np.cumsum([spec.likely_fraction, spec.possible_fraction, spec.noise_fraction])
    for p in range(spec.n_patients):
        msisdn = f"+2246{p:08d}"
        u = g.uniform()
        profile = profiles[min(2, int(np.searchsorted(cum, u, side="right")))]
        home = random_point()
        t = g.int(0, horizon)
        for _ in range(g.int(1, spec.max_reports_per_patient)):
            if t > horizon:
                break
            lat = min(lat1 - margin, max(lat0 + margin, home[0] + g.uniform(-0.05, 0.05)))
            lon = min(lon1 - margin, max(lon0 + margin, home[1] + g.uniform(-0.05, 0.05)))
            symptoms, epi = _profile_symptoms(profile, g)
            words = [g.choice(phrases[s]) for s in symptoms] + [g.choice(phrases[e]) for e in epi]
            if not words:
                words = g.sample(NOISE_WORDS, 2)
            words = g.shuffle(words)
            if symptoms and g.uniform() < 0.3:
                words.append(f"{g.int(1, 14)} days")
            tower = village = None
            if g.uniform() < spec.tower_fraction:
                tower = _nearest(lat, lon, towers)
            else:
                village = _nearest(lat, lon, villages)
                words.insert(g.int(0, len(words)), village)
            toks = " ".join(words).split()
            if spec.typo_rate > 0:
                toks = [_typo(w, g) if w.isalpha() and g.uniform() < spec.typo_rate else w for w in toks]
            body = " ".join(toks)
            feedback = []
            if symptoms and g.uniform() < spec.feedback_rate:
                while len(feedback) < 4:
                    neg = g.uniform() < spec.negative_fraction
                    feedback.append(["YES", "NO"][neg])
                    if not neg:
                        break
            truth = {
                "kind": "report" if symptoms or epi else "noise", "profile": profile,
                "msisdn": msisdn, "at": T0 + t, "body": body, "lat": lat, "lon": lon,
                "symptoms": sorted(symptoms), "epi": sorted(epi), "tower": tower, "village": village,
                "feedback": feedback, "delays": [g.int(1800, 4 * 3600) for _ in feedback],
            }
            msgs.append((T0 + t, order, msisdn, tower, body, truth))
            order += 1
            t += g.int(86400, 3 * 86400)

    if spec.beds_per_facility > 0:
        step_s = int(spec.update_every_hours * 3600)
        for code, _, _, _, contact, _ in facilities:
            t = 0
            first = True
            while t <= horizon:
                beds = spec.beds_per_facility if first else g.int(0, spec.beds_per_facility)
                body = f"FAC {code} BEDS {beds}"
                truth = {"kind": "update", "msisdn": contact, "at": T0 + t, "body": body,
                         "facility": code, "beds": beds}
                msgs.append((T0 + t, order, contact, None, body, truth))
                order += 1
                first = False
                t += step_s

    msgs.sort(key=lambda m: (m[0], m[1]))
    files = ScenarioFiles(out_dir, out_dir / "frames.txt", out_dir / "truth.jsonl")
    _write_csv(out_dir / "facilities.csv", "code,name,lat,lon,contact,capabilities", facilities)
    _write_csv(out_dir / "towers.csv", "tower_id,lat,lon", [(k, *v) for k, v in towers.items()])
    _write_csv(out_dir / "gazetteer.csv", "name,kind,lat,lon", [(k, "village", *v) for k, v in villages.items()])
    with open(files.replay, "w", encoding="utf-8", newline="\n") as fh:
        for at, _, msisdn, tower, body, _ in msgs:
            fh.write(encode_frame(InboundFrame(msisdn, tower, at, body)))
    with open(files.truth, "w", encoding="utf-8", newline="\n") as fh:
        header = {"kind": "scenario", "spec": asdict(spec),
                  "files": {"facilities": "facilities.csv", "towers": "towers.csv", "gazetteer": "gazetteer.csv"}}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for m in msgs:
            fh.write(json.dumps(m[5], sort_keys=True) + "\n")
    return files


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


# ---------------------------------------------------------------- replay with patients

def read_truth(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "scenario":
        raise InvalidSpec(f"{path}: missing scenario header")
    return lines[0], lines[1:]


def scenario_config(header: dict, base_dir: Path, **overrides) -> Config:
    spec = header["spec"]
    sections = {
        "registry": {"code_seed": spec["seed"]},
        "risk": {"origin_lat": spec["origin_lat"], "origin_lon": spec["origin_lon"],
                 "cell_deg": spec["cell_deg"], "n_rows": spec["n_rows"], "n_cols": spec["n_cols"],
                 "hash_salt": f"scenario-{spec['seed']}"},
        "data": {k: str(v) for k, v in header["files"].items()},
    }
    for key, value in overrides.items():
        sect, name = key.split(".", 1)
        sections.setdefault(sect, {})[name] = value
    return config_from_mapping(sections, base_dir)


class PatientAgent:
    """Frame handler that answers reference codes with scripted YES/NO feedback.

    Scheduled feedback frames are delivered before any file frame that is not
    earlier than them, so the realized stream stays time-ordered.
    """

    def __init__(self, core: Core, truth: list[dict]):
        self.core = core
        self.by_key: dict[tuple, list[dict]] = {}
        for t in truth:
            self.by_key.setdefault((t["msisdn"], t["at"], t["body"]), []).append(t)
        self.pending: list = []  # heap of (at, order, msisdn, body, remaining, delays, truth)
        self.order = 0
        self.seq = 0
        self.delivered: list[InboundFrame] = []
        self.truth_of: dict[int, dict] = {}
        self.replies: dict[int, list[OutboundMessage]] = {}

    def handle_frame(self, frame: InboundFrame) -> list[OutboundMessage]:
        out = self._drain(frame.received_at)
        queue = self.by_key.get((frame.msisdn, frame.received_at, frame.body))
        truth = queue.pop(0) if queue else None
        out += self._deliver(frame, truth, (truth or {}).get("feedback", []), (truth or {}).get("delays", []))
        return out

    def finish(self) -> list[OutboundMessage]:
        return self._drain(None)

    def _drain(self, until: Optional[int]) -> list[OutboundMessage]:
        out = []
        while self.pending and (until is None or self.pending[0][0] <= until):
            at, _, msisdn, body, remaining, delays, truth = heapq.heappop(self.pending)
            out += self._deliver(InboundFrame(msisdn, None, at, body), None, remaining, delays, truth)
        return out

    def _deliver(self, frame, truth, script, delays, origin=None) -> list[OutboundMessage]:
        frame = replace(frame, seq=self.seq)
        self.seq += 1
        self.delivered.append(frame)
        if truth is not None:
            self.truth_of[frame.seq] = truth
        replies = self.core.handle_frame(frame)
        self.replies[frame.seq] = replies
        if script:
            for msg in replies:
                m = REF_RE.search(msg.body)
                if msg.msisdn == frame.msisdn and m:
                    at = max(frame.received_at, self.core.clock) + delays[0]
                    body = f"{script[0]} {m.group(1)}"
                    heapq.heappush(self.pending, (at, self.order, frame.msisdn, body,
                                                  script[1:], delays[1:], truth or origin))
                    self.order += 1
                    break
        return replies

    def write_realized(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for f in self.delivered:
                fh.write(encode_frame(f))


@dataclass
class ScenarioMetrics:
    routed_fraction: float
    classification_agreement: float
    capacity_violations: int
    mean_distance_km: float
    risk_grid_oracle_max_rel_err: float
    frames: int = 0
    replies: int = 0
    recommendations: int = 0

    def __post_init__(self):
        for name in ("routed_fraction", "classification_agreement"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if self.capacity_violations < 0 or self.mean_distance_km < 0:
            raise ValueError("negative count or distance")


def capacity_violations(events) -> int:
    """Recommendations beyond n to a facility since its last REPORTED{n} update.

    A window opens at a bed-count update and closes at the next update, a
    positive feedback (capacity confirmed) or the expiry of a presumed-full state.
    """
    windows: dict[str, list[int]] = {}
    violations = 0
    for e in events:
        fac = e.data.get("facility")
        if e.kind == ev.FACILITY_UPDATE and e.data.get("beds") is not None:
            beds = e.data["beds"]
            windows[fac] = [beds, 0] if beds > 0 else [0, 0]
        elif e.kind == ev.RECOMMENDATION_ISSUED and fac in windows:
            w = windows[fac]
            w[1] += 1
            if w[1] > w[0]:
                violations += 1
        elif (e.kind == ev.FEEDBACK_POSITIVE and not e.data.get("fallback")) or e.kind == ev.STATE_EXPIRED:
            windows.pop(fac, None)
    return violations


def relative_error(a, b, floor: float = 1e-200) -> float:
    """Max elementwise |a-b|/|b|; cells where the reference is below ``floor`` use |a-b|/floor."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def score(events: list[ev.Event], agent: PatientAgent, core: Core) -> ScenarioMetrics:
    reports = [s for s, t in agent.truth_of.items() if t["kind"] == "report"]
    routed = sum(
        1 for s in reports
        if agent.replies.get(s) and " GO TO " in agent.replies[s][0].body
    )
    weights = None
    history = []
    labels_engine: dict[int, str] = {}
    oracle_labels: dict[int, str] = {}
    prior = core.config.triage
    for e in events:
        if e.kind == ev.CONFIG_LOADED:
            weights = dict(e.data["weights"])
        elif e.kind == ev.WEIGHTS_TUNED:
            weights["likely_threshold"] = e.data["likely_threshold"]
        elif e.kind == ev.ASSESSMENT:
            s = e.data.get("frame")
            labels_engine[s] = e.data["label"]
            truth = agent.truth_of.get(s)
            if truth is None or truth["kind"] != "report":
                continue
            lat, lon = e.data.get("lat"), e.data.get("lon")
            has_prior = oracles.oracle_prior(lat, lon, history, e.at, prior.prior_radius_km,
                                             prior.prior_min_cases, prior.incubation_days)
            _, label = oracles.oracle_label(truth["symptoms"], truth["epi"], has_prior, weights)
            oracle_labels[s] = label
            history.append((label, lat, lon, e.at))
    agree = sum(1 for s in reports if labels_engine.get(s) == oracle_labels.get(s, "?"))
    dists = [e.data["distance_km"] for e in events if e.kind == ev.RECOMMENDATION and not e.data["fallback"]]
    spec = core.config.risk.grid()
    params = core.config.risk_params()
    grid = build_grid(core.risk.records, spec, core.clock, params)
    ref = oracles.oracle_grid(
        [(r.lat, r.lon, r.weight, r.at) for r in core.risk.records],
        spec.origin.lat, spec.origin.lon, spec.cell_deg, spec.n_rows, spec.n_cols, core.clock,
        params.sigma_km, params.tau_days, params.incubation_days,
    )
    return ScenarioMetrics(
        routed_fraction=routed / len(reports) if reports else 1.0,
        classification_agreement=agree / len(reports) if reports else 1.0,
        capacity_violations=capacity_violations(events),
        mean_distance_km=float(np.mean(dists)) if dists else 0.0,
        risk_grid_oracle_max_rel_err=relative_error(grid.values, ref),
        frames=len(agent.delivered),
        replies=sum(len(r) for r in agent.replies.values()),
        recommendations=len(dists),
    )


def run(replay_path, truth_path, out_dir=None, **config_overrides) -> ScenarioMetrics:
    """Replay a generated scenario and score it. Writes events, replies and the realized stream."""
    replay_path, truth_path = Path(replay_path), Path(truth_path)
    out_dir = Path(out_dir) if out_dir else replay_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    header, truth = read_truth(truth_path)
    config = scenario_config(header, truth_path.parent, **config_overrides)
    log_path = out_dir / "events.jsonl"
    core = Core(config, log_path, truncate=True)
    agent = PatientAgent(core, truth)
    try:
        replay_file(replay_path, agent, out_dir / "replies.txt")
    finally:
        core.close()
    agent.write_realized(out_dir / "realized.txt")
    metrics = score(list(EventLog.read(log_path)), agent, core)
    (out_dir / "metrics.json").write_text(json.dumps(asdict(metrics), indent=2, sort_keys=True) + "\n")
    return metrics
