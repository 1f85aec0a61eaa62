"""Normalize SMS bodies and extract intent plus payload with a fuzzy keyword lexicon."""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, TypeVar, Union

T = TypeVar("T")


class CanonicalSymptom(str, enum.Enum):
    FEVER = "FEVER"
    HEADACHE = "HEADACHE"
    MUSCLE_PAIN = "MUSCLE_PAIN"
    WEAKNESS = "WEAKNESS"
    FATIGUE = "FATIGUE"
    VOMITING = "VOMITING"
    DIARRHEA = "DIARRHEA"
    ABDOMINAL_PAIN = "ABDOMINAL_PAIN"
    HEMORRHAGE = "HEMORRHAGE"


class EpiRiskFlag(str, enum.Enum):
    CONTACT = "CONTACT"
    FUNERAL = "FUNERAL"
    TRAVEL = "TRAVEL"


class Marker(str, enum.Enum):
    """Grammar keywords: location marker and number contexts."""
    PLACE = "PLACE"
    DAYS = "DAYS"
    BEDS = "BEDS"
    FAC = "FAC"
    LOC = "LOC"


Target = Union[CanonicalSymptom, EpiRiskFlag, Marker]

_TARGETS: dict[str, Target] = {
    **{m.value: m for m in CanonicalSymptom},
    **{m.value: m for m in EpiRiskFlag},
    **{m.value: m for m in Marker},
}


class Intent(str, enum.Enum):
    SYMPTOM_REPORT = "SYMPTOM_REPORT"
    FEEDBACK = "FEEDBACK"
    FACILITY_UPDATE = "FACILITY_UPDATE"
    UNKNOWN = "UNKNOWN"


class Polarity(str, enum.Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


class NoSymptoms(ValueError):
    pass


class BadCode(ValueError):
    pass


class BadUpdate(ValueError):
    pass


class LexiconError(ValueError):
    pass


# ---------------------------------------------------------------- edit distance

def tolerance(n: int) -> int:
    """Allowed edits for a token of length ``n``."""
    if n <= 3:
        return 0
    if n <= 5:
        return 1
    return 2


def levenshtein(a: str, b: str, limit: Optional[int] = None) -> int:
    """Unit-cost edit distance; returns ``limit + 1`` as soon as it is exceeded."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if limit is not None and len(a) - len(b) > limit:
        return limit + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        left = best = i
        for j, cb in enumerate(b):
            x = prev[j] + (ca != cb)
            if prev[j + 1] + 1 < x:
                x = prev[j + 1] + 1
            if left + 1 < x:
                x = left + 1
            cur.append(x)
            left = x
            if x < best:
                best = x
        if limit is not None and best > limit:
            return limit + 1
        prev = cur
    return prev[-1]


def fuzzy_pick(token: str, candidates: Mapping[str, T]) -> Optional[T]:
    """Exact hit, else the unique target at minimal distance within tolerance.

    Two candidates at the same minimal distance with different targets are
    ambiguous and yield ``None``.
    """
    hit = candidates.get(token)
    if hit is not None:
        return hit
    tol = tolerance(len(token))
    if tol == 0:
        return None
    best = tol + 1
    found: set = set()
    for key, target in candidates.items():
        if abs(len(key) - len(token)) > tol:
            continue
        d = levenshtein(token, key, tol)
        if d < best:
            best, found = d, {target}
        elif d == best:
            found.add(target)
    if best <= tol and len(found) == 1:
        return next(iter(found))
    return None


# ---------------------------------------------------------------- normalization

_TOKEN_RE = re.compile(r"(?<![a-z0-9])-?\d+(?:\.\d+)?|[a-z0-9]+")


def normalize(body: str) -> list[str]:
    """Lowercase, fold accents, drop punctuation, split.

    Decimal numbers with an optional leading minus survive as single tokens so
    coordinates in ``loc <lat> <lon>`` stay intact.
    """
    if body.isascii():
        return _TOKEN_RE.findall(body.lower())
    folded = unicodedata.normalize("NFKD", body.lower())
    ascii_text = "".join(
        c if c.isascii() else " "
        for c in folded if not unicodedata.combining(c)
    )
    return _TOKEN_RE.findall(ascii_text.lower())


def is_number(tok: str) -> bool:
    return bool(tok) and (tok[0].isdigit() or (tok[0] == "-" and len(tok) > 1))


def as_int(tok: str) -> Optional[int]:
    return int(tok) if tok.isdigit() else None


# ---------------------------------------------------------------- lexicon

_MEMO_MAX = 1 << 16


class Lexicon:
    """Phrase table mapping 1-3 lowercase tokens to a target.

    File format: ``phrase -> TARGET`` per line, ``#`` starts a comment.
    """

    def __init__(self, entries: Mapping[str, Target]):
        self.entries: dict[str, Target] = {}
        self._by_len: dict[int, dict[tuple[str, ...], Target]] = {1: {}, 2: {}, 3: {}}
        for phrase, target in entries.items():
            toks = tuple(phrase.split())
            if not 1 <= len(toks) <= 3:
                raise LexiconError(f"phrase must have 1-3 tokens: {phrase!r}")
            if any(t != t.lower() or not t.isascii() or not t.isalnum() for t in toks):
                raise LexiconError(f"phrase must be lowercase ascii tokens: {phrase!r}")
            key = " ".join(toks)
            if key in self.entries:
                raise LexiconError(f"duplicate phrase {key!r}")
            self.entries[key] = target
            self._by_len[len(toks)][toks] = target
        self.unigrams: dict[str, Target] = {k[0]: v for k, v in self._by_len[1].items()}
        self._memo: dict[str, Optional[Target]] = {}
        # multi-token phrases indexed by first token, plus every phrase token
        self._by_first: dict[int, dict[str, list]] = {2: {}, 3: {}}
        for k in (2, 3):
            for toks, target in self._by_len[k].items():
                self._by_first[k].setdefault(toks[0], []).append((toks, target))
        self._vocab = sorted({t for k in (2, 3) for toks in self._by_len[k] for t in toks})
        self._near_memo: dict[str, dict[str, int]] = {}

    @classmethod
    def load(cls, path) -> "Lexicon":
        return cls.parse(Path(path).read_text(encoding="utf-8"), str(path))

    @classmethod
    def default(cls) -> "Lexicon":
        text = resources.files("smstriage").joinpath("data/lexicon.txt").read_text(encoding="utf-8")
        return cls.parse(text, "lexicon.txt")

    @classmethod
    def parse(cls, text: str, name: str = "<lexicon>") -> "Lexicon":
        entries: dict[str, Target] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise LexiconError(f"{name}:{n}: expected 'phrase -> TARGET'")
            phrase, target = (s.strip() for s in line.split("->", 1))
            if target not in _TARGETS:
                raise LexiconError(f"{name}:{n}: unknown target {target!r}")
            phrase = " ".join(phrase.split())
            if phrase in entries:
                raise LexiconError(f"{name}:{n}: duplicate phrase {phrase!r}")
            entries[phrase] = _TARGETS[target]
        return cls(entries)

    def match_token(self, token: str) -> Optional[Target]:
        try:
            return self._memo[token]
        except KeyError:
            pass
        hit = None if is_number(token) else fuzzy_pick(token, self.unigrams)
        if len(self._memo) >= _MEMO_MAX:
            self._memo.clear()
        self._memo[token] = hit
        return hit

    def match_at(self, tokens: list[str], i: int) -> Optional[tuple[Target, int]]:
        """Longest-first match starting at ``tokens[i]``; returns (target, width)."""
        for k in (3, 2):
            table = self._by_len[k]
            if not table or i + k > len(tokens):
                continue
            window = tuple(tokens[i:i + k])
            hit = table.get(window)
            if hit is not None:
                return hit, k
            hit = self._fuzzy_window(window, k)
            if hit is not None:
                return hit, k
        hit = self.match_token(tokens[i])
        return (hit, 1) if hit is not None else None

    def _near(self, token: str) -> dict[str, int]:
        """Phrase-vocabulary tokens within tolerance of ``token``, with distances."""
        try:
            return self._near_memo[token]
        except KeyError:
            pass
        tol = tolerance(len(token))
        near = {}
        for v in self._vocab:
            if abs(len(v) - len(token)) <= tol:
                d = levenshtein(token, v, tol)
                if d <= tol:
                    near[v] = d
        if len(self._near_memo) >= _MEMO_MAX:
            self._near_memo.clear()
        self._near_memo[token] = near
        return near

    def _fuzzy_window(self, window, k: int) -> Optional[Target]:
        if any(is_number(t) for t in window):
            return None
        best, found = None, set()
        for first, d0 in self._near(window[0]).items():
            for phrase, target in self._by_first[k].get(first, ()):
                total = d0
                for tok, ptok in zip(window[1:], phrase[1:]):
                    d = self._near(tok).get(ptok)
                    if d is None:
                        break
                    total += d
                else:
                    if best is None or total < best:
                        best, found = total, {target}
                    elif total == best:
                        found.add(target)
        return next(iter(found)) if len(found) == 1 else None


# ---------------------------------------------------------------- payloads

# Minted codes are strict base32 ([A-Z2-7]); input also tolerates 0,1,8,9.
CODE_RE = re.compile(r"[A-Z0-9]{6}")


@dataclass(frozen=True)
class SymptomReport:
    symptoms: frozenset = frozenset()
    epi_flags: frozenset = frozenset()
    duration_days: Optional[int] = None
    location_hint: Optional[str] = None
    unmatched_tokens: tuple = ()


@dataclass(frozen=True)
class Feedback:
    code: str
    polarity: Polarity


@dataclass(frozen=True)
class FacilityUpdate:
    facility_code: Optional[str]  # None: resolve from the sender's msisdn
    beds_available: Optional[int] = None
    new_location: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class ParsedMessage:
    intent: Intent
    payload: Union[SymptomReport, Feedback, FacilityUpdate, None] = None
    tokens: list = field(default_factory=list, compare=False)


def _is_code(tok: str) -> bool:
    return bool(CODE_RE.fullmatch(tok.upper()))


def classify_intent(tokens: list[str], lexicon: Lexicon) -> Intent:
    if len(tokens) >= 2 and tokens[0] in ("yes", "no") and _is_code(tokens[1]):
        return Intent.FEEDBACK
    hits = []
    i = 0
    while i < len(tokens):
        m = lexicon.match_at(tokens, i)
        if m is None:
            hits.append(None)
            i += 1
        else:
            hits.append(m[0])
            i += m[1]
    if any(t is Marker.FAC for t in hits[:-1]) or Marker.BEDS in hits:
        return Intent.FACILITY_UPDATE
    if any(isinstance(t, (CanonicalSymptom, EpiRiskFlag)) for t in hits):
        return Intent.SYMPTOM_REPORT
    return Intent.UNKNOWN


def parse_symptom_report(tokens: list[str], lexicon: Lexicon) -> SymptomReport:
    symptoms: set = set()
    epi: set = set()
    duration = None
    hint = None
    marked_hint = None
    unmatched: list[str] = []
    n = len(tokens)
    i = 0
    while i < n:
        tok = tokens[i]
        if is_number(tok):
            nxt = lexicon.match_at(tokens, i + 1) if i + 1 < n else None
            if nxt is not None and nxt[0] is Marker.DAYS and as_int(tok) is not None:
                if 1 <= int(tok) <= 60:
                    duration = int(tok)
                i += 1 + nxt[1]
                continue
            unmatched.append(tok)
            i += 1
            continue
        m = lexicon.match_at(tokens, i)
        if m is None:
            unmatched.append(tok)
            if hint is None and tok.isalpha() and len(tok) >= 4:
                hint = tok
            i += 1
            continue
        target, width = m
        i += width
        if isinstance(target, CanonicalSymptom):
            symptoms.add(target)
        elif isinstance(target, EpiRiskFlag):
            epi.add(target)
        elif target is Marker.DAYS:
            if i < n and as_int(tokens[i]) is not None:
                if 1 <= int(tokens[i]) <= 60:
                    duration = int(tokens[i])
                i += 1
        elif target is Marker.PLACE:
            if i < n and tokens[i].isalnum() and not is_number(tokens[i]) and marked_hint is None:
                marked_hint = tokens[i]
                unmatched.append(tokens[i])
                i += 1
    if not symptoms and not epi:
        raise NoSymptoms("no symptom or exposure keywords")
    return SymptomReport(
        frozenset(symptoms), frozenset(epi), duration,
        marked_hint or hint, tuple(unmatched),
    )


def parse_feedback(tokens: list[str]) -> Feedback:
    if len(tokens) < 2 or tokens[0] not in ("yes", "no"):
        raise BadCode("expected YES|NO <code>")
    code = tokens[1].upper()
    if not CODE_RE.fullmatch(code):
        raise BadCode(f"bad reference code {tokens[1]!r}")
    return Feedback(code, Polarity.POSITIVE if tokens[0] == "yes" else Polarity.NEGATIVE)


def _as_coord(tok: str) -> Optional[float]:
    if not is_number(tok):
        return None
    try:
        return float(tok)
    except ValueError:
        return None


def parse_facility_update(tokens: list[str], lexicon: Lexicon) -> FacilityUpdate:
    code = None
    beds = None
    loc = None
    n = len(tokens)
    i = 0
    while i < n:
        m = lexicon.match_at(tokens, i)
        if m is None:
            i += 1
            continue
        target, width = m
        j = i + width
        if target is Marker.FAC and j < n and code is None:
            code = tokens[j].upper()
            j += 1
        elif target is Marker.BEDS and beds is None:
            if j < n and as_int(tokens[j]) is not None:
                beds = int(tokens[j])
                j += 1
            elif i > 0 and as_int(tokens[i - 1]) is not None:
                beds = int(tokens[i - 1])
        elif target is Marker.LOC and j + 1 < n and loc is None:
            lat, lon = _as_coord(tokens[j]), _as_coord(tokens[j + 1])
            if lat is not None and lon is not None and -90 <= lat <= 90 and -180 <= lon < 180:
                loc = (lat, lon)
                j += 2
        i = j
    if beds is None and loc is None:
        raise BadUpdate("no bed count or location in update")
    return FacilityUpdate(code, beds, loc)


def parse_message(body: str, lexicon: Lexicon) -> ParsedMessage:
    """Full parse. Payload errors demote nothing; they propagate to the caller."""
    tokens = normalize(body)
    intent = classify_intent(tokens, lexicon)
    if intent is Intent.FEEDBACK:
        return ParsedMessage(intent, parse_feedback(tokens), tokens)
    if intent is Intent.FACILITY_UPDATE:
        return ParsedMessage(intent, parse_facility_update(tokens, lexicon), tokens)
    if intent is Intent.SYMPTOM_REPORT:
        return ParsedMessage(intent, parse_symptom_report(tokens, lexicon), tokens)
    return ParsedMessage(Intent.UNKNOWN, None, tokens)
