"""Routed, ground-truth-anchored rewards for tagged model responses.

A response earns a format reward for the ``<Reasoning>..</Reasoning>
<Answer>..</Answer>`` layout and an accuracy reward from one of five
strategies selected by the record's ``reward_strategy`` tag. The total is
``W_ACC * r_acc + W_FMT * r_fmt``.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from decimal import Decimal
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Iterable, NamedTuple

from .errors import ConfigurationError, RoutingError
from .records import QaRecord

W_ACC = 0.9
W_FMT = 0.1

# -- response parsing ---------------------------------------------------------

_TAGS = ("<Reasoning>", "</Reasoning>", "<Answer>", "</Answer>")
_STRICT_RE = re.compile(r"\A\s*<Reasoning>(.*?)</Reasoning>\s*<Answer>(.*?)</Answer>\s*\Z", re.DOTALL)
_ANSWER_RE = re.compile(r"<Answer>(.*?)</Answer>", re.DOTALL)


@dataclass(frozen=True)
class ParsedResponse:
    reasoning: str
    answer: str
    format_ok: bool


def parse_response(raw: str) -> ParsedResponse:
    """Split a response into reasoning and answer; never raises."""
    raw = raw if isinstance(raw, str) else str(raw)
    m = _STRICT_RE.match(raw)
    if m and not any(t in m.group(1) or t in m.group(2) for t in _TAGS):
        return ParsedResponse(m.group(1).strip(), m.group(2).strip(), True)
    m = _ANSWER_RE.search(raw)
    if m:
        return ParsedResponse("", m.group(1).strip(), False)
    return ParsedResponse("", raw.strip(), False)


# -- strategy A: yes/no -------------------------------------------------------

def _norm_yes_no(gt: str) -> str:
    g = str(gt).strip().casefold()
    if g not in ("yes", "no"):
        raise ConfigurationError(f"yes/no ground truth must be Yes or No, got {gt!r}")
    return g


def reward_yes_no(answer: str, gt: str) -> float:
    return 1.0 if answer.strip().casefold() == _norm_yes_no(gt) else 0.0


# -- strategy B: multiple choice ----------------------------------------------

LONG_ANSWER_TOKENS = 4
SUBJECT_STOP_WORDS = frozenset({
    "is", "are", "was", "were", "has", "have", "stands", "sits", "lies", "appears",
    "of", "in", "on", "at", "with", "near", "behind", "beside", "under", "over", "to", "from",
})
_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_RE = re.compile(r"[^\w\s]|_")


def extract_subject(answer: str) -> str:
    """Leading noun phrase of a long answer: the words before the first verb or preposition."""
    tokens = answer.split()
    if len(tokens) <= LONG_ANSWER_TOKENS:
        return answer
    subject = []
    for tok in tokens:
        if _PUNCT_RE.sub("", tok).casefold() in SUBJECT_STOP_WORDS:
            break
        subject.append(tok)
    return " ".join(subject)


def normalize_option(text: str) -> str:
    words = _PUNCT_RE.sub(" ", text.casefold()).split()
    return "".join(w for w in words if w not in _ARTICLES)


def mcq_match(answer: str, gt: str) -> bool:
    return normalize_option(extract_subject(answer)) == normalize_option(gt)


def reward_mcq(answer: str, gt: str) -> float:
    return 1.0 if mcq_match(answer, gt) else 0.0


# -- strategy C: distance -----------------------------------------------------

UNIT_TO_METERS: dict[str, Decimal] = {
    "mm": Decimal("0.001"),
    "cm": Decimal("0.01"),
    "m": Decimal("1"),
    "km": Decimal("1000"),
    "in": Decimal("0.0254"),
    "ft": Decimal("0.3048"),
    "yd": Decimal("0.9144"),
    "mi": Decimal("1609.344"),
}
_UNIT_ALIASES = [
    (r"millimet(?:er|re)s?", "mm"), (r"mm", "mm"),
    (r"centimet(?:er|re)s?", "cm"), (r"cm", "cm"),
    (r"kilomet(?:er|re)s?", "km"), (r"km", "km"),
    (r"miles?", "mi"), (r"mi", "mi"),
    (r"met(?:er|re)s?", "m"), (r"m", "m"),
    (r"inch(?:es)?", "in"), (r"in(?!\s+[a-z])", "in"),  # "3 in front" is not inches
    (r"feet|foot", "ft"), (r"ft", "ft"),
    (r"yards?", "yd"), (r"yd", "yd"),
]
_UNIT_RE = re.compile(r"\s*(?:" + "|".join(f"(?P<u{i}>{p})" for i, (p, _) in enumerate(_UNIT_ALIASES)) + r")\b")
_NUMBER_RE = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?|\.\d+)")
_THOUSANDS_RE = re.compile(r"\d{1,3}(?:,\d{3})+(?!\d)")
_SCI_RE = re.compile(r"[eE][+-]?\d")

TIER_FULL = Fraction(1, 10)
TIER_HALF = Fraction(1, 5)


class Quantity(NamedTuple):
    meters: Fraction
    number: str
    unit: str  # canonical unit, "m" when none was given
    explicit_unit: bool
    n_numbers: int


def parse_quantity(text: str) -> Quantity | None:
    """First number in ``text`` with an optional unit, converted exactly to metres.

    Thousands separators and scientific notation are rejected as ambiguous.
    """
    t = text.casefold()
    numbers = list(_NUMBER_RE.finditer(t))
    if not numbers:
        return None
    m = numbers[0]
    if _THOUSANDS_RE.match(t, m.start()) or _SCI_RE.match(t, m.end()):
        return None
    unit, explicit = "m", False
    um = _UNIT_RE.match(t, m.end())
    if um:
        unit = next(_UNIT_ALIASES[int(k[1:])][1] for k, v in um.groupdict().items() if v is not None)
        explicit = True
    meters = Fraction(Decimal(m.group(1))) * Fraction(UNIT_TO_METERS[unit])
    return Quantity(meters, m.group(1), unit, explicit, len(numbers))


def exact(x) -> Fraction:
    """Exact rational value; floats are read through their shortest decimal repr."""
    if isinstance(x, float):
        return Fraction(Decimal(repr(x)))
    return Fraction(x)


def relative_error(pred: Fraction, gt) -> Fraction:
    g = exact(gt)
    return abs(pred - g) / g


def _distance(answer: str, gt_meters) -> tuple[float, str]:
    if not (isinstance(gt_meters, (int, float, Fraction, Decimal)) and gt_meters > 0):
        raise ConfigurationError(f"distance ground truth must be > 0, got {gt_meters!r}")
    q = parse_quantity(answer)
    if q is None:
        return 0.0, "unparsable"
    e = relative_error(q.meters, gt_meters)
    reward = 1.0 if e <= TIER_FULL else 0.5 if e <= TIER_HALF else 0.0
    detail = f"pred={float(q.meters):g}m ({q.number} {q.unit}) gt={float(gt_meters):g}m rel_err={float(e):.4f}"
    if q.n_numbers > 1:
        detail += "; multiple numbers, first used"
    return reward, detail


def reward_distance(answer: str, gt_meters: float) -> float:
    return _distance(answer, gt_meters)[0]


# -- strategy D: spatial ------------------------------------------------------

AXIS_OF = {"front": "depth", "back": "depth", "left": "lateral", "right": "lateral", "up": "vertical", "down": "vertical"}
OPPOSITE = {"front": "back", "back": "front", "left": "right", "right": "left", "up": "down", "down": "up"}


class SpatialLexicon:
    """Closed keyword lexicon mapping phrases to (axis, polarity)."""

    def __init__(self, axes: dict[str, dict[str, list[str]]], answer_phrases: dict[str, str] | None = None):
        self.phrases: dict[str, tuple[str, str]] = {}
        for axis, polarities in axes.items():
            for polarity, words in polarities.items():
                for w in words:
                    key = " ".join(w.casefold().split())
                    prev = self.phrases.get(key)
                    if prev is not None and prev != (axis, polarity):
                        raise ConfigurationError(f"phrase {w!r} assigned to both {prev} and {(axis, polarity)}")
                    self.phrases[key] = (axis, polarity)
        self.answer_phrases = dict(answer_phrases or {})
        alternation = "|".join(r"\s+".join(re.escape(w) for w in p.split())
                               for p in sorted(self.phrases, key=len, reverse=True))
        self._re = re.compile(r"\b(?:" + alternation + r")\b")

    @classmethod
    def from_json(cls, text: str) -> "SpatialLexicon":
        data = json.loads(text)
        return cls(data["axes"], data.get("answer_phrases"))

    def scan(self, text: str) -> dict[str, set[str]]:
        """Per-axis set of polarities asserted in ``text`` (longest match wins)."""
        found: dict[str, set[str]] = {}
        for m in self._re.finditer(text.casefold()):
            axis, polarity = self.phrases[" ".join(m.group(0).split())]
            found.setdefault(axis, set()).add(polarity)
        return found


@lru_cache(maxsize=1)
def default_lexicon() -> SpatialLexicon:
    text = resources.files("erpqa").joinpath("data/spatial_lexicon.json").read_text(encoding="utf-8")
    return SpatialLexicon.from_json(text)


def spatial_axes(answer: str, gt: str, lex: SpatialLexicon | None = None):
    """Return (gt axes, answer axes, correct count, opposite axis count)."""
    lex = lex or default_lexicon()
    want = lex.scan(gt)
    if not want:
        raise ConfigurationError(f"spatial ground truth has no direction keyword: {gt!r}")
    got = lex.scan(answer)
    correct = sum(1 for axis, pols in want.items() if got.get(axis) == pols)
    opposite = sum(1 for axis, pols in want.items()
                   if any(OPPOSITE[p] in got.get(axis, ()) for p in pols))
    return want, got, correct, opposite


def _spatial(answer: str, gt: str, lex: SpatialLexicon | None) -> tuple[float, str]:
    want, got, correct, _ = spatial_axes(answer, gt, lex)
    detail = f"{correct}/{len(want)} axes; gt={_fmt_axes(want)} answer={_fmt_axes(got)}"
    return correct / len(want), detail


def _fmt_axes(axes: dict[str, set[str]]) -> str:
    return ",".join(f"{a}:{'+'.join(sorted(p))}" for a, p in sorted(axes.items())) or "-"


def reward_spatial(answer: str, gt: str, lex: SpatialLexicon | None = None) -> float:
    return _spatial(answer, gt, lex)[0]


# -- strategy E: counting -----------------------------------------------------

NUMBER_WORDS = {w: i for i, w in enumerate(
    "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
    "fifteen sixteen seventeen eighteen nineteen twenty".split())}
_COUNT_RE = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?)(?![\w.])|\b(" + "|".join(NUMBER_WORDS) + r")\b")


def parse_count(text: str) -> int | None:
    """First integer in ``text``, written as digits or as a word from zero to twenty."""
    m = _COUNT_RE.search(text.casefold())
    if m is None:
        return None
    if m.group(2):
        return NUMBER_WORDS[m.group(2)]
    d = Decimal(m.group(1))
    return int(d) if d == d.to_integral_value() else None


def _counting(answer: str, gt: int) -> tuple[float, str]:
    if isinstance(gt, bool) or not isinstance(gt, int) or gt < 0:
        raise ConfigurationError(f"counting ground truth must be a non-negative integer, got {gt!r}")
    n = parse_count(answer)
    if n is None:
        return 0.0, "unparsable"
    return (1.0 if n == gt else 0.0), f"pred={n} gt={gt}"


def reward_counting(answer: str, gt: int) -> float:
    return _counting(answer, gt)[0]


# -- routing and total --------------------------------------------------------

@dataclass(frozen=True)
class RewardBreakdown:
    r_fmt: float
    r_acc: float
    strategy: str
    total: float
    detail: str
    answer: str = ""
    format_ok: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def ground_truth(record: QaRecord):
    """Ground truth in the form the record's strategy expects."""
    s = record.reward_strategy
    g = record.grounding or {}
    if s in ("yes_no", "mcq", "spatial"):
        return record.answer
    if s == "distance":
        if "distance_m" in g:
            return float(g["distance_m"])
        q = parse_quantity(record.answer)
        if q is None:
            raise ConfigurationError(f"{record.id}: no distance in ground-truth answer {record.answer!r}")
        return q.meters
    if s == "counting":
        if "count" in g:
            return int(g["count"])
        n = parse_count(record.answer)
        if n is None:
            raise ConfigurationError(f"{record.id}: no count in ground-truth answer {record.answer!r}")
        return n
    raise RoutingError(f"unknown reward strategy {s!r}")


def accuracy_reward(answer: str, strategy: str, gt, lex: SpatialLexicon | None = None) -> tuple[float, str]:
    if strategy == "yes_no":
        r = reward_yes_no(answer, gt)
        return r, f"answer={answer.strip()!r} gt={gt!r}"
    if strategy == "mcq":
        r = reward_mcq(answer, gt)
        return r, f"subject={normalize_option(extract_subject(answer))!r} gt={normalize_option(gt)!r}"
    if strategy == "distance":
        return _distance(answer, gt)
    if strategy == "spatial":
        return _spatial(answer, gt, lex)
    if strategy == "counting":
        return _counting(answer, gt)
    raise RoutingError(f"unknown reward strategy {strategy!r}")


def combine(r_acc: float, r_fmt: float) -> float:
    return W_ACC * r_acc + W_FMT * r_fmt


def total_reward(raw: str, record: QaRecord, lex: SpatialLexicon | None = None) -> RewardBreakdown:
    if record.reward_strategy not in ("yes_no", "mcq", "distance", "spatial", "counting"):
        raise RoutingError(f"{record.id}: unknown reward strategy {record.reward_strategy!r}")
    parsed = parse_response(raw)
    r_fmt = 1.0 if parsed.format_ok else 0.0
    r_acc, detail = accuracy_reward(parsed.answer, record.reward_strategy, ground_truth(record), lex)
    return RewardBreakdown(r_fmt, r_acc, record.reward_strategy, combine(r_acc, r_fmt), detail,
                           parsed.answer, parsed.format_ok)


def wrap_answer(answer: str, reasoning: str = "Derived from the panorama.") -> str:
    return f"<Reasoning>{reasoning}</Reasoning>\n<Answer>{answer}</Answer>"


def grade_responses(records: dict[str, QaRecord], responses: Iterable[dict],
                    lex: SpatialLexicon | None = None) -> list[dict]:
    """Grade ``{record_id, response_text}`` rows; raises KeyError listing unknown ids."""
    responses = list(responses)
    unknown = sorted({r["record_id"] for r in responses if r["record_id"] not in records})
    if unknown:
        raise KeyError(unknown)
    rows = []
    for r in responses:
        b = total_reward(r.get("response_text", ""), records[r["record_id"]], lex)
        rows.append({"record_id": r["record_id"], **b.to_dict()})
    return rows
