"""Deterministic 0-10 judge rubric and the text protocol for an external judge model."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import JudgeParseError, RoutingError
from .records import QaRecord
from .rewards import (
    SpatialLexicon,
    TIER_FULL,
    TIER_HALF,
    mcq_match,
    parse_count,
    parse_quantity,
    relative_error,
    spatial_axes,
)

JUDGE_SYSTEM_PROMPT = """You are an evaluator. Compare answers and give a score 0-10.

Rules:
- YES/NO: yes/true/1 = YES, no/false/0 = NO. Same meaning -> 10, different -> 0.
- Multiple choice: output a single option only. Ignore articles/case/punctuation. Match -> 10, else -> 0.
- Numeric (distance, e.g. "About X meters"): extract numbers. If no valid number -> 0.
  * <=10% relative error -> 10
  * <=20% -> 5-9
  * >20% -> 0
- Numeric (counting, e.g. "3 different views"): use only the integer.
  * Exact match -> 10
  * Otherwise -> 0
- Spatial: compare direction words (left/right, front/behind, above/below). If any axis is opposite (e.g. left vs right), score -> 0. Otherwise, let N = axes used in reference, C = correctly matched axes; score ≈ 10 * C / N.
- Open-ended: judge semantic match.
  * All key info correct -> 10
  * Most info correct -> 8-9
  * Partially correct -> 6-7
  * Mostly wrong -> 0-5

IMPORTANT: End response with "Score: X" where X is 0-10."""

JUDGE_USER_TEMPLATE = (
    "Q: {question}\n"
    "Type: {question_type}\n"
    "Reference: {expected_answer}\n"
    "Answer: {model_answer}\n"
    "\n"
    "Give score 0-10. Must end with \"Score: X\":"
)

# rubric type names accepted by judge(); strategy names alias onto them
JUDGE_TYPES = ("yes_no", "mcq", "distance", "counting", "spatial", "open_ended")
_ALIASES = {"true_false": "yes_no", "multiple_choice": "mcq"}

_YES = frozenset({"yes", "true", "1"})
_NO = frozenset({"no", "false", "0"})
_SCORE_RE = re.compile(r"Score:\s*(-?\d+(?:\.\d+)?)")
_WORD_RE = re.compile(r"\w+")


@dataclass(frozen=True)
class JudgeScore:
    value: int
    rationale: str

    def __post_init__(self):
        if not 0 <= self.value <= 10:
            raise ValueError(f"judge score must be in [0, 10], got {self.value}")


@dataclass(frozen=True)
class JudgeRequest:
    question: str
    question_type: str
    reference: str
    answer: str

    def __post_init__(self):
        empty = [k for k in ("question", "question_type", "reference", "answer") if not getattr(self, k).strip()]
        if empty:
            raise ValueError(f"judge request fields must be nonempty: {empty}")

    @classmethod
    def for_record(cls, record: QaRecord, answer: str) -> "JudgeRequest":
        # the rubric branches on the grading strategy rather than the surface type
        qtype = "open_ended" if record.question_type == "open_ended" and record.reward_strategy not in (
            "distance", "spatial", "counting") else record.reward_strategy
        return cls(record.question, qtype, record.answer, answer)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def yes_no_polarity(text: str) -> bool | None:
    t = text.strip().casefold().rstrip(".!")
    if t in _YES:
        return True
    if t in _NO:
        return False
    return None


def distance_score(e: Fraction) -> int:
    """Rubric score for relative error ``e``; the 5-9 band is a linear map over (0.10, 0.20]."""
    if e <= TIER_FULL:
        return 10
    if e <= TIER_HALF:
        return min(9, max(5, round_half_up(9 - 40 * (e - TIER_FULL))))
    return 0


def token_f1(answer: str, reference: str) -> float:
    a = set(_WORD_RE.findall(answer.casefold()))
    r = set(_WORD_RE.findall(reference.casefold()))
    if not a or not r:
        return 0.0
    common = len(a & r)
    if common == 0:
        return 0.0
    p, q = common / len(a), common / len(r)
    return 2 * p * q / (p + q)


def judge(req: JudgeRequest, lex: SpatialLexicon | None = None) -> JudgeScore:
    qtype = _ALIASES.get(req.question_type, req.question_type)
    if qtype == "yes_no":
        want, got = yes_no_polarity(req.reference), yes_no_polarity(req.answer)
        ok = want is not None and got is not None and want == got
        return JudgeScore(10 if ok else 0, f"polarity answer={got} reference={want}")
    if qtype == "mcq":
        ok = mcq_match(req.answer, req.reference)
        return JudgeScore(10 if ok else 0, "option match" if ok else "option mismatch")
    if qtype == "distance":
        gt = parse_quantity(req.reference)
        pred = parse_quantity(req.answer)
        if gt is None or gt.meters <= 0:
            raise RoutingError(f"distance reference has no positive quantity: {req.reference!r}")
        if pred is None:
            return JudgeScore(0, "no valid number")
        e = relative_error(pred.meters, gt.meters)
        return JudgeScore(distance_score(e), f"relative error {float(e):.4f}")
    if qtype == "counting":
        want, got = parse_count(req.reference), parse_count(req.answer)
        ok = got is not None and got == want
        return JudgeScore(10 if ok else 0, f"count answer={got} reference={want}")
    if qtype == "spatial":
        want, _, correct, opposite = spatial_axes(req.answer, req.reference, lex)
        if opposite:
            return JudgeScore(0, f"{opposite} opposite axis")
        return JudgeScore(round_half_up(10 * correct / len(want)), f"{correct}/{len(want)} axes")
    if qtype == "open_ended":
        f1 = token_f1(req.answer, req.reference)
        return JudgeScore(round_half_up(10 * f1), f"approximate: token-set F1 {f1:.3f}, not a semantic judgment")
    raise RoutingError(f"unknown judge question type {req.question_type!r}")


def build_judge_prompt(req: JudgeRequest) -> tuple[str, str]:
    user = JUDGE_USER_TEMPLATE.format(question=req.question, question_type=req.question_type,
                                      expected_answer=req.reference, model_answer=req.answer)
    return JUDGE_SYSTEM_PROMPT, user


def parse_judge_reply(text: str) -> JudgeScore:
    """Score from the last ``Score: X`` in a judge reply; out-of-range values are rejected."""
    matches = list(_SCORE_RE.finditer(text))
    tail = text[-200:]
    if not matches:
        raise JudgeParseError("reply has no 'Score: X'", tail)
    raw = matches[-1].group(1)
    if "." in raw and float(raw) != int(float(raw)):
        raise JudgeParseError(f"score {raw} is not an integer", tail)
    value = int(float(raw))
    if not 0 <= value <= 10:
        raise JudgeParseError(f"score {value} outside 0-10", tail)
    return JudgeScore(value, "external judge")
