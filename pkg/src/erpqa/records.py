"""QA record type, the category -> reward-strategy routing table, JSONL I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import FormatError

CATEGORIES = ("view_source", "distance", "environment", "spatial", "attribute")
QUESTION_TYPES = ("true_false", "multiple_choice", "open_ended")
STRATEGIES = ("yes_no", "mcq", "distance", "spatial", "counting")
STRUCTURED_TYPES = frozenset({"true_false", "multiple_choice"})

ROUTING: dict[str, frozenset[str]] = {
    "view_source": frozenset({"yes_no", "mcq", "counting"}),
    "distance": frozenset({"distance", "yes_no", "mcq"}),
    "environment": frozenset({"yes_no", "mcq"}),
    "spatial": frozenset({"spatial", "yes_no"}),
    "attribute": frozenset({"mcq", "yes_no"}),
}

# which strategies a question type may carry
TYPE_STRATEGIES: dict[str, frozenset[str]] = {
    "true_false": frozenset({"yes_no"}),
    "multiple_choice": frozenset({"mcq"}),
    "open_ended": frozenset({"distance", "spatial", "counting"}),
}


@dataclass
class QaRecord:
    id: str
    scene_id: str
    category: str
    question_type: str
    reward_strategy: str
    question: str
    answer: str
    options: list[str] | None = None
    grounding: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"{self.id}: unknown category {self.category!r}")
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"{self.id}: unknown question_type {self.question_type!r}")
        if self.reward_strategy not in ROUTING[self.category]:
            raise ValueError(f"{self.id}: strategy {self.reward_strategy!r} not routable from {self.category!r}")
        if self.reward_strategy not in TYPE_STRATEGIES[self.question_type]:
            raise ValueError(f"{self.id}: strategy {self.reward_strategy!r} invalid for {self.question_type!r}")
        if self.question_type == "multiple_choice":
            if not self.options or self.answer not in self.options:
                raise ValueError(f"{self.id}: MCQ answer must be one of its options")
        if self.question_type == "true_false" and self.answer not in ("Yes", "No"):
            raise ValueError(f"{self.id}: true/false answer must be Yes or No")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QaRecord":
        keys = ("id", "scene_id", "category", "question_type", "reward_strategy", "question", "answer")
        missing = [k for k in keys if k not in d]
        if missing:
            raise KeyError(f"missing keys {missing}")
        return cls(**{k: d[k] for k in keys}, options=d.get("options"), grounding=d.get("grounding") or {})


def dumps_record(rec: QaRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False)


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)``; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def read_records(path) -> list[QaRecord]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            rec = QaRecord.from_dict(obj)
            rec.validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad record ({exc})") from exc
        out.append(rec)
    return out


def write_records(path, records: Iterable[QaRecord]) -> int:
    return write_jsonl(Path(path), (r.to_dict() for r in records))
