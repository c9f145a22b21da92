"""Model-facing prompt text: the shared base prompt and per-question-type rule suffixes."""

from __future__ import annotations

from .geometry import ErpDims
from .records import QaRecord

BASE_PROMPT = (
    "You are an expert in analyzing 360° panoramic (ERP) images ({width}x{height}). "
    "Analyze the image carefully and focus on the specific objects mentioned in bounding boxes.\n"
    "\n"
    "{question}\n"
    "\n"
    "Provide your reasoning based on the panoramic scene within <Reasoning> tags, "
    "then give your final answer within <Answer> tags."
)

TYPE_SUFFIX = {
    "true_false": (
        "This is a YES/NO question. Your <Answer> must be EXACTLY \"Yes\" or \"No\" "
        "(case-sensitive, no extra words).\n"
        "Example:\n"
        "<Reasoning>...</Reasoning>\n"
        "<Answer>Yes</Answer>"
    ),
    "multiple_choice": (
        "This is a MULTIPLE CHOICE question. Your <Answer> must be EXACTLY one of the provided options.\n"
        "Example:\n"
        "<Reasoning>...</Reasoning>\n"
        "<Answer>AbandonedCable</Answer>"
    ),
    "open_ended": (
        "This is an OPEN-ENDED question. Your <Answer> should be concise and direct (under 20 words).\n"
        "Example:\n"
        "<Reasoning>...</Reasoning>\n"
        "<Answer>The building is behind and to the right of and below the truck</Answer>"
    ),
}


def question_block(record: QaRecord) -> str:
    """Question text, with the option list appended for multiple-choice records."""
    if record.question_type == "multiple_choice" and record.options:
        return record.question + "\nOptions: " + ", ".join(record.options)
    return record.question


def build_prompt(record: QaRecord, dims: ErpDims) -> str:
    base = BASE_PROMPT.format(width=dims.width, height=dims.height, question=question_block(record))
    return base + "\n\n" + TYPE_SUFFIX[record.question_type]
