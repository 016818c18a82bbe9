"""Parsing of raw judge output into structured judgments.

The accepted grammar follows the strict result format requested by the judge
prompt:

    COT:{<analysis>}. Answer : Best answer:<L>. Worst answer :<L>

Marker matching is case-insensitive and tolerant of optional whitespace
around every colon (the requested format itself spaces its colons
inconsistently). Parsing is total and pure: any byte string yields either a
Judgment or a ParseFailure, never an exception.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Union

from .domain import (
    MAX_CANDIDATES,
    MIN_CANDIDATES,
    DomainError,
    HybridAspect,
    Judgment,
    label_of,
)


class FailureReason(enum.Enum):
    MISSING_COT_MARKER = "MissingCotMarker"
    MISSING_BEST = "MissingBest"
    MISSING_WORST = "MissingWorst"
    INVALID_LABEL = "InvalidLabel"
    LABEL_OUT_OF_RANGE = "LabelOutOfRange"
    DEGENERATE_SELECTION = "DegenerateSelection"


@dataclass(frozen=True)
class ParseFailure:
    """Why a raw judge output could not be parsed.

    The reason identifies the first violated rule in document order:
    COT marker, then the best selection, then the worst selection.
    """

    reason: FailureReason
    raw: str


ParseOutcome = Union[Judgment, ParseFailure]

_COT_RE = re.compile(r"(?i)\bCOT\s*:")
_BEST_RE = re.compile(r"(?i)\bbest\s+answer\s*:")
_WORST_RE = re.compile(r"(?i)\bworst\s+answer\s*:")
# Where the chain-of-thought ends: the standalone "Answer :" separator, or the
# best/worst markers directly when the separator was omitted.
_COT_END_RE = re.compile(r"(?i)\banswer\s*:|\bbest\s+answer\b|\bworst\s+answer\b")
_LABEL_RE = re.compile(r"\s*\{?\s*([A-Za-z])")


def _extract_label(raw: str, pos: int, m: int) -> tuple[int | None, FailureReason | None]:
    match = _LABEL_RE.match(raw, pos)
    if match is None:
        return None, FailureReason.INVALID_LABEL
    letter = match.group(1).upper()
    index = "ABCDEF".find(letter)
    if index < 0:
        return None, FailureReason.INVALID_LABEL
    if index >= m:
        return None, FailureReason.LABEL_OUT_OF_RANGE
    return index, None


def _extract_cot(raw: str, start: int) -> str:
    end_match = _COT_END_RE.search(raw, start)
    segment = raw[start : end_match.start() if end_match else len(raw)].strip()
    if segment.startswith("{"):
        inner = segment[1:]
        if inner.endswith("}."):
            inner = inner[:-2]
        elif inner.endswith("}"):
            inner = inner[:-1]
        return inner.strip()
    return segment


def parse_judgment(raw: str, m: int, aspect: HybridAspect) -> ParseOutcome:
    """Parse one raw judge output against an m-candidate choice set.

    An empty chain-of-thought is not an error; MissingCotMarker fires only
    when the COT marker is absent entirely. When a marker appears more than
    once, the first occurrence is authoritative.
    """
    if not MIN_CANDIDATES <= m <= MAX_CANDIDATES:
        raise DomainError(f"candidate count m={m} outside {MIN_CANDIDATES}..{MAX_CANDIDATES}")

    cot_match = _COT_RE.search(raw)
    if cot_match is None:
        return ParseFailure(FailureReason.MISSING_COT_MARKER, raw)

    best_match = _BEST_RE.search(raw)
    if best_match is None:
        return ParseFailure(FailureReason.MISSING_BEST, raw)
    best, error = _extract_label(raw, best_match.end(), m)
    if error is not None:
        return ParseFailure(error, raw)

    worst_match = _WORST_RE.search(raw)
    if worst_match is None:
        return ParseFailure(FailureReason.MISSING_WORST, raw)
    worst, error = _extract_label(raw, worst_match.end(), m)
    if error is not None:
        return ParseFailure(error, raw)

    if best == worst:
        return ParseFailure(FailureReason.DEGENERATE_SELECTION, raw)

    cot = _extract_cot(raw, cot_match.end())
    return Judgment(aspect=aspect, cot=cot, best=best, worst=worst, raw=raw)


def format_judgment(judgment: Judgment, m: int | None = None) -> str:
    """Serialize a judgment into the canonical result format.

    Re-parsing the output recovers the same cot/best/worst, provided the
    chain-of-thought does not itself contain an answer marker.
    """
    if m is None:
        m = max(judgment.best, judgment.worst) + 1
        m = max(m, MIN_CANDIDATES)
    return (
        "COT:{" + judgment.cot + "}. "
        f"Answer : Best answer:{label_of(judgment.best, m)}. "
        f"Worst answer :{label_of(judgment.worst, m)}"
    )


_FIELD_HINTS = {
    FailureReason.MISSING_COT_MARKER: 'the "COT:" marker',
    FailureReason.MISSING_BEST: 'the "Best answer" field',
    FailureReason.MISSING_WORST: 'the "Worst answer" field',
    FailureReason.INVALID_LABEL: "a valid choice letter",
    FailureReason.LABEL_OUT_OF_RANGE: "a choice letter within the listed choices",
    FailureReason.DEGENERATE_SELECTION: "two different choices for best and worst",
}


def repair_prompt(original_prompt: str, failure: ParseFailure) -> str:
    """A follow-up prompt restating the task after a malformed judgment.

    Names the field the previous output was missing and repeats the original
    task verbatim so the re-ask stays self-contained.
    """
    hint = _FIELD_HINTS[failure.reason]
    return (
        f"Your previous result was not in the required format: it was missing {hint}. "
        "Answer again, strictly following the required result format.\n\n"
        + original_prompt
    )
