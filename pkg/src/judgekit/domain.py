"""Core domain types shared by every pipeline stage.

All types here are immutable value objects, validated at construction, so
downstream code (prompt building, parsing, scoring, orchestration) can rely
on the invariants without re-checking. Serialization lives in dataset_io.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

MIN_CANDIDATES = 2
MAX_CANDIDATES = 6

_LETTERS = "ABCDEF"


class DomainError(ValueError):
    """A domain invariant was violated."""


def label_of(index: int, m: int) -> str:
    """Map a candidate index to its choice letter: 0 -> "A", 1 -> "B", ...

    Raises DomainError when the index is outside 0..m-1 or m is outside
    the supported candidate-set size.
    """
    if not MIN_CANDIDATES <= m <= MAX_CANDIDATES:
        raise DomainError(f"candidate count m={m} outside {MIN_CANDIDATES}..{MAX_CANDIDATES}")
    if not 0 <= index < m:
        raise DomainError(f"label index {index} out of range for m={m}")
    return _LETTERS[index]


def index_of(letter: str, m: int) -> int:
    """Inverse of label_of: choice letter -> candidate index."""
    if not MIN_CANDIDATES <= m <= MAX_CANDIDATES:
        raise DomainError(f"candidate count m={m} outside {MIN_CANDIDATES}..{MAX_CANDIDATES}")
    idx = _LETTERS.find(letter.upper())
    if idx < 0 or idx >= m:
        raise DomainError(f"letter {letter!r} is not a valid label for m={m}")
    return idx


class EvaluationDimension(enum.Enum):
    """The four evaluation dimensions, in canonical order."""

    HALLUCINATION = "Hallucination"
    COMPLETENESS = "Completeness"
    COHERENCE = "Coherence"
    SEMANTIC_CONSISTENCY = "Semantic Consistency"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


_DIMENSION_ORDER = {d: i for i, d in enumerate(EvaluationDimension)}


@dataclass(frozen=True)
class HybridAspect:
    """A non-empty set of evaluation dimensions driving one judge prompt.

    The canonical name joins dimension names with " + " in the order given,
    e.g. "Hallucination + Completeness".
    """

    dimensions: tuple[EvaluationDimension, ...]

    def __post_init__(self) -> None:
        if not self.dimensions:
            raise DomainError("hybrid aspect needs at least one dimension")
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        if len(set(self.dimensions)) != len(self.dimensions):
            raise DomainError(f"duplicate dimensions in aspect: {self.dimensions}")

    @property
    def name(self) -> str:
        return " + ".join(d.value for d in self.dimensions)

    @classmethod
    def from_name(cls, name: str) -> "HybridAspect":
        by_value = {d.value: d for d in EvaluationDimension}
        dims = []
        for part in name.split("+"):
            part = part.strip()
            if part not in by_value:
                raise DomainError(f"unknown evaluation dimension {part!r}")
            dims.append(by_value[part])
        return cls(tuple(dims))


ALL_DIMENSIONS_ASPECT = HybridAspect(tuple(EvaluationDimension))


@dataclass(frozen=True)
class Query:
    """A single question with an opaque id and a source-dataset tag."""

    id: str
    text: str
    dataset: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DomainError("query id must be non-empty")
        if not self.text.strip():
            raise DomainError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class GroundTruth:
    """Reference answers for a query.

    aspect_sets carries short-answer sets for String-EM style datasets:
    each inner tuple is one gold set, satisfied by any of its members.
    """

    answers: tuple[str, ...]
    aspect_sets: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.answers:
            raise DomainError("ground truth needs at least one answer")
        if any(not a for a in self.answers):
            raise DomainError("ground-truth answers must be non-empty")
        if self.aspect_sets is not None:
            object.__setattr__(
                self, "aspect_sets", tuple(tuple(s) for s in self.aspect_sets)
            )
            if any(not s or any(not member for member in s) for s in self.aspect_sets):
                raise DomainError("each aspect set needs at least one non-empty member")


@dataclass(frozen=True)
class Origin:
    """Provenance of one candidate response."""

    model: str
    temperature: float
    with_docs: bool = False


@dataclass(frozen=True)
class CandidateResponse:
    """One candidate answer, labeled by its position in the set."""

    label_index: int
    text: str
    origin: Origin

    def __post_init__(self) -> None:
        if self.label_index < 0:
            raise DomainError("label_index must be non-negative")


def validate_candidates(candidates: tuple[CandidateResponse, ...]) -> None:
    m = len(candidates)
    if not MIN_CANDIDATES <= m <= MAX_CANDIDATES:
        raise DomainError(
            f"response set has {m} candidates; need {MIN_CANDIDATES}..{MAX_CANDIDATES}"
        )
    indices = [c.label_index for c in candidates]
    if indices != list(range(m)):
        raise DomainError(f"label indices must be exactly 0..{m - 1} in order, got {indices}")


@dataclass(frozen=True)
class ResponseSet:
    """An ordered set of 2..6 candidate responses, labeled 0..m-1.

    Duplicate candidate texts are allowed; sampling can legitimately
    collide and each entry stays a distinct choice.
    """

    candidates: tuple[CandidateResponse, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        validate_candidates(self.candidates)

    @property
    def m(self) -> int:
        return len(self.candidates)


def validate_response_set(response_set: ResponseSet) -> ResponseSet:
    """Re-check all ResponseSet invariants; returns the set unchanged when valid."""
    validate_candidates(response_set.candidates)
    return response_set


@dataclass(frozen=True)
class Judgment:
    """A parsed judge output for one aspect: chain-of-thought plus best/worst picks."""

    aspect: HybridAspect
    cot: str
    best: int
    worst: int
    raw: str

    def __post_init__(self) -> None:
        if self.best == self.worst:
            raise DomainError("judgment best and worst must differ")
        for value in (self.best, self.worst):
            if not 0 <= value < MAX_CANDIDATES:
                raise DomainError(f"selection index {value} outside 0..{MAX_CANDIDATES - 1}")


@dataclass(frozen=True)
class JudgmentSet:
    """The valid judgments collected for one task, in aspect order."""

    judgments: tuple[Judgment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "judgments", tuple(self.judgments))

    @property
    def k_effective(self) -> int:
        return len(self.judgments)


@dataclass(frozen=True)
class RetrievedDoc:
    """One retrieved passage with its source id."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise DomainError("retrieved document text must be non-empty")


@dataclass(frozen=True)
class RetrievalRecord:
    """Top-n retrieved documents for one query, in retrieval order."""

    query_id: str
    documents: tuple[RetrievedDoc, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "documents", tuple(self.documents))
        if not self.documents:
            raise DomainError(f"retrieval record for {self.query_id!r} has no documents")

    @property
    def n(self) -> int:
        return len(self.documents)


@dataclass(frozen=True)
class JudgeTask:
    """One unit of judging work: a query, its ground truth, and the candidate set."""

    query: Query
    gt: GroundTruth
    responses: ResponseSet
