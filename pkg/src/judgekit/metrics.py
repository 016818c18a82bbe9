"""Deterministic baseline judges and agreement analytics.

The metric judges score candidates with ROUGE-L, containment accuracy, or
String-EM and select best/worst by score; the analytics side computes
pairwise judge agreement, agreement matrices, and consistency-score
histograms.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .domain import JudgeTask


class MetricKind(enum.Enum):
    ROUGE_L = "rouge_l"
    ACCURACY_CONTAINS = "accuracy"
    STRING_EM = "string_em"


_NON_WORD_RE = re.compile(r"[^\w\s]|_", re.UNICODE)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, map punctuation to spaces, split on whitespace."""
    return _NON_WORD_RE.sub(" ", text.lower()).split()


def _lcs_length(a: list[str], b: list[str]) -> int:
    # Classic O(len(a) * len(b)) dynamic program over token lists.
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0] * (len(b) + 1)
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[len(b)]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 over the longest common subsequence of normalized tokens.

    F1 = 2PR / (P + R) with P = LCS/|candidate| and R = LCS/|reference|;
    0.0 when either side is empty or the LCS is empty.
    """
    candidate_tokens = normalize_tokens(candidate)
    reference_tokens = normalize_tokens(reference)
    if not candidate_tokens or not reference_tokens:
        return 0.0
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate_tokens)
    recall = lcs / len(reference_tokens)
    return 2 * precision * recall / (precision + recall)


def _contains(response_tokens: str, gold: str) -> bool:
    gold_tokens = " ".join(normalize_tokens(gold))
    if not gold_tokens:
        return False
    return f" {gold_tokens} " in f" {response_tokens} "


def accuracy_contains(response: str, golds: list[str]) -> int:
    """1 iff any normalized gold occurs in the normalized response.

    Containment is checked on token boundaries: gold "(C)" matches the
    token "C" but not the "c" inside another word.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    normalized = " ".join(normalize_tokens(response))
    return int(any(_contains(normalized, gold) for gold in golds))


def string_em(response: str, aspect_sets: list[list[str]]) -> float:
    """Fraction of gold-answer sets with at least one member in the response."""
    if not aspect_sets:
        raise ValueError("aspect_sets must be non-empty")
    normalized = " ".join(normalize_tokens(response))
    hits = 0
    for members in aspect_sets:
        if not members:
            raise ValueError("aspect set has no members")
        if any(_contains(normalized, member) for member in members):
            hits += 1
    return hits / len(aspect_sets)


@dataclass(frozen=True)
class MetricJudgment:
    """Best/worst selection by a deterministic metric, with the raw scores.

    degenerate marks an all-tie scoring where the selection is forced by
    the tie-break; such queries are excluded from agreement statistics.
    """

    best: int
    worst: int
    scores: tuple[float, ...]
    degenerate: bool


def candidate_scores(task: JudgeTask, kind: MetricKind) -> list[float]:
    """Score every candidate in the task under one metric."""
    scores = []
    for candidate in task.responses.candidates:
        if kind is MetricKind.ROUGE_L:
            scores.append(rouge_l(candidate.text, task.gt.answers[0]))
        elif kind is MetricKind.ACCURACY_CONTAINS:
            scores.append(float(accuracy_contains(candidate.text, list(task.gt.answers))))
        else:
            aspect_sets = (
                [list(s) for s in task.gt.aspect_sets]
                if task.gt.aspect_sets
                else [[answer] for answer in task.gt.answers]
            )
            scores.append(string_em(candidate.text, aspect_sets))
    return scores


def metric_judge(task: JudgeTask, kind: MetricKind) -> MetricJudgment:
    """Select best (argmax) and worst (argmin) candidates; ties go to the lowest index."""
    scores = candidate_scores(task, kind)
    values = np.asarray(scores)
    best = int(np.argmax(values))
    worst = int(np.argmin(values))
    return MetricJudgment(
        best=best,
        worst=worst,
        scores=tuple(scores),
        degenerate=bool(np.all(values == values[0])),
    )


@dataclass(frozen=True)
class SelectionVector:
    """Per-query best-choice indices from one judge.

    degenerate_ids lists queries whose selection was a forced tie-break;
    they are dropped from agreement denominators.
    """

    judge_id: str
    entries: dict[str, int]
    degenerate_ids: frozenset[str] = frozenset()


def pairwise_agreement(a: SelectionVector, b: SelectionVector) -> float:
    """Fraction of comparable queries on which two judges pick the same best index."""
    if set(a.entries) != set(b.entries):
        only_a = sorted(set(a.entries) - set(b.entries))[:3]
        only_b = sorted(set(b.entries) - set(a.entries))[:3]
        raise ValueError(
            f"selection vectors cover different queries "
            f"(only in {a.judge_id}: {only_a}, only in {b.judge_id}: {only_b})"
        )
    excluded = a.degenerate_ids | b.degenerate_ids
    comparable = [qid for qid in a.entries if qid not in excluded]
    if not comparable:
        raise ValueError(
            f"no comparable queries between {a.judge_id} and {b.judge_id}"
        )
    matches = sum(1 for qid in comparable if a.entries[qid] == b.entries[qid])
    return matches / len(comparable)


def agreement_matrix(selections: list[SelectionVector]) -> list[list[float]]:
    """Symmetric judge-by-judge agreement matrix with a unit diagonal."""
    if len(selections) < 2:
        raise ValueError("agreement matrix needs at least 2 judges")
    n = len(selections)
    matrix = [[1.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            value = pairwise_agreement(selections[i], selections[j])
            matrix[i][j] = value
            matrix[j][i] = value
    return matrix


@dataclass(frozen=True)
class HistogramSpec:
    """Bin edges over [-1, 1] plus, once populated, counts and moments."""

    edges: tuple[float, ...] = field(
        default_factory=lambda: tuple(np.linspace(-1.0, 1.0, 21))
    )
    counts: tuple[int, ...] | None = None
    mean: float | None = None
    std: float | None = None


def consistency_histogram(scores: list[float], spec: HistogramSpec | None = None) -> HistogramSpec:
    """Bin consistency scores and report mean and (population) standard deviation.

    Empty input yields all-zero counts with mean and std absent.
    """
    spec = spec or HistogramSpec()
    values = np.asarray(scores, dtype=float)
    if values.size and (np.any(values < -1.0) or np.any(values > 1.0)):
        raise ValueError("consistency scores must lie in [-1, 1]")
    counts, _ = np.histogram(values, bins=np.asarray(spec.edges))
    if values.size == 0:
        return HistogramSpec(edges=spec.edges, counts=tuple(int(c) for c in counts))
    return HistogramSpec(
        edges=spec.edges,
        counts=tuple(int(c) for c in counts),
        mean=float(values.mean()),
        std=float(values.std()),
    )


def render_agreement_table(judge_ids: list[str], matrix: list[list[float]]) -> str:
    """Plain-text rendering of an agreement matrix for terminals."""
    width = max(len(j) for j in judge_ids) + 2
    header = " " * width + "".join(f"{j:>{width}}" for j in judge_ids)
    lines = [header]
    for judge_id, row in zip(judge_ids, matrix):
        cells = "".join(f"{value:>{width}.3f}" for value in row)
        lines.append(f"{judge_id:<{width}}" + cells)
    return "\n".join(lines)
