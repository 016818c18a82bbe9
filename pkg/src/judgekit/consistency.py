"""Consistency scoring over a judgment set and chosen/rejected pair selection.

The consistency score of judgment i is the mean cosine similarity between
its embedding and the embeddings of all k judgments, self-term included:

    S_i = (1/k) * sum_j cos(e_i, e_j)

The self-term adds the constant 1/k to every score, so it never changes
which judgments are selected.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import HybridAspect, JudgeTask, JudgmentSet
from .dataset_io import PreferenceRecord


class ConsistencyError(ValueError):
    """Invalid input to consistency scoring or pair selection."""


SKIP_DEGENERATE_UNIFORM = "degenerate-uniform-scores"


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-aspect consistency scores and the selected judgment pair.

    When skipped is False, chosen_index/rejected_index point into the
    judgment set and satisfy S_chosen >= S_j >= S_rejected for all j under
    the first-index tie-break.
    """

    scores: tuple[tuple[HybridAspect, float], ...]
    chosen_index: int | None
    rejected_index: int | None
    skipped: bool = False
    skip_reason: str | None = None


def _as_matrix(embeddings: Sequence) -> np.ndarray:
    rows = [np.asarray(getattr(e, "values", e), dtype=float) for e in embeddings]
    if len(rows) < 2:
        raise ConsistencyError(f"need at least 2 embeddings, got {len(rows)}")
    dims = {row.shape for row in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise ConsistencyError(f"embedding dimensions disagree: {sorted(dims)}")
    matrix = np.stack(rows)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise ConsistencyError("zero-norm embedding")
    return matrix / norms[:, None]


def consistency_scores(embeddings: Sequence) -> list[float]:
    """Mean cosine similarity of each embedding against all k embeddings.

    Accepts EmbeddingVector objects or plain float sequences. All vectors
    must share one dimension and have nonzero norm; k must be >= 2.
    """
    unit = _as_matrix(embeddings)
    scores = (unit @ unit.T).mean(axis=1)
    return [float(s) for s in scores]


def select_pair(judgments: JudgmentSet, scores: Sequence[float]) -> ConsistencyReport:
    """Pick the highest-scoring judgment as chosen and the lowest as rejected.

    Ties break toward the lowest index in the set's aspect order. When every
    score is equal the argmax and argmin coincide and the task is reported
    as skipped instead of forcing a pair.
    """
    if judgments.k_effective != len(scores):
        raise ConsistencyError(
            f"{judgments.k_effective} judgments but {len(scores)} scores"
        )
    if judgments.k_effective < 2:
        raise ConsistencyError("pair selection needs at least 2 judgments")
    values = np.asarray(scores, dtype=float)
    chosen = int(np.argmax(values))
    rejected = int(np.argmin(values))
    labeled = tuple(
        (judgment.aspect, float(score))
        for judgment, score in zip(judgments.judgments, scores)
    )
    if chosen == rejected:
        return ConsistencyReport(
            scores=labeled,
            chosen_index=None,
            rejected_index=None,
            skipped=True,
            skip_reason=SKIP_DEGENERATE_UNIFORM,
        )
    return ConsistencyReport(scores=labeled, chosen_index=chosen, rejected_index=rejected)


def select_pair_random(
    judgments: JudgmentSet, rng: random.Random
) -> ConsistencyReport:
    """Ablation variant: a uniformly random distinct judgment pair, no scoring."""
    k = judgments.k_effective
    if k < 2:
        raise ConsistencyError("pair selection needs at least 2 judgments")
    chosen, rejected = rng.sample(range(k), 2)
    return ConsistencyReport(scores=(), chosen_index=chosen, rejected_index=rejected)


def build_judge_training_instance(
    task: JudgeTask,
    report: ConsistencyReport,
    judgments: JudgmentSet,
    prompt: str,
) -> PreferenceRecord:
    """Turn a selected judgment pair into one judge-training preference row.

    The prompt is the training-time conditioning context (the judge prompt
    over all four dimensions); chosen/rejected carry the full raw judgment
    texts.
    """
    if report.skipped:
        raise ConsistencyError("cannot build a training instance from a skipped report")
    chosen = judgments.judgments[report.chosen_index]
    rejected = judgments.judgments[report.rejected_index]
    if not chosen.raw.strip() or not rejected.raw.strip():
        raise ConsistencyError("selected judgment has empty raw text")
    return PreferenceRecord(
        kind="judge",
        query_id=task.query.id,
        prompt=prompt,
        chosen=chosen.raw,
        rejected=rejected.raw,
        meta={
            "aspect_scores": [[aspect.name, score] for aspect, score in report.scores],
            "chosen_aspect": chosen.aspect.name,
            "rejected_aspect": rejected.aspect.name,
        },
    )
