"""Pipeline drivers: candidate sampling, aspect-by-aspect judging, judge
preference construction, and the reward stage that builds generator
preference data.

Tasks run with bounded parallelism but results are committed strictly in
input order, so output files are reproducible byte for byte. Per-task
failures never abort a run; every task lands in the statistics as either
emitted or skipped with a reason.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .consistency import (
    build_judge_training_instance,
    consistency_scores,
    select_pair,
    select_pair_random,
)
from .dataset_io import (
    JsonlWriter,
    PreferenceRecord,
    RunStatistics,
    judgment_log_entry,
    preference_to_json,
)
from .domain import (
    ALL_DIMENSIONS_ASPECT,
    CandidateResponse,
    GroundTruth,
    HybridAspect,
    JudgeTask,
    Judgment,
    JudgmentSet,
    Origin,
    Query,
    ResponseSet,
    RetrievalRecord,
    label_of,
)
from .gateway import GatewayError, GenerationParams, ModelEndpoint, ModelGateway
from .parsing import ParseFailure, parse_judgment, repair_prompt
from .prompts import (
    TemplateSet,
    build_all_dims_prompt,
    build_generator_prompt,
    build_judge_prompt,
    build_referee_prompt,
    enumerate_hybrid_aspects,
)

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURES = (0.5, 0.6, 0.7)
DEFAULT_REPAIR_BUDGET = 2
DEFAULT_RAG_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024

SKIP_SAMPLING_FAILED = "sampling-failed"
SKIP_MISSING_RETRIEVAL = "missing-retrieval"
SKIP_INSUFFICIENT_JUDGMENTS = "insufficient-valid-judgments"
SKIP_EMBEDDING_FAILED = "embedding-failed"
SKIP_JUDGE_FAILED = "judge-failed"
SKIP_IDENTICAL_PAIR = "identical-pair-texts"
SKIP_RESUMED = RunStatistics.RESUMED_REASON


class SamplingError(RuntimeError):
    """Candidate sampling for one query could not complete."""


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts; never Python's salted hash."""
    material = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class SamplingPlan:
    """How judge-training candidates are drawn from the generator pool."""

    generator_endpoints: tuple[ModelEndpoint, ...]
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    picks_per_model: int = 1
    rng_seed: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.generator_endpoints:
            raise ValueError("at least one generator endpoint is required")
        if not self.temperatures:
            raise ValueError("temperatures must be non-empty")
        if self.picks_per_model < 1:
            raise ValueError("picks_per_model must be at least 1")

    @property
    def candidates_per_query(self) -> int:
        return len(self.generator_endpoints) * self.picks_per_model


def sample_candidates(query: Query, plan: SamplingPlan, gateway: ModelGateway) -> ResponseSet:
    """Draw the candidate set for one query.

    Each endpoint is sampled once per temperature; a seeded RNG then keeps
    picks_per_model of those draws. Candidates appear in endpoint order, so
    the same seed yields the same set.
    """
    prompt = build_generator_prompt(query)
    candidates: list[CandidateResponse] = []
    for endpoint in plan.generator_endpoints:
        drawn: list[tuple[float, str]] = []
        for temperature in plan.temperatures:
            params = GenerationParams(
                temperature=temperature,
                max_tokens=plan.max_tokens,
                seed=derive_seed(plan.rng_seed, query.id, endpoint.model_id, temperature),
            )
            try:
                text = gateway.chat_complete(endpoint, prompt, params)
            except GatewayError as exc:
                raise SamplingError(
                    f"sampling {endpoint.model_id} at t={temperature} for query "
                    f"{query.id!r} failed: {exc}"
                ) from exc
            drawn.append((temperature, text))
        rng = random.Random(derive_seed(plan.rng_seed, query.id, endpoint.model_id, "pick"))
        picked = sorted(rng.sample(range(len(drawn)), min(plan.picks_per_model, len(drawn))))
        for index in picked:
            temperature, text = drawn[index]
            candidates.append(
                CandidateResponse(
                    label_index=len(candidates),
                    text=text,
                    origin=Origin(model=endpoint.model_id, temperature=temperature),
                )
            )
    return ResponseSet(tuple(candidates))


def sample_rag_candidates(
    query: Query,
    retrieval: RetrievalRecord,
    generator: ModelEndpoint,
    gateway: ModelGateway,
    seed: int = 0,
    temperature: float = DEFAULT_RAG_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> ResponseSet:
    """Reward-stage candidates: two samples with documents, two without."""
    docs = [doc.text for doc in retrieval.documents]
    prompts = (
        (build_generator_prompt(query, docs), True),
        (build_generator_prompt(query), False),
    )
    candidates: list[CandidateResponse] = []
    for prompt, with_docs in prompts:
        for draw in range(2):
            params = GenerationParams(
                temperature=temperature,
                max_tokens=max_tokens,
                seed=derive_seed(seed, query.id, "rag", with_docs, draw),
            )
            try:
                text = gateway.chat_complete(generator, prompt, params, ordinal=draw)
            except GatewayError as exc:
                raise SamplingError(
                    f"rag sampling for query {query.id!r} (with_docs={with_docs}, "
                    f"draw {draw}) failed: {exc}"
                ) from exc
            candidates.append(
                CandidateResponse(
                    label_index=len(candidates),
                    text=text,
                    origin=Origin(
                        model=generator.model_id,
                        temperature=temperature,
                        with_docs=with_docs,
                    ),
                )
            )
    return ResponseSet(tuple(candidates))


@dataclass(frozen=True)
class AspectFailure:
    aspect: HybridAspect
    reason: str
    detail: str = ""


def _ask_judge(
    gateway: ModelGateway,
    judge: ModelEndpoint,
    prompt: str,
    aspect: HybridAspect,
    m: int,
    run_seed: int,
    query_id: str,
    repair_budget: int,
):
    """One aspect's judgment with up to repair_budget re-asks on parse failure.

    Returns (Judgment | None, AspectFailure | None). The judge decodes
    greedily; re-asks extend the prompt with a corrective instruction and
    bump the request ordinal so a cached bad answer is not replayed.
    """
    current_prompt = prompt
    failure: Optional[ParseFailure] = None
    for attempt in range(repair_budget + 1):
        params = GenerationParams(
            temperature=0.0,
            max_tokens=DEFAULT_MAX_TOKENS,
            seed=derive_seed(run_seed, query_id, aspect.name, attempt),
        )
        try:
            raw = gateway.chat_complete(judge, current_prompt, params, ordinal=attempt)
        except GatewayError as exc:
            return None, AspectFailure(aspect, "gateway-error", str(exc))
        outcome = parse_judgment(raw, m, aspect)
        if isinstance(outcome, Judgment):
            return outcome, None
        failure = outcome
        current_prompt = repair_prompt(prompt, failure)
    assert failure is not None
    return None, AspectFailure(aspect, failure.reason.value, failure.raw[:200])


def run_judge_over_aspects(
    task: JudgeTask,
    judge: ModelEndpoint,
    gateway: ModelGateway,
    aspects: Optional[list[HybridAspect]] = None,
    templates: Optional[TemplateSet] = None,
    repair_budget: int = DEFAULT_REPAIR_BUDGET,
    run_seed: int = 0,
) -> tuple[JudgmentSet, list[AspectFailure]]:
    """Judge one task under every hybrid aspect, in canonical aspect order."""
    aspects = aspects if aspects is not None else enumerate_hybrid_aspects()
    judgments: list[Judgment] = []
    failures: list[AspectFailure] = []
    for aspect in aspects:
        prompt = build_judge_prompt(aspect, task.query, task.gt, task.responses, templates)
        judgment, failure = _ask_judge(
            gateway, judge, prompt, aspect, task.responses.m,
            run_seed, task.query.id, repair_budget,
        )
        if judgment is not None:
            judgments.append(judgment)
        else:
            failures.append(failure)
    return JudgmentSet(tuple(judgments)), failures


@dataclass
class TaskOutcome:
    query_id: str
    record: Optional[PreferenceRecord]
    log_entry: Optional[dict]
    skip_reason: Optional[str] = None


@dataclass
class PipelineResult:
    stats: RunStatistics
    records: list[PreferenceRecord] = field(default_factory=list)


def map_ordered(process: Callable, items: list, parallelism: int):
    """Apply process across items with a worker pool, yielding in input order."""
    if parallelism <= 1 or len(items) <= 1:
        for item in items:
            yield process(item)
        return
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        yield from executor.map(process, items)


def _judgments_log_payload(judgments: JudgmentSet, failures: list[AspectFailure]) -> list[dict]:
    entries = [
        {
            "aspect": j.aspect.name,
            "best": j.best,
            "worst": j.worst,
            "raw": j.raw,
        }
        for j in judgments.judgments
    ]
    entries.extend(
        {"aspect": f.aspect.name, "failed": f.reason, "detail": f.detail} for f in failures
    )
    return entries


def judge_consistency_pipeline(
    tasks: Iterable[JudgeTask],
    judge: ModelEndpoint,
    embedder: ModelEndpoint,
    gateway: ModelGateway,
    aspects: Optional[list[HybridAspect]] = None,
    templates: Optional[TemplateSet] = None,
    repair_budget: int = DEFAULT_REPAIR_BUDGET,
    run_seed: int = 0,
    parallelism: int = 1,
    ablate_random_pairs: bool = False,
    skip_ids: Optional[set] = None,
    writer: Optional[JsonlWriter] = None,
    log_writer: Optional[JsonlWriter] = None,
) -> PipelineResult:
    """Judge-training data construction, end to end.

    Per task: judge under all aspects, embed each raw judgment, score
    consistency, select the chosen/rejected judgment pair, and emit one
    judge preference row. skip_ids (from a resumed output file) are
    accounted but not reprocessed.
    """
    skip_ids = skip_ids or set()
    stats = RunStatistics(pipeline="judge")
    result = PipelineResult(stats=stats)
    task_list = list(tasks)

    def process(task: JudgeTask) -> TaskOutcome:
        qid = task.query.id
        if qid in skip_ids:
            return TaskOutcome(qid, None, None, SKIP_RESUMED)
        judgments, failures = run_judge_over_aspects(
            task, judge, gateway, aspects, templates, repair_budget, run_seed
        )
        log_aspects = _judgments_log_payload(judgments, failures)
        if judgments.k_effective < 2:
            entry = judgment_log_entry(
                qid, "judge", log_aspects, None, None, None,
                True, SKIP_INSUFFICIENT_JUDGMENTS,
            )
            return TaskOutcome(qid, None, entry, SKIP_INSUFFICIENT_JUDGMENTS)
        try:
            embeddings = [
                gateway.embed(embedder, j.raw, ordinal=0) for j in judgments.judgments
            ]
        except GatewayError as exc:
            entry = judgment_log_entry(
                qid, "judge", log_aspects, None, None, None,
                True, SKIP_EMBEDDING_FAILED, extra={"error": str(exc)},
            )
            return TaskOutcome(qid, None, entry, SKIP_EMBEDDING_FAILED)
        if ablate_random_pairs:
            rng = random.Random(derive_seed(run_seed, qid, "ablate-pair"))
            report = select_pair_random(judgments, rng)
            scores: Optional[list[float]] = None
        else:
            raw_scores = consistency_scores(embeddings)
            report = select_pair(judgments, raw_scores)
            scores = [round(s, 12) for s in raw_scores]
        if report.skipped:
            entry = judgment_log_entry(
                qid, "judge", log_aspects, scores, None, None, True, report.skip_reason
            )
            return TaskOutcome(qid, None, entry, report.skip_reason)
        prompt = build_all_dims_prompt(task.query, task.gt, task.responses, templates)
        record = build_judge_training_instance(task, report, judgments, prompt)
        chosen = judgments.judgments[report.chosen_index]
        entry = judgment_log_entry(
            qid, "judge", log_aspects, scores,
            report.chosen_index, report.rejected_index, False, None,
            extra={"best_index": chosen.best, "worst_index": chosen.worst},
        )
        return TaskOutcome(qid, record, entry)

    for outcome in map_ordered(process, task_list, parallelism):
        stats.add_input()
        if outcome.record is not None:
            # The preference row lands before its log line: a crash between
            # the two is then caught by the resume scan, never the reverse.
            if writer is not None:
                writer.write_once(preference_to_json(outcome.record))
            result.records.append(outcome.record)
            stats.add_emitted()
        else:
            stats.add_skip(outcome.skip_reason)
        if log_writer is not None and outcome.log_entry is not None:
            log_writer.write(outcome.log_entry)
    stats.finish()
    return result


def rag_reward_pipeline(
    tasks: Iterable[JudgeTask],
    retrieval: dict[str, RetrievalRecord],
    judge: ModelEndpoint,
    gateway: ModelGateway,
    templates: Optional[TemplateSet] = None,
    repair_budget: int = DEFAULT_REPAIR_BUDGET,
    run_seed: int = 0,
    parallelism: int = 1,
    skip_ids: Optional[set] = None,
    writer: Optional[JsonlWriter] = None,
    log_writer: Optional[JsonlWriter] = None,
) -> PipelineResult:
    """Reward stage: one all-dimensions judgment per task picks the
    chosen/rejected generator outputs; the emitted prompt is the
    with-documents generation prompt."""
    skip_ids = skip_ids or set()
    stats = RunStatistics(pipeline="rag")
    result = PipelineResult(stats=stats)
    task_list = list(tasks)
    all_dims = ALL_DIMENSIONS_ASPECT

    def process(task: JudgeTask) -> TaskOutcome:
        qid = task.query.id
        if qid in skip_ids:
            return TaskOutcome(qid, None, None, SKIP_RESUMED)
        record_docs = retrieval.get(qid)
        if record_docs is None:
            return TaskOutcome(
                qid, None,
                judgment_log_entry(qid, "rag", [], None, None, None,
                                   True, SKIP_MISSING_RETRIEVAL),
                SKIP_MISSING_RETRIEVAL,
            )
        prompt = build_all_dims_prompt(task.query, task.gt, task.responses, templates)
        judgment, failure = _ask_judge(
            gateway, judge, prompt, all_dims, task.responses.m,
            run_seed, qid, repair_budget,
        )
        if judgment is None:
            entry = judgment_log_entry(
                qid, "rag",
                [{"aspect": failure.aspect.name, "failed": failure.reason,
                  "detail": failure.detail}],
                None, None, None, True, SKIP_JUDGE_FAILED,
            )
            return TaskOutcome(qid, None, entry, SKIP_JUDGE_FAILED)
        log_aspects = _judgments_log_payload(JudgmentSet((judgment,)), [])
        chosen = task.responses.candidates[judgment.best]
        rejected = task.responses.candidates[judgment.worst]
        if chosen.text == rejected.text:
            entry = judgment_log_entry(
                qid, "rag", log_aspects, None, None, None, True, SKIP_IDENTICAL_PAIR,
                extra={"best_index": judgment.best, "worst_index": judgment.worst},
            )
            return TaskOutcome(qid, None, entry, SKIP_IDENTICAL_PAIR)
        generation_prompt = build_generator_prompt(
            task.query, [doc.text for doc in record_docs.documents], templates
        )
        record = PreferenceRecord(
            kind="generator",
            query_id=qid,
            prompt=generation_prompt,
            chosen=chosen.text,
            rejected=rejected.text,
            meta={
                "best_label": label_of(judgment.best, task.responses.m),
                "worst_label": label_of(judgment.worst, task.responses.m),
                "chosen_with_docs": chosen.origin.with_docs,
                "rejected_with_docs": rejected.origin.with_docs,
                "judge_model": judge.model_id,
            },
        )
        entry = judgment_log_entry(
            qid, "rag", log_aspects, None, judgment.best, judgment.worst, False, None,
            extra={"best_index": judgment.best, "worst_index": judgment.worst},
        )
        return TaskOutcome(qid, record, entry)

    for outcome in map_ordered(process, task_list, parallelism):
        stats.add_input()
        if outcome.record is not None:
            if writer is not None:
                writer.write_once(preference_to_json(outcome.record))
            result.records.append(outcome.record)
            stats.add_emitted()
            if outcome.record.meta.get("chosen_with_docs"):
                stats.extra["chosen_with_docs"] = stats.extra.get("chosen_with_docs", 0) + 1
            else:
                stats.extra["chosen_without_docs"] = stats.extra.get("chosen_without_docs", 0) + 1
        else:
            stats.add_skip(outcome.skip_reason)
        if log_writer is not None and outcome.log_entry is not None:
            log_writer.write(outcome.log_entry)
    stats.finish()
    return result


@dataclass
class RefereeReport:
    """Win/tie/loss outcome of comparing two judges' selections."""

    compared: int
    wins_a: int
    wins_b: int
    ties: int
    excluded: int

    @property
    def win_rate_a(self) -> float:
        return self.wins_a / self.compared if self.compared else 0.0

    @property
    def win_rate_b(self) -> float:
        return self.wins_b / self.compared if self.compared else 0.0

    @property
    def tie_rate(self) -> float:
        return self.ties / self.compared if self.compared else 0.0

    def as_dict(self) -> dict:
        return {
            "compared": self.compared,
            "wins_a": self.wins_a,
            "wins_b": self.wins_b,
            "ties": self.ties,
            "excluded": self.excluded,
            "win_rate_a": round(self.win_rate_a, 6),
            "win_rate_b": round(self.win_rate_b, 6),
            "tie_rate": round(self.tie_rate, 6),
        }


_REFEREE_ANSWER = {"A": "a", "B": "b", "TIE": "tie"}


def parse_referee_answer(raw: str) -> Optional[str]:
    """Extract a/b/tie from a referee reply; None when absent."""
    match = re.search(r"(?i)\bbetter\s*:?\s*\{?\s*(A|B|Tie)\b", raw)
    if not match:
        return None
    return _REFEREE_ANSWER[match.group(1).upper()]


def reference_judge_compare(
    tasks: Iterable[tuple[Query, GroundTruth]],
    selections_a: dict[str, str],
    selections_b: dict[str, str],
    referee: ModelEndpoint,
    gateway: ModelGateway,
    templates: Optional[TemplateSet] = None,
    run_seed: int = 0,
) -> RefereeReport:
    """Ask a referee model which judge's stored judgment is better per task.

    Identical judgment texts tie without a referee call. Tasks outside both
    selection maps are ignored; zero overlap is a usage error. Unparseable
    referee replies drop the task from the rates and are counted.
    """
    overlap = [
        (query, gt) for query, gt in tasks
        if query.id in selections_a and query.id in selections_b
    ]
    if not overlap:
        raise ValueError("no task is covered by both selection files")
    wins_a = wins_b = ties = excluded = 0
    for query, gt in overlap:
        a_text = selections_a[query.id]
        b_text = selections_b[query.id]
        if a_text == b_text:
            ties += 1
            continue
        prompt = build_referee_prompt(query, gt, a_text, b_text, templates)
        params = GenerationParams(
            temperature=0.0,
            max_tokens=64,
            seed=derive_seed(run_seed, query.id, "referee"),
        )
        try:
            raw = gateway.chat_complete(referee, prompt, params)
        except GatewayError:
            excluded += 1
            continue
        answer = parse_referee_answer(raw)
        if answer == "a":
            wins_a += 1
        elif answer == "b":
            wins_b += 1
        elif answer == "tie":
            ties += 1
        else:
            excluded += 1
    return RefereeReport(
        compared=wins_a + wins_b + ties,
        wins_a=wins_a,
        wins_b=wins_b,
        ties=ties,
        excluded=excluded,
    )
