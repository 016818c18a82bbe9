"""Command-line entry point: every pipeline stage as one subcommand driven
by a config file plus flag overrides.

Exit codes: 0 on success, 2 for unusable configuration or inputs, 3 when
the run finished but skipped a larger share of tasks than --max-skip-rate
allows.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .config import ConfigError, RunConfig, apply_mock_endpoints, load_config
from .dataset_io import (
    DatasetError,
    JsonlWriter,
    RunStatistics,
    candidates_to_json,
    read_candidates,
    read_judgment_log,
    read_retrieval,
    read_tasks,
    write_stats,
)
from .domain import DomainError, HybridAspect, JudgeTask
from .gateway import GatewayError, ModelGateway
from .metrics import (
    MetricKind,
    SelectionVector,
    agreement_matrix,
    consistency_histogram,
    metric_judge,
    render_agreement_table,
)
from .mockllm import MockBehavior
from .mockllm import transport as mock_transport
from .orchestrator import (
    SKIP_MISSING_RETRIEVAL,
    SKIP_RESUMED,
    SKIP_SAMPLING_FAILED,
    SamplingError,
    SamplingPlan,
    map_ordered,
    judge_consistency_pipeline,
    rag_reward_pipeline,
    reference_judge_compare,
    sample_candidates,
    sample_rag_candidates,
)
from .prompts import TemplateSet, enumerate_hybrid_aspects

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SKIPS = 3

SKIP_MISSING_CANDIDATES = "missing-candidates"

_INPUT_ERRORS = (ConfigError, DatasetError, DomainError, ValueError, OSError)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="YAML or JSON run configuration.")(fn)
    fn = click.option("--cache-dir", default=None,
                      help="Override the response cache directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the run seed.")(fn)
    fn = click.option("--parallelism", type=int, default=None,
                      help="Worker pool size for task processing.")(fn)
    fn = click.option("--dry-run", is_flag=True,
                      help="Print the resolved plan and exit without any network call.")(fn)
    fn = click.option("--mock", is_flag=True,
                      help="Route all endpoints to the deterministic in-process harness.")(fn)
    fn = click.option("--no-cache", is_flag=True,
                      help="Bypass cache reads (responses are still written to the cache).")(fn)
    fn = click.option("--max-skip-rate", type=float, default=None,
                      help="Exit 3 when more than this fraction of tasks is skipped.")(fn)
    fn = click.option("--resume", is_flag=True,
                      help="Append to existing outputs, skipping finished query ids.")(fn)
    return fn


def resolve_config(
    config_path: Optional[str],
    mock: bool,
    seed: Optional[int],
    parallelism: Optional[int],
    cache_dir: Optional[str],
    max_skip_rate: Optional[float],
) -> RunConfig:
    config = load_config(config_path)
    if mock or config.mock.enabled:
        config = apply_mock_endpoints(config)
    if seed is not None:
        config = replace(config, seed=seed)
    if parallelism is not None:
        config = replace(config, parallelism=parallelism)
    if cache_dir is not None:
        config = replace(config, paths=replace(config.paths, cache_dir=cache_dir))
    if max_skip_rate is not None:
        config = replace(config, max_skip_rate=max_skip_rate)
    return config.validate()


def build_gateway(config: RunConfig, no_cache: bool) -> ModelGateway:
    transport = None
    if config.mock.enabled:
        behavior = MockBehavior(
            seed=config.mock.seed,
            violation_rate=config.mock.violation_rate,
            position_bias=config.mock.position_bias,
            semantic_embeddings=config.mock.semantic_embeddings,
            embed_dim=config.mock.embed_dim,
        )
        transport = mock_transport(behavior)
    return ModelGateway(
        cache_dir=config.paths.cache_dir,
        read_cache=not no_cache,
        transport=transport,
    )


def load_aspects(config: RunConfig) -> list[HybridAspect]:
    if config.aspect_names is None:
        return enumerate_hybrid_aspects()
    return [HybridAspect.from_name(name) for name in config.aspect_names]


def _prepare_output(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _merge_missing(stats: RunStatistics, reason: str, missing: list[str]) -> None:
    # Tasks rejected before the pipeline saw them still count as inputs.
    for _ in missing:
        stats.input_count += 1
        stats.add_skip(reason)
    stats.self_check()


def _finish_run(stats: RunStatistics, config: RunConfig, gateway: ModelGateway) -> int:
    stats.cache_hits = gateway.stats.cache_hits
    stats.cache_misses = gateway.stats.requests
    stats_path = Path(config.paths.stats_dir) / f"{stats.pipeline}_stats.json"
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    write_stats(stats, stats_path)
    click.echo(
        f"{stats.pipeline}: {stats.emitted_count} emitted, "
        f"{stats.skipped_count} skipped of {stats.input_count} "
        f"(stats: {stats_path})"
    )
    for reason, count in sorted(stats.skipped.items()):
        click.echo(f"  skipped {count} × {reason}")
    if stats.failure_rate > config.max_skip_rate:
        click.echo(
            f"skip rate {stats.failure_rate:.2%} exceeds --max-skip-rate "
            f"{config.max_skip_rate:.2%}",
            err=True,
        )
        return EXIT_SKIPS
    return EXIT_OK


def _echo_plan(title: str, items: dict) -> None:
    click.echo(f"dry run: {title}")
    for key, value in items.items():
        click.echo(f"  {key}: {value}")


def _guard(fn):
    """Map input and configuration failures to exit code 2."""

    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except _INPUT_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except GatewayError as exc:
            click.echo(f"fatal endpoint failure: {exc}", err=True)
            sys.exit(1)
        sys.exit(code)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="judgekit")
def main() -> None:
    """Judge-consistency pipelines: sampling, judging, preference data,
    and agreement analytics."""


@main.command("sample-judge-data")
@common_options
@_guard
def cmd_sample_judge_data(config_path, cache_dir, seed, parallelism, dry_run,
                          mock, no_cache, max_skip_rate, resume) -> int:
    """Sample candidate responses for judge-training queries."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    tasks = list(read_tasks(config.paths.tasks))
    generators = config.require_generators()
    plan = SamplingPlan(
        generator_endpoints=generators,
        temperatures=config.sampling.temperatures,
        picks_per_model=config.sampling.picks_per_model,
        rng_seed=config.seed,
        max_tokens=config.sampling.max_tokens,
    )
    if dry_run:
        _echo_plan("sample-judge-data", {
            "tasks": len(tasks),
            "generators": [e.model_id for e in generators],
            "temperatures": list(config.sampling.temperatures),
            "candidates_per_query": plan.candidates_per_query,
            "chat_requests": len(tasks) * len(generators) * len(config.sampling.temperatures),
            "output": config.paths.candidates,
        })
        return EXIT_OK
    gateway = build_gateway(config, no_cache)
    _prepare_output(config.paths.candidates)
    stats = RunStatistics(pipeline="sample-judge")
    with JsonlWriter(config.paths.candidates, resume=resume) as writer:
        def process(item):
            query, _gt = item
            if query.id in writer.existing_ids:
                return query.id, None, SKIP_RESUMED
            try:
                return query.id, sample_candidates(query, plan, gateway), None
            except SamplingError as exc:
                return query.id, None, (SKIP_SAMPLING_FAILED, str(exc))

        for qid, response_set, skip in map_ordered(process, tasks, config.parallelism):
            stats.add_input()
            if response_set is not None:
                writer.write(candidates_to_json(qid, response_set))
                stats.add_emitted()
            elif skip == SKIP_RESUMED:
                stats.add_skip(SKIP_RESUMED)
            else:
                reason, detail = skip
                click.echo(f"skip {qid}: {detail}", err=True)
                stats.add_skip(reason)
    stats.finish()
    return _finish_run(stats, config, gateway)


def _load_judge_tasks(config: RunConfig, candidates_path: str):
    """Join the tasks file with a candidates file; returns (tasks, missing_ids)."""
    tasks = list(read_tasks(config.paths.tasks))
    candidate_sets = read_candidates(candidates_path)
    joined: list[JudgeTask] = []
    missing: list[str] = []
    for query, gt in tasks:
        response_set = candidate_sets.get(query.id)
        if response_set is None:
            missing.append(query.id)
        else:
            joined.append(JudgeTask(query=query, gt=gt, responses=response_set))
    return joined, missing


@main.command("judge-pipeline")
@common_options
@click.option("--candidates", "candidates_path", default=None,
              help="Candidates JSONL from sample-judge-data.")
@click.option("--ablate-random-pairs", is_flag=True,
              help="Pick the preference pair uniformly at random instead of by consistency.")
@_guard
def cmd_judge_pipeline(config_path, cache_dir, seed, parallelism, dry_run, mock,
                       no_cache, max_skip_rate, resume, candidates_path,
                       ablate_random_pairs) -> int:
    """Build judge-training preference pairs from judged candidate sets."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    candidates_path = candidates_path or config.paths.candidates
    judge = config.require("judge")
    embedder = config.require("embedder")
    aspects = load_aspects(config)
    tasks, missing = _load_judge_tasks(config, candidates_path)
    if dry_run:
        _echo_plan("judge-pipeline", {
            "tasks": len(tasks),
            "missing_candidates": len(missing),
            "aspects": len(aspects),
            "judge": judge.model_id,
            "embedder": embedder.model_id,
            "chat_requests_base": len(tasks) * len(aspects),
            "repair_budget_per_aspect": config.repair_budget,
            "embed_requests_max": len(tasks) * len(aspects),
            "output": config.paths.preferences,
        })
        return EXIT_OK
    gateway = build_gateway(config, no_cache)
    templates = TemplateSet.load(config.templates_dir)
    _prepare_output(config.paths.preferences)
    _prepare_output(config.paths.judgment_log)
    with JsonlWriter(config.paths.preferences, resume=resume) as writer, \
            JsonlWriter(config.paths.judgment_log, resume=resume) as log_writer:
        result = judge_consistency_pipeline(
            tasks,
            judge,
            embedder,
            gateway,
            aspects=aspects,
            templates=templates,
            repair_budget=config.repair_budget,
            run_seed=config.seed,
            parallelism=config.parallelism,
            ablate_random_pairs=ablate_random_pairs,
            skip_ids=set(log_writer.existing_ids),
            writer=writer,
            log_writer=log_writer,
        )
    _merge_missing(result.stats, SKIP_MISSING_CANDIDATES, missing)
    return _finish_run(result.stats, config, gateway)


@main.command("rag-sample")
@common_options
@_guard
def cmd_rag_sample(config_path, cache_dir, seed, parallelism, dry_run, mock,
                   no_cache, max_skip_rate, resume) -> int:
    """Sample reward-stage candidates: two with documents, two without."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    tasks = list(read_tasks(config.paths.tasks))
    retrieval = read_retrieval(config.paths.retrieval)
    generators = config.require_generators()
    generator = generators[0]
    if dry_run:
        _echo_plan("rag-sample", {
            "tasks": len(tasks),
            "retrieval_records": len(retrieval),
            "generator": generator.model_id,
            "chat_requests": len(tasks) * 4,
            "output": config.paths.rag_candidates,
        })
        return EXIT_OK
    gateway = build_gateway(config, no_cache)
    _prepare_output(config.paths.rag_candidates)
    stats = RunStatistics(pipeline="rag-sample")
    with JsonlWriter(config.paths.rag_candidates, resume=resume) as writer:
        def process(item):
            query, _gt = item
            if query.id in writer.existing_ids:
                return query.id, None, SKIP_RESUMED
            record = retrieval.get(query.id)
            if record is None:
                return query.id, None, SKIP_MISSING_RETRIEVAL
            try:
                response_set = sample_rag_candidates(
                    query, record, generator, gateway,
                    seed=config.seed,
                    temperature=config.sampling.rag_temperature,
                    max_tokens=config.sampling.max_tokens,
                )
            except SamplingError as exc:
                click.echo(f"skip {query.id}: {exc}", err=True)
                return query.id, None, SKIP_SAMPLING_FAILED
            return query.id, response_set, None

        for qid, response_set, skip in map_ordered(process, tasks, config.parallelism):
            stats.add_input()
            if response_set is not None:
                writer.write(candidates_to_json(qid, response_set))
                stats.add_emitted()
            else:
                stats.add_skip(skip)
    stats.finish()
    return _finish_run(stats, config, gateway)


@main.command("rag-pipeline")
@common_options
@click.option("--candidates", "candidates_path", default=None,
              help="Candidates JSONL from rag-sample.")
@_guard
def cmd_rag_pipeline(config_path, cache_dir, seed, parallelism, dry_run, mock,
                     no_cache, max_skip_rate, resume, candidates_path) -> int:
    """Build generator-training preference pairs with the all-dimensions judge."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    candidates_path = candidates_path or config.paths.rag_candidates
    judge = config.require("judge")
    retrieval = read_retrieval(config.paths.retrieval)
    tasks, missing = _load_judge_tasks(config, candidates_path)
    if dry_run:
        _echo_plan("rag-pipeline", {
            "tasks": len(tasks),
            "missing_candidates": len(missing),
            "judge": judge.model_id,
            "chat_requests_base": len(tasks),
            "output": config.paths.rag_preferences,
        })
        return EXIT_OK
    gateway = build_gateway(config, no_cache)
    templates = TemplateSet.load(config.templates_dir)
    _prepare_output(config.paths.rag_preferences)
    _prepare_output(config.paths.rag_judgment_log)
    with JsonlWriter(config.paths.rag_preferences, resume=resume) as writer, \
            JsonlWriter(config.paths.rag_judgment_log, resume=resume) as log_writer:
        result = rag_reward_pipeline(
            tasks,
            retrieval,
            judge,
            gateway,
            templates=templates,
            repair_budget=config.repair_budget,
            run_seed=config.seed,
            parallelism=config.parallelism,
            skip_ids=set(log_writer.existing_ids),
            writer=writer,
            log_writer=log_writer,
        )
    _merge_missing(result.stats, SKIP_MISSING_CANDIDATES, missing)
    return _finish_run(result.stats, config, gateway)


def _selection_from_log(path: str) -> SelectionVector:
    """One judge's best-choice vector from its judgment log.

    Skipped tasks stay in the vector (they keep coverage comparable) but
    are marked degenerate so agreement never counts them.
    """
    entries: dict[str, int] = {}
    degenerate: set[str] = set()
    for obj in read_judgment_log(path):
        qid = str(obj.get("query_id"))
        if obj.get("skipped") or "best_index" not in obj:
            entries[qid] = -1
            degenerate.add(qid)
        else:
            entries[qid] = int(obj["best_index"])
    if not entries:
        raise DatasetError(f"judgment log {path} is empty")
    return SelectionVector(
        judge_id=Path(path).stem, entries=entries, degenerate_ids=frozenset(degenerate)
    )


def _metric_selection(config: RunConfig, metric: MetricKind,
                      candidates_path: str, coverage: set[str]) -> SelectionVector:
    """Deterministic metric-judge selections over the same query coverage."""
    tasks = {query.id: (query, gt) for query, gt in read_tasks(config.paths.tasks)}
    candidate_sets = read_candidates(candidates_path)
    entries: dict[str, int] = {}
    degenerate: set[str] = set()
    for qid in coverage:
        task = tasks.get(qid)
        response_set = candidate_sets.get(qid)
        if task is None or response_set is None:
            entries[qid] = -1
            degenerate.add(qid)
            continue
        query, gt = task
        judged = metric_judge(
            JudgeTask(query=query, gt=gt, responses=response_set), metric
        )
        entries[qid] = judged.best
        if judged.degenerate:
            degenerate.add(qid)
    return SelectionVector(
        judge_id=f"metric:{metric.value}",
        entries=entries,
        degenerate_ids=frozenset(degenerate),
    )


@main.command("analyze")
@common_options
@click.argument("logs", nargs=-1, type=click.Path(exists=True))
@click.option("--against-metric", "against_metric",
              type=click.Choice([m.value for m in MetricKind]), default=None,
              help="Add a deterministic metric judge as an extra column.")
@click.option("--candidates", "candidates_path", default=None,
              help="Candidates JSONL used by the metric judge.")
@click.option("--out", "report_path", default=None,
              help="Where to write the analysis report JSON.")
@_guard
def cmd_analyze(config_path, cache_dir, seed, parallelism, dry_run, mock, no_cache,
                max_skip_rate, resume, logs, against_metric, candidates_path,
                report_path) -> int:
    """Agreement matrix and consistency histograms over judgment logs."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    if not logs:
        raise ConfigError("analyze needs at least one judgment log")
    if dry_run:
        _echo_plan("analyze", {
            "logs": list(logs),
            "against_metric": against_metric or "none",
            "network_calls": 0,
        })
        return EXIT_OK
    selections = [_selection_from_log(path) for path in logs]
    if against_metric is not None:
        coverage = set(selections[0].entries)
        metric_vector = _metric_selection(
            config,
            MetricKind(against_metric),
            candidates_path or config.paths.candidates,
            coverage,
        )
        selections.append(metric_vector)
    judge_ids = [s.judge_id for s in selections]
    report: dict = {"v": 1, "judges": judge_ids}
    if len(selections) >= 2:
        matrix = agreement_matrix(selections)
        report["agreement_matrix"] = matrix
        click.echo(render_agreement_table(judge_ids, matrix))
    histograms = {}
    for path in logs:
        scores = [
            s for obj in read_judgment_log(path)
            for s in (obj.get("scores") or [])
        ]
        hist = consistency_histogram(scores)
        histograms[Path(path).stem] = {
            "edges": list(hist.edges),
            "counts": list(hist.counts or ()),
            "mean": hist.mean,
            "std": hist.std,
            "n": len(scores),
        }
        if hist.mean is not None:
            click.echo(
                f"consistency[{Path(path).stem}]: n={len(scores)} "
                f"mean={hist.mean:.4f} std={hist.std:.4f}"
            )
    report["consistency_histograms"] = histograms
    out_path = Path(report_path) if report_path else Path(config.paths.stats_dir) / "analysis.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    click.echo(f"report: {out_path}")
    return EXIT_OK


def _chosen_texts(path: str) -> dict[str, str]:
    """query_id -> the raw text of the judgment this log selected as chosen."""
    texts: dict[str, str] = {}
    for obj in read_judgment_log(path):
        if obj.get("skipped"):
            continue
        judgments = obj.get("judgments") or []
        if obj.get("kind") == "judge":
            index = obj.get("chosen_index")
            if index is None or not 0 <= index < len(judgments):
                continue
            raw = judgments[index].get("raw")
        else:
            raw = judgments[0].get("raw") if judgments else None
        if raw:
            texts[str(obj["query_id"])] = raw
    return texts


@main.command("compare-judges")
@common_options
@click.option("--log-a", required=True, type=click.Path(exists=True),
              help="First judge's judgment log.")
@click.option("--log-b", required=True, type=click.Path(exists=True),
              help="Second judge's judgment log.")
@_guard
def cmd_compare_judges(config_path, cache_dir, seed, parallelism, dry_run, mock,
                       no_cache, max_skip_rate, resume, log_a, log_b) -> int:
    """Ask a referee model which of two judges' chosen judgments is better."""
    config = resolve_config(config_path, mock, seed, parallelism, cache_dir, max_skip_rate)
    referee = config.require("referee")
    tasks = list(read_tasks(config.paths.tasks))
    selections_a = _chosen_texts(log_a)
    selections_b = _chosen_texts(log_b)
    overlap = [
        q.id for q, _ in tasks if q.id in selections_a and q.id in selections_b
    ]
    if dry_run:
        referee_calls = sum(
            1 for qid in overlap if selections_a[qid] != selections_b[qid]
        )
        _echo_plan("compare-judges", {
            "tasks": len(tasks),
            "overlap": len(overlap),
            "referee": referee.model_id,
            "chat_requests": referee_calls,
        })
        return EXIT_OK
    gateway = build_gateway(config, no_cache)
    templates = TemplateSet.load(config.templates_dir)
    report = reference_judge_compare(
        tasks, selections_a, selections_b, referee, gateway,
        templates=templates, run_seed=config.seed,
    )
    out_path = Path(config.paths.stats_dir) / "referee_report.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(
        f"A wins {report.wins_a}, B wins {report.wins_b}, ties {report.ties}, "
        f"excluded {report.excluded} (report: {out_path})"
    )
    return EXIT_OK


@main.command("emit-report")
@common_options
@click.option("--report", "report_path", required=True, type=click.Path(exists=True),
              help="Analysis report JSON produced by the analyze subcommand.")
@_guard
def cmd_emit_report(config_path, cache_dir, seed, parallelism, dry_run, mock,
                    no_cache, max_skip_rate, resume, report_path) -> int:
    """Render an analysis report as plain-text tables."""
    if dry_run:
        _echo_plan("emit-report", {"report": report_path, "network_calls": 0})
        return EXIT_OK
    data = json.loads(Path(report_path).read_text(encoding="utf-8"))
    judges = data.get("judges") or []
    matrix = data.get("agreement_matrix")
    if matrix:
        click.echo(render_agreement_table(judges, matrix))
    for name, hist in (data.get("consistency_histograms") or {}).items():
        if hist.get("mean") is None:
            click.echo(f"consistency[{name}]: no scores")
            continue
        click.echo(
            f"consistency[{name}]: n={hist.get('n', 0)} "
            f"mean={hist['mean']:.4f} std={hist['std']:.4f}"
        )
        edges = hist.get("edges") or []
        counts = hist.get("counts") or []
        peak = max(counts) if counts else 0
        for i, count in enumerate(counts):
            if count == 0:
                continue
            bar = "#" * max(1, round(24 * count / peak)) if peak else ""
            click.echo(f"  [{edges[i]:+.2f}, {edges[i + 1]:+.2f}) {count:>6} {bar}")
    return EXIT_OK


if __name__ == "__main__":
    main()
