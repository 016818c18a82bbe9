"""End-to-end command behavior under the deterministic mock harness."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from judgekit.cli import main
from judgekit.dataset_io import read_candidates, read_judgment_log, read_preferences

from conftest import write_retrieval_file, write_tasks_file

MOCK = ["--mock", "--seed", "7", "--parallelism", "2"]


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(runner, tmp_path, monkeypatch):
    """Isolated cwd with default-path task and retrieval files."""
    monkeypatch.chdir(tmp_path)
    Path("data").mkdir()
    write_tasks_file(Path("data/tasks.jsonl"), 6)
    write_retrieval_file(Path("data/retrieval.jsonl"), 6)
    return tmp_path


def invoke(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


def run_sampling(runner):
    result = invoke(runner, ["sample-judge-data", *MOCK])
    assert result.exit_code == 0, result.output
    return result


def run_judging(runner, extra=()):
    run_sampling(runner)
    result = invoke(runner, ["judge-pipeline", *MOCK, *extra])
    assert result.exit_code == 0, result.output
    return result


class TestBasics:
    def test_version(self, runner):
        result = invoke(runner, ["--version"])
        assert result.exit_code == 0
        assert "judgekit" in result.output

    def test_help_lists_commands(self, runner):
        result = invoke(runner, ["--help"])
        for name in ("sample-judge-data", "judge-pipeline", "rag-sample",
                     "rag-pipeline", "analyze", "compare-judges", "emit-report"):
            assert name in result.output


class TestDryRun:
    def test_sampling_plan_without_side_effects(self, runner, workspace):
        result = invoke(runner, ["sample-judge-data", *MOCK, "--dry-run"])
        assert result.exit_code == 0
        assert "dry run: sample-judge-data" in result.output
        assert "chat_requests: 72" in result.output  # 6 tasks x 4 gens x 3 temps
        assert not Path("out").exists()
        assert not Path(".judgekit-cache").exists()

    def test_judge_plan_counts_repairs(self, runner, workspace):
        run_sampling(runner)
        result = invoke(runner, ["judge-pipeline", *MOCK, "--dry-run"])
        assert result.exit_code == 0
        assert "chat_requests_base: 48" in result.output  # 6 tasks x 8 aspects
        assert not Path("out/judge_dpo.jsonl").exists()


class TestSampleJudgeData:
    def test_emits_one_candidate_set_per_task(self, runner, workspace):
        result = run_sampling(runner)
        assert "sample-judge: 6 emitted, 0 skipped of 6" in result.output
        sets = read_candidates("out/candidates.jsonl")
        assert len(sets) == 6
        for response_set in sets.values():
            assert response_set.m == 4
            models = [c.origin.model for c in response_set.candidates]
            assert models == ["mock-gen-1", "mock-gen-2", "mock-gen-3", "mock-gen-4"]
        stats = json.loads(Path("out/sample-judge_stats.json").read_text())
        assert stats["input"] == 6 and stats["emitted"] == 6

    def test_empty_tasks_file_is_fine(self, runner, workspace):
        Path("data/tasks.jsonl").write_text("")
        result = invoke(runner, ["sample-judge-data", *MOCK])
        assert result.exit_code == 0
        assert "0 emitted, 0 skipped of 0" in result.output

    def test_missing_tasks_file_exits_2(self, runner, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = invoke(runner, ["sample-judge-data", *MOCK])
        assert result.exit_code == 2

    def test_resume_completes_interrupted_run(self, runner, workspace):
        run_sampling(runner)
        complete = Path("out/candidates.jsonl").read_bytes()
        lines = complete.split(b"\n")
        Path("out/candidates.jsonl").write_bytes(
            b"\n".join(lines[:3]) + b"\n" + lines[3][:40]
        )
        result = invoke(runner, ["sample-judge-data", *MOCK, "--resume"])
        assert result.exit_code == 0
        assert "3 emitted" in result.output
        assert "3 × resumed-already-processed" in result.output
        assert Path("out/candidates.jsonl").read_bytes() == complete

    def test_without_resume_regenerates_from_scratch(self, runner, workspace):
        run_sampling(runner)
        complete = Path("out/candidates.jsonl").read_bytes()
        Path("out/candidates.jsonl").write_bytes(b'{"query_id": "junk"}\n')
        result = invoke(runner, ["sample-judge-data", *MOCK])
        assert result.exit_code == 0
        assert Path("out/candidates.jsonl").read_bytes() == complete


class TestJudgePipeline:
    def test_happy_path(self, runner, workspace):
        result = run_judging(runner)
        assert "judge: 6 emitted, 0 skipped of 6" in result.output
        prefs = read_preferences("out/judge_dpo.jsonl")
        assert len(prefs) == 6
        for record in prefs:
            assert record.kind == "judge"
            assert "Best answer" in record.chosen
        log = read_judgment_log("out/judge_judgments.jsonl")
        assert len(log) == 6
        assert all(len(entry["judgments"]) == 8 for entry in log)
        stats = json.loads(Path("out/judge_stats.json").read_text())
        assert stats["input"] == stats["emitted"] + stats["skipped_total"]

    def test_deterministic_across_runs(self, runner, workspace):
        run_judging(runner)
        first = Path("out/judge_dpo.jsonl").read_bytes()
        result = invoke(runner, ["judge-pipeline", *MOCK])
        assert result.exit_code == 0
        assert Path("out/judge_dpo.jsonl").read_bytes() == first

    def test_missing_candidates_file_exits_2(self, runner, workspace):
        result = invoke(runner, ["judge-pipeline", *MOCK])
        assert result.exit_code == 2

    def test_violating_judge_exits_3(self, runner, workspace):
        Path("run.yaml").write_text(
            "mock:\n  enabled: true\n  violation_rate: 1.0\n", encoding="utf-8"
        )
        run_sampling(runner)
        result = invoke(
            runner, ["judge-pipeline", "--config", "run.yaml", "--seed", "7"]
        )
        assert result.exit_code == 3
        assert "insufficient-valid-judgments" in result.output
        assert "exceeds --max-skip-rate" in result.output + (result.stderr or "")

    def test_position_bias_degenerates_and_exits_3(self, runner, workspace):
        Path("run.yaml").write_text(
            'mock:\n  enabled: true\n  position_bias: "A"\n', encoding="utf-8"
        )
        run_sampling(runner)
        result = invoke(
            runner, ["judge-pipeline", "--config", "run.yaml", "--seed", "7"]
        )
        assert result.exit_code == 3
        assert "degenerate-uniform-scores" in result.output

    def test_ablate_random_pairs(self, runner, workspace):
        result = run_judging(runner, extra=["--ablate-random-pairs"])
        assert "6 emitted" in result.output
        log = read_judgment_log("out/judge_judgments.jsonl")
        assert all(entry["scores"] is None for entry in log)

    def test_resume_skips_logged_tasks(self, runner, workspace):
        run_judging(runner)
        complete = Path("out/judge_dpo.jsonl").read_bytes()
        log_lines = Path("out/judge_judgments.jsonl").read_bytes().splitlines(keepends=True)
        Path("out/judge_judgments.jsonl").write_bytes(b"".join(log_lines[:2]))
        pref_lines = complete.splitlines(keepends=True)
        Path("out/judge_dpo.jsonl").write_bytes(b"".join(pref_lines[:2]))
        result = invoke(runner, ["judge-pipeline", *MOCK, "--resume"])
        assert result.exit_code == 0
        assert "2 × resumed-already-processed" in result.output
        assert Path("out/judge_dpo.jsonl").read_bytes() == complete


class TestRagCommands:
    def test_rag_sample_two_plus_two(self, runner, workspace):
        result = invoke(runner, ["rag-sample", *MOCK])
        assert result.exit_code == 0, result.output
        sets = read_candidates("out/rag_candidates.jsonl")
        assert len(sets) == 6
        for response_set in sets.values():
            flags = [c.origin.with_docs for c in response_set.candidates]
            assert flags == [True, True, False, False]

    def test_rag_pipeline_emits_generator_prefs(self, runner, workspace):
        invoke(runner, ["rag-sample", *MOCK])
        result = invoke(runner, ["rag-pipeline", *MOCK])
        assert result.exit_code == 0, result.output
        prefs = read_preferences("out/generator_dpo.jsonl")
        assert len(prefs) == 6
        for record in prefs:
            assert record.kind == "generator"
            assert "Passage 1:" in record.prompt
            assert record.meta["best_label"] in "ABCD"
        stats = json.loads(Path("out/rag_stats.json").read_text())
        chosen = stats.get("chosen_with_docs", 0) + stats.get("chosen_without_docs", 0)
        assert chosen == 6

    def test_missing_retrieval_counts_and_gates(self, runner, workspace):
        write_retrieval_file(Path("data/retrieval.jsonl"), 3)
        result = invoke(runner, ["rag-sample", *MOCK])
        assert result.exit_code == 3
        assert "3 × missing-retrieval" in result.output

    def test_max_skip_rate_flag_relaxes_gate(self, runner, workspace):
        write_retrieval_file(Path("data/retrieval.jsonl"), 3)
        result = invoke(runner, ["rag-sample", *MOCK, "--max-skip-rate", "0.6"])
        assert result.exit_code == 0
        assert "3 × missing-retrieval" in result.output


class TestAnalyze:
    def test_two_logs_plus_metric_column(self, runner, workspace):
        run_judging(runner)
        Path("out/judge_judgments.jsonl").rename("out/by_consistency.jsonl")
        invoke(runner, ["judge-pipeline", *MOCK, "--ablate-random-pairs"])
        result = invoke(runner, [
            "analyze", *MOCK, "out/by_consistency.jsonl", "out/judge_judgments.jsonl",
            "--against-metric", "rouge_l",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(Path("out/analysis.json").read_text())
        assert report["judges"] == [
            "by_consistency", "judge_judgments", "metric:rouge_l",
        ]
        matrix = report["agreement_matrix"]
        assert len(matrix) == 3
        for i in range(3):
            assert matrix[i][i] == 1.0
            for j in range(3):
                assert matrix[i][j] == matrix[j][i]
        hist = report["consistency_histograms"]["by_consistency"]
        assert hist["n"] == 48  # 6 tasks x 8 aspect scores
        assert sum(hist["counts"]) == 48

    def test_single_log_histogram_only(self, runner, workspace):
        run_judging(runner)
        result = invoke(runner, [
            "analyze", *MOCK, "out/judge_judgments.jsonl", "--out", "out/a.json",
        ])
        assert result.exit_code == 0
        report = json.loads(Path("out/a.json").read_text())
        assert "agreement_matrix" not in report
        assert "judge_judgments" in report["consistency_histograms"]

    def test_no_logs_exits_2(self, runner, workspace):
        result = invoke(runner, ["analyze", *MOCK])
        assert result.exit_code == 2

    def test_dry_run_reports_zero_network(self, runner, workspace):
        run_judging(runner)
        result = invoke(runner, [
            "analyze", *MOCK, "out/judge_judgments.jsonl", "--dry-run",
        ])
        assert result.exit_code == 0
        assert "network_calls: 0" in result.output


class TestCompareJudges:
    def test_same_log_all_ties(self, runner, workspace):
        run_judging(runner)
        result = invoke(runner, [
            "compare-judges", *MOCK,
            "--log-a", "out/judge_judgments.jsonl",
            "--log-b", "out/judge_judgments.jsonl",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(Path("out/referee_report.json").read_text())
        assert report["ties"] == 6
        assert report["wins_a"] == 0 and report["wins_b"] == 0

    def test_different_logs_produce_verdicts(self, runner, workspace):
        run_judging(runner)
        Path("out/judge_judgments.jsonl").rename("out/log_a.jsonl")
        invoke(runner, ["judge-pipeline", *MOCK, "--seed", "8"])
        result = invoke(runner, [
            "compare-judges", *MOCK,
            "--log-a", "out/log_a.jsonl",
            "--log-b", "out/judge_judgments.jsonl",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(Path("out/referee_report.json").read_text())
        assert report["compared"] + report["excluded"] == 6

    def test_missing_log_is_usage_error(self, runner, workspace):
        result = runner.invoke(main, [
            "compare-judges", *MOCK, "--log-a", "nope.jsonl", "--log-b", "nope.jsonl",
        ])
        assert result.exit_code == 2


class TestEmitReport:
    def test_renders_tables_and_histograms(self, runner, workspace):
        run_judging(runner)
        invoke(runner, [
            "analyze", *MOCK, "out/judge_judgments.jsonl", "--against-metric",
            "rouge_l", "--out", "out/analysis.json",
        ])
        result = invoke(runner, ["emit-report", *MOCK, "--report", "out/analysis.json"])
        assert result.exit_code == 0
        assert "metric:rouge_l" in result.output
        assert "consistency[judge_judgments]" in result.output
        assert "#" in result.output  # histogram bars

    def test_missing_report_is_usage_error(self, runner, workspace):
        result = runner.invoke(main, ["emit-report", *MOCK, "--report", "absent.json"])
        assert result.exit_code == 2


class TestConfigErrors:
    def test_config_file_not_found_exits_2(self, runner, workspace):
        result = invoke(runner, ["sample-judge-data", "--config", "absent.yaml", "--mock"])
        assert result.exit_code == 2

    def test_unknown_config_key_exits_2(self, runner, workspace):
        Path("bad.yaml").write_text("retires: 3\n", encoding="utf-8")
        result = invoke(runner, ["sample-judge-data", "--config", "bad.yaml", "--mock"])
        assert result.exit_code == 2

    def test_no_endpoints_without_mock_exits_2(self, runner, workspace):
        result = invoke(runner, ["sample-judge-data", "--seed", "7"])
        assert result.exit_code == 2
