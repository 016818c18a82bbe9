"""Sampling, judging, and pipeline accounting over the deterministic mock."""

import random

import pytest

from judgekit.dataset_io import JsonlWriter, read_judgment_log, read_preferences
from judgekit.domain import (
    CandidateResponse,
    GroundTruth,
    JudgeTask,
    Origin,
    Query,
    ResponseSet,
    RetrievalRecord,
    RetrievedDoc,
)
from judgekit.gateway import ModelEndpoint, ModelGateway, RequestError
from judgekit.mockllm import JudgeScript, MockBehavior, mock_endpoints, transport
from judgekit.orchestrator import (
    SKIP_IDENTICAL_PAIR,
    SKIP_INSUFFICIENT_JUDGMENTS,
    SKIP_JUDGE_FAILED,
    SKIP_MISSING_RETRIEVAL,
    SKIP_RESUMED,
    RefereeReport,
    SamplingError,
    SamplingPlan,
    derive_seed,
    judge_consistency_pipeline,
    map_ordered,
    parse_referee_answer,
    rag_reward_pipeline,
    reference_judge_compare,
    run_judge_over_aspects,
    sample_candidates,
    sample_rag_candidates,
)
from judgekit.prompts import enumerate_hybrid_aspects

CHAT_EP, EMBED_EP = mock_endpoints()
ASPECTS = enumerate_hybrid_aspects()


def make_gateway(behavior=None, **kwargs):
    behavior = behavior or MockBehavior(seed=0)
    return ModelGateway(transport=transport(behavior), **kwargs)


def gen_endpoints(n=4):
    return tuple(
        ModelEndpoint(base_url="http://mock.invalid", model_id=f"gen-{i}", kind="chat")
        for i in range(n)
    )


def make_query(i=0):
    return Query(id=f"q{i}", text=f"What is item number {i} called?")


def make_task(i=0, texts=None, m=4):
    texts = texts or [f"candidate {i}-{j}" for j in range(m)]
    return JudgeTask(
        query=make_query(i),
        gt=GroundTruth(answers=(f"item {i}",)),
        responses=ResponseSet(tuple(
            CandidateResponse(j, text, Origin("gen", 0.5))
            for j, text in enumerate(texts)
        )),
    )


def make_retrieval(i=0, docs=3):
    return RetrievalRecord(
        query_id=f"q{i}",
        documents=tuple(
            RetrievedDoc(id=f"d{j}", text=f"passage {j} about item {i}")
            for j in range(docs)
        ),
    )


class TestDeriveSeed:
    def test_stable_and_part_sensitive(self):
        assert derive_seed(1, "a", 0.5) == derive_seed(1, "a", 0.5)
        assert derive_seed(1, "a", 0.5) != derive_seed(1, "a", 0.6)
        assert derive_seed(1, "a") != derive_seed(1, "b")

    def test_fits_in_63_bits(self):
        for part in range(100):
            seed = derive_seed(part, "x")
            assert 0 <= seed < 2**63

    def test_separator_prevents_concatenation_collisions(self):
        assert derive_seed("ab", "c") != derive_seed("a", "bc")


class TestSamplingPlan:
    def test_candidates_per_query(self):
        plan = SamplingPlan(generator_endpoints=gen_endpoints(4))
        assert plan.candidates_per_query == 4
        plan = SamplingPlan(generator_endpoints=gen_endpoints(2), picks_per_model=2)
        assert plan.candidates_per_query == 4

    def test_validation(self):
        with pytest.raises(ValueError):
            SamplingPlan(generator_endpoints=())
        with pytest.raises(ValueError):
            SamplingPlan(generator_endpoints=gen_endpoints(1), temperatures=())
        with pytest.raises(ValueError):
            SamplingPlan(generator_endpoints=gen_endpoints(1), picks_per_model=0)


class TestSampleCandidates:
    def test_four_endpoints_yield_four_candidates(self):
        plan = SamplingPlan(generator_endpoints=gen_endpoints(4), rng_seed=3)
        result = sample_candidates(make_query(), plan, make_gateway())
        assert result.m == 4
        assert [c.label_index for c in result.candidates] == [0, 1, 2, 3]
        assert [c.origin.model for c in result.candidates] == [
            "gen-0", "gen-1", "gen-2", "gen-3",
        ]
        for c in result.candidates:
            assert c.origin.temperature in (0.5, 0.6, 0.7)
            assert not c.origin.with_docs

    def test_picks_per_model_two(self):
        plan = SamplingPlan(generator_endpoints=gen_endpoints(2), picks_per_model=2)
        result = sample_candidates(make_query(), plan, make_gateway())
        assert result.m == 4
        assert [c.origin.model for c in result.candidates] == [
            "gen-0", "gen-0", "gen-1", "gen-1",
        ]

    def test_deterministic_for_seed(self):
        plan = SamplingPlan(generator_endpoints=gen_endpoints(4), rng_seed=11)
        a = sample_candidates(make_query(), plan, make_gateway())
        b = sample_candidates(make_query(), plan, make_gateway())
        assert a == b

    def test_seed_changes_selection(self):
        texts = set()
        for seed in range(4):
            plan = SamplingPlan(generator_endpoints=gen_endpoints(4), rng_seed=seed)
            result = sample_candidates(make_query(), plan, make_gateway())
            texts.add(tuple(c.text for c in result.candidates))
        assert len(texts) > 1

    def test_gateway_failure_becomes_sampling_error(self):
        def broken(url, payload, headers, timeout):
            return 400, {"error": "no"}

        plan = SamplingPlan(generator_endpoints=gen_endpoints(1))
        with pytest.raises(SamplingError, match="gen-0"):
            sample_candidates(make_query(), plan, ModelGateway(transport=broken))


class TestSampleRagCandidates:
    def test_two_with_docs_then_two_without(self):
        result = sample_rag_candidates(
            make_query(), make_retrieval(), CHAT_EP, make_gateway(), seed=5
        )
        assert result.m == 4
        assert [c.origin.with_docs for c in result.candidates] == [
            True, True, False, False,
        ]
        assert [c.label_index for c in result.candidates] == [0, 1, 2, 3]
        assert len({c.text for c in result.candidates}) >= 3  # fresh draws

    def test_deterministic_for_seed(self):
        args = (make_query(), make_retrieval(), CHAT_EP)
        a = sample_rag_candidates(*args, make_gateway(), seed=9)
        b = sample_rag_candidates(*args, make_gateway(), seed=9)
        assert a == b

    def test_failure_wrapped(self):
        def broken(url, payload, headers, timeout):
            return 500, {}

        gateway = ModelGateway(transport=broken, retries=1, sleep=lambda s: None)
        with pytest.raises(SamplingError, match="with_docs=True"):
            sample_rag_candidates(make_query(), make_retrieval(), CHAT_EP, gateway)


class TestRunJudgeOverAspects:
    def test_all_eight_aspects_in_canonical_order(self):
        judgments, failures = run_judge_over_aspects(
            make_task(), CHAT_EP, make_gateway(MockBehavior(seed=2))
        )
        assert failures == []
        assert judgments.k_effective == 8
        assert [j.aspect.name for j in judgments.judgments] == [a.name for a in ASPECTS]

    def test_violations_become_failures(self):
        behavior = MockBehavior(seed=2, violation_rate=1.0)
        judgments, failures = run_judge_over_aspects(
            make_task(), CHAT_EP, make_gateway(behavior), repair_budget=1
        )
        assert judgments.k_effective == 0
        assert len(failures) == 8
        assert all(f.reason == "MissingCotMarker" for f in failures)

    def test_repair_recovers_from_one_bad_reply(self):
        calls = []

        def flaky(url, payload, headers, timeout):
            calls.append(payload)
            if url.endswith("/chat/completions") and len(calls) == 1:
                return 200, {"choices": [{"message": {"content": "no markers here"}}]}
            return 200, {"choices": [{"message": {
                "content": "COT:{fixed}. Answer : Best answer:A. Worst answer :B",
            }}]}

        judgments, failures = run_judge_over_aspects(
            make_task(), CHAT_EP, ModelGateway(transport=flaky),
            aspects=[ASPECTS[0]], repair_budget=2,
        )
        assert failures == []
        assert judgments.judgments[0].best == 0
        assert len(calls) == 2
        repair_text = calls[1]["messages"][0]["content"]
        assert "COT:" in repair_text  # re-ask repeats the format contract

    def test_budget_exhaustion_reports_last_reason(self):
        def hopeless(url, payload, headers, timeout):
            return 200, {"choices": [{"message": {"content": "still nothing"}}]}

        judgments, failures = run_judge_over_aspects(
            make_task(), CHAT_EP, ModelGateway(transport=hopeless),
            aspects=[ASPECTS[0]], repair_budget=2,
        )
        assert judgments.k_effective == 0
        assert failures[0].reason == "MissingCotMarker"
        assert failures[0].detail == "still nothing"


class TestMapOrdered:
    def test_parallel_output_keeps_input_order(self):
        items = list(range(40))

        def work(i):
            return i * i

        assert list(map_ordered(work, items, parallelism=8)) == [i * i for i in items]

    def test_sequential_path(self):
        seen = []

        def work(i):
            seen.append(i)
            return i

        list(map_ordered(work, [3, 1, 2], parallelism=1))
        assert seen == [3, 1, 2]


class TestJudgeConsistencyPipeline:
    def run(self, behavior, tasks=None, tmp_path=None, **kwargs):
        tasks = tasks if tasks is not None else [make_task(i) for i in range(4)]
        writers = {}
        if tmp_path is not None:
            writers["writer"] = JsonlWriter(tmp_path / "prefs.jsonl")
            writers["log_writer"] = JsonlWriter(tmp_path / "log.jsonl")
        result = judge_consistency_pipeline(
            tasks, CHAT_EP, EMBED_EP, make_gateway(behavior),
            run_seed=7, **writers, **kwargs,
        )
        for w in writers.values():
            w.close()
        return result

    def test_scripted_majority_wins(self):
        script = JudgeScript(dissent_aspects=frozenset({ASPECTS[0].name, ASPECTS[4].name}))
        result = self.run(MockBehavior(seed=1, judge_script=script))
        assert result.stats.emitted_count == 4
        assert result.stats.skipped == {}
        for record in result.records:
            assert record.kind == "judge"
            assert "Best answer:B" in record.chosen
            assert "Best answer:C" in record.rejected

    def test_log_and_preferences_written(self, tmp_path):
        script = JudgeScript(dissent_aspects=frozenset({ASPECTS[0].name}))
        self.run(MockBehavior(seed=1, judge_script=script), tmp_path=tmp_path)
        prefs = read_preferences(tmp_path / "prefs.jsonl")
        log = read_judgment_log(tmp_path / "log.jsonl")
        assert len(prefs) == 4 and len(log) == 4
        entry = log[0]
        assert entry["kind"] == "judge"
        assert len(entry["judgments"]) == 8
        assert len(entry["scores"]) == 8
        assert entry["chosen_index"] is not None
        assert entry["best_index"] == 1  # script majority best B
        assert not entry["skipped"]

    def test_all_violations_skip_with_reason(self):
        result = self.run(MockBehavior(seed=1, violation_rate=1.0))
        assert result.stats.emitted_count == 0
        assert result.stats.skipped == {SKIP_INSUFFICIENT_JUDGMENTS: 4}
        result.stats.self_check()

    def test_position_bias_degenerates_scores(self):
        result = self.run(MockBehavior(seed=1, position_bias="A"))
        assert result.stats.emitted_count == 0
        assert result.stats.skipped == {"degenerate-uniform-scores": 4}

    def test_skip_ids_counted_as_resumed(self):
        script = JudgeScript(dissent_aspects=frozenset({ASPECTS[0].name}))
        result = self.run(
            MockBehavior(seed=1, judge_script=script), skip_ids={"q0", "q2"}
        )
        assert result.stats.emitted_count == 2
        assert result.stats.skipped == {SKIP_RESUMED: 2}
        assert result.stats.failure_rate == 0.0
        assert {r.query_id for r in result.records} == {"q1", "q3"}

    def test_deterministic_records(self):
        script = JudgeScript(dissent_aspects=frozenset({ASPECTS[2].name}))
        a = self.run(MockBehavior(seed=5, judge_script=script))
        b = self.run(MockBehavior(seed=5, judge_script=script))
        assert a.records == b.records

    def test_parallel_matches_sequential(self):
        script = JudgeScript(dissent_aspects=frozenset({ASPECTS[1].name}))
        tasks = [make_task(i) for i in range(6)]
        seq = self.run(MockBehavior(seed=5, judge_script=script), tasks=tasks)
        par = self.run(
            MockBehavior(seed=5, judge_script=script), tasks=tasks, parallelism=4
        )
        assert seq.records == par.records

    def test_random_pair_ablation(self, tmp_path):
        result = self.run(
            MockBehavior(seed=3), tmp_path=tmp_path, ablate_random_pairs=True
        )
        assert result.stats.emitted_count == 4
        log = read_judgment_log(tmp_path / "log.jsonl")
        for entry in log:
            assert entry["scores"] is None
            assert entry["chosen_index"] != entry["rejected_index"]


class TestRagRewardPipeline:
    def run(self, behavior, tasks, retrieval, **kwargs):
        return rag_reward_pipeline(
            tasks, retrieval, CHAT_EP, make_gateway(behavior), run_seed=7, **kwargs
        )

    def rag_tasks(self, n=3):
        tasks = []
        retrieval = {}
        gateway = make_gateway(MockBehavior(seed=4))
        for i in range(n):
            record = make_retrieval(i)
            responses = sample_rag_candidates(
                make_query(i), record, CHAT_EP, gateway, seed=i
            )
            tasks.append(JudgeTask(
                query=make_query(i), gt=GroundTruth(answers=(f"item {i}",)),
                responses=responses,
            ))
            retrieval[f"q{i}"] = record
        return tasks, retrieval

    def test_happy_path_emits_generator_records(self):
        tasks, retrieval = self.rag_tasks(3)
        result = self.run(MockBehavior(seed=4), tasks, retrieval)
        assert result.stats.emitted_count == 3
        for record in result.records:
            assert record.kind == "generator"
            assert "Passage 1:" in record.prompt
            assert record.meta["best_label"] in "ABCD"
            assert record.meta["judge_model"] == CHAT_EP.model_id
            assert isinstance(record.meta["chosen_with_docs"], bool)
        with_docs = result.stats.extra.get("chosen_with_docs", 0)
        without = result.stats.extra.get("chosen_without_docs", 0)
        assert with_docs + without == 3

    def test_missing_retrieval_skips(self):
        tasks, retrieval = self.rag_tasks(3)
        del retrieval["q1"]
        result = self.run(MockBehavior(seed=4), tasks, retrieval)
        assert result.stats.emitted_count == 2
        assert result.stats.skipped == {SKIP_MISSING_RETRIEVAL: 1}

    def test_judge_failure_skips(self):
        tasks, retrieval = self.rag_tasks(2)
        result = self.run(MockBehavior(seed=4, violation_rate=1.0), tasks, retrieval)
        assert result.stats.emitted_count == 0
        assert result.stats.skipped == {SKIP_JUDGE_FAILED: 2}

    def test_identical_texts_skip(self):
        task = make_task(0, texts=["same answer"] * 4)
        result = self.run(MockBehavior(seed=4), [task], {"q0": make_retrieval(0)})
        assert result.stats.emitted_count == 0
        assert result.stats.skipped == {SKIP_IDENTICAL_PAIR: 1}

    def test_resume_skip_ids(self):
        tasks, retrieval = self.rag_tasks(3)
        result = self.run(MockBehavior(seed=4), tasks, retrieval, skip_ids={"q0"})
        assert result.stats.skipped == {SKIP_RESUMED: 1}
        assert result.stats.emitted_count == 2


class TestRefereeParsing:
    @pytest.mark.parametrize("raw,want", [
        ("Better:A", "a"),
        ("Better:B", "b"),
        ("Better:Tie", "tie"),
        ("better : b", "b"),
        ("The verdict is Better:{Tie} overall.", "tie"),
        ("BETTER:  A", "a"),
    ])
    def test_accepted_forms(self, raw, want):
        assert parse_referee_answer(raw) == want

    @pytest.mark.parametrize("raw", ["no verdict", "A is better", "Better:C", ""])
    def test_rejected_forms(self, raw):
        assert parse_referee_answer(raw) is None


class TestRefereeReport:
    def test_rates(self):
        report = RefereeReport(compared=10, wins_a=5, wins_b=3, ties=2, excluded=1)
        assert report.win_rate_a == 0.5
        assert report.win_rate_b == 0.3
        assert report.tie_rate == 0.2
        d = report.as_dict()
        assert d["compared"] == 10 and d["excluded"] == 1

    def test_empty_report_rates_zero(self):
        report = RefereeReport(compared=0, wins_a=0, wins_b=0, ties=0, excluded=0)
        assert report.win_rate_a == 0.0


class TestReferenceJudgeCompare:
    def tasks(self, n=4):
        return [
            (make_query(i), GroundTruth(answers=(f"item {i}",))) for i in range(n)
        ]

    def test_identical_selections_tie_without_calls(self):
        def exploding(url, payload, headers, timeout):
            raise AssertionError("referee must not be called for identical texts")

        selections = {f"q{i}": f"judgment {i}" for i in range(4)}
        report = reference_judge_compare(
            self.tasks(4), selections, dict(selections),
            CHAT_EP, ModelGateway(transport=exploding),
        )
        assert report.ties == 4
        assert report.compared == 4
        assert report.excluded == 0

    def test_longer_judgment_wins_under_mock(self):
        a = {f"q{i}": "a detailed and thorough judgment text" for i in range(4)}
        b = {f"q{i}": "terse" for i in range(4)}
        report = reference_judge_compare(
            self.tasks(4), a, b, CHAT_EP, make_gateway(MockBehavior(seed=0))
        )
        assert report.wins_a == 4
        assert report.wins_b == 0

    def test_zero_overlap_is_usage_error(self):
        with pytest.raises(ValueError, match="no task"):
            reference_judge_compare(
                self.tasks(2), {"qx": "a"}, {"qy": "b"}, CHAT_EP, make_gateway()
            )

    def test_partial_overlap_ignores_uncovered(self):
        a = {"q0": "long judgment text here", "q1": "also long text", "qz": "x"}
        b = {"q0": "short", "q1": "also long text"}
        report = reference_judge_compare(
            self.tasks(3), a, b, CHAT_EP, make_gateway(MockBehavior(seed=0))
        )
        assert report.compared == 2  # q0 compared, q1 tie, q2 uncovered
        assert report.wins_a == 1 and report.ties == 1

    def test_gateway_error_excludes_task(self):
        def broken(url, payload, headers, timeout):
            return 400, {"error": "nope"}

        a = {"q0": "judgment one"}
        b = {"q0": "judgment two differs"}
        report = reference_judge_compare(
            self.tasks(1), a, b, CHAT_EP, ModelGateway(transport=broken)
        )
        assert report.compared == 0
        assert report.excluded == 1
