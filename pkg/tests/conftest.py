"""Shared fixtures and the acceptance-criteria summary.

Acceptance tests register one line per criterion through the `criterion`
fixture; the terminal summary prints them as PASS/FAIL after the run.
"""

from __future__ import annotations

import json

import pytest

_ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Recorder for one acceptance criterion outcome."""

    def record(name: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def write_tasks_file(path, count, answers=None):
    """Small tasks fixture; answers defaults to two per query."""
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(count):
            handle.write(json.dumps({
                "id": f"q{i}",
                "question": f"What is item number {i} called?",
                "answers": answers or [f"item {i}", f"thing {i}"],
            }) + "\n")
    return path


def write_retrieval_file(path, count, docs_per_query=5):
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(count):
            handle.write(json.dumps({
                "query_id": f"q{i}",
                "docs": [
                    {"id": f"d{i}-{j}", "text": f"Passage about item {i}, part {j}."}
                    for j in range(docs_per_query)
                ],
            }) + "\n")
    return path


@pytest.fixture
def tasks_file(tmp_path):
    return lambda count=6: write_tasks_file(tmp_path / "tasks.jsonl", count)


@pytest.fixture
def retrieval_file(tmp_path):
    return lambda count=6: write_retrieval_file(tmp_path / "retrieval.jsonl", count)
