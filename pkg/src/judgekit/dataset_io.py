"""Persistent formats: task/retrieval ingestion, candidate sets, preference
JSONL, judgment logs, gateway cache records, and run statistics.

Everything on disk is JSONL (UTF-8, one object per line) with a schema
version field "v": 1 on every line. Writers append; a crashed run resumes
by truncating a partial trailing line and skipping query ids already
present.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .domain import (
    CandidateResponse,
    GroundTruth,
    Origin,
    Query,
    ResponseSet,
    RetrievalRecord,
    RetrievedDoc,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_TASK_FIELDS = {"v", "id", "question", "answers", "aspect_sets", "dataset"}
_RETRIEVAL_FIELDS = {"v", "query_id", "docs"}


class DatasetError(ValueError):
    """A persistent record violated the expected schema or an invariant."""


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, int, dict]]:
    """Yield (line_number, byte_offset, object) for each line of a JSONL file."""
    path = Path(path)
    offset = 0
    with path.open("rb") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.decode("utf-8")
            if not line.endswith(b"\n") and not text.strip():
                break
            if not text.strip():
                offset += len(line)
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                if not line.endswith(b"\n"):
                    raise DatasetError(
                        f"{path}: file ends mid-record at byte offset {offset}"
                    ) from exc
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}: line {lineno} is not a JSON object")
            yield lineno, offset, obj
            offset += len(line)


def read_tasks(path: str | Path) -> Iterator[tuple[Query, GroundTruth]]:
    """Stream (Query, GroundTruth) pairs from a tasks JSONL file.

    Each line needs {id, question, answers} and may carry aspect_sets and a
    dataset tag. Errors name the offending line; duplicate ids are refused.
    """
    seen: set[str] = set()
    for lineno, _, obj in _iter_jsonl(path):
        try:
            query = Query(
                id=str(obj["id"]),
                text=obj["question"],
                dataset=obj.get("dataset", ""),
            )
            gt = GroundTruth(
                answers=tuple(obj["answers"]),
                aspect_sets=(
                    tuple(tuple(s) for s in obj["aspect_sets"])
                    if obj.get("aspect_sets")
                    else None
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: invalid task on line {lineno}: {exc}") from exc
        if query.id in seen:
            raise DatasetError(f"{path}: duplicate task id {query.id!r} on line {lineno}")
        seen.add(query.id)
        yield query, gt


def read_retrieval(path: str | Path) -> dict[str, RetrievalRecord]:
    """Load retrieval records into a query_id -> RetrievalRecord map.

    Unknown fields are ignored with a warning; a duplicated query_id keeps
    the last record seen.
    """
    records: dict[str, RetrievalRecord] = {}
    for lineno, _, obj in _iter_jsonl(path):
        unknown = set(obj) - _RETRIEVAL_FIELDS
        if unknown:
            logger.warning("%s line %d: ignoring unknown fields %s", path, lineno, sorted(unknown))
        try:
            record = RetrievalRecord(
                query_id=str(obj["query_id"]),
                documents=tuple(
                    RetrievedDoc(id=str(d.get("id", i)), text=d["text"])
                    for i, d in enumerate(obj["docs"])
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: invalid retrieval record on line {lineno}: {exc}") from exc
        if record.query_id in records:
            logger.warning(
                "%s line %d: duplicate query_id %r, keeping the later record",
                path, lineno, record.query_id,
            )
        records[record.query_id] = record
    return records


# ---------------------------------------------------------------------------
# Candidate sets
# ---------------------------------------------------------------------------


def write_candidates(sets: Iterable[tuple[str, ResponseSet]], path: str | Path) -> int:
    """Write (query_id, ResponseSet) pairs as JSONL; returns the record count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for query_id, response_set in sets:
            handle.write(_dumps(candidates_to_json(query_id, response_set)) + "\n")
            count += 1
    return count


def candidates_to_json(query_id: str, response_set: ResponseSet) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "query_id": query_id,
        "candidates": [
            {
                "label_index": c.label_index,
                "text": c.text,
                "origin": {
                    "model": c.origin.model,
                    "temperature": c.origin.temperature,
                    "with_docs": c.origin.with_docs,
                },
            }
            for c in response_set.candidates
        ],
    }


def read_candidates(path: str | Path) -> dict[str, ResponseSet]:
    sets: dict[str, ResponseSet] = {}
    for lineno, _, obj in _iter_jsonl(path):
        try:
            candidates = tuple(
                CandidateResponse(
                    label_index=c["label_index"],
                    text=c["text"],
                    origin=Origin(
                        model=c["origin"]["model"],
                        temperature=c["origin"]["temperature"],
                        with_docs=c["origin"].get("with_docs", False),
                    ),
                )
                for c in obj["candidates"]
            )
            sets[str(obj["query_id"])] = ResponseSet(candidates)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: invalid candidate set on line {lineno}: {exc}") from exc
    return sets


# ---------------------------------------------------------------------------
# Preference records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreferenceRecord:
    """One DPO training row, for either judge or generator training."""

    kind: str
    query_id: str
    prompt: str
    chosen: str
    rejected: str
    meta: dict

    def __post_init__(self) -> None:
        if self.kind not in ("judge", "generator"):
            raise DatasetError(f"unknown preference kind {self.kind!r}")
        if not self.prompt:
            raise DatasetError("preference prompt must be non-empty")
        if self.chosen == self.rejected:
            raise DatasetError(
                f"chosen and rejected are identical for query {self.query_id!r}"
            )


def preference_to_json(record: PreferenceRecord) -> dict:
    # Field order is part of the format; json preserves insertion order.
    return {
        "v": SCHEMA_VERSION,
        "kind": record.kind,
        "query_id": record.query_id,
        "prompt": record.prompt,
        "chosen": record.chosen,
        "rejected": record.rejected,
        "meta": record.meta,
    }


def preference_from_json(obj: dict) -> PreferenceRecord:
    try:
        return PreferenceRecord(
            kind=obj["kind"],
            query_id=str(obj["query_id"]),
            prompt=obj["prompt"],
            chosen=obj["chosen"],
            rejected=obj["rejected"],
            meta=obj.get("meta", {}),
        )
    except KeyError as exc:
        raise DatasetError(f"preference record missing field {exc}") from exc


def write_preferences(records: Iterable[PreferenceRecord], path: str | Path) -> int:
    """Write preference records as JSONL; refuses invalid records. Returns count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(_dumps(preference_to_json(record)) + "\n")
            count += 1
    return count


def read_preferences(path: str | Path) -> list[PreferenceRecord]:
    """Exact inverse of write_preferences; truncated files raise with a byte offset."""
    return [preference_from_json(obj) for _, _, obj in _iter_jsonl(path)]


class JsonlWriter:
    """Append-only JSONL writer with crash-safe resume.

    On resume the file is scanned for complete lines; a partial trailing
    line (from a killed writer) is truncated away. existing_ids collects the
    id_field of every complete line so the caller can skip finished work.
    Writes are flushed per line. Single writer per file.
    """

    def __init__(self, path: str | Path, resume: bool = False, id_field: str = "query_id"):
        self.path = Path(path)
        self.id_field = id_field
        self.existing_ids: set[str] = set()
        good_bytes = 0
        if resume and self.path.exists():
            with self.path.open("rb") as handle:
                for line in handle:
                    if not line.endswith(b"\n"):
                        break
                    try:
                        obj = json.loads(line.decode("utf-8"))
                    except json.JSONDecodeError:
                        break
                    good_bytes += len(line)
                    if isinstance(obj, dict) and self.id_field in obj:
                        self.existing_ids.add(str(obj[self.id_field]))
            if self.path.stat().st_size != good_bytes:
                with self.path.open("rb+") as handle:
                    handle.truncate(good_bytes)
        self._handle = self.path.open("ab" if resume else "wb")

    def write(self, obj: dict) -> None:
        self._handle.write((_dumps(obj) + "\n").encode("utf-8"))
        self._handle.flush()
        if self.id_field in obj:
            self.existing_ids.add(str(obj[self.id_field]))

    def write_once(self, obj: dict) -> bool:
        """Write unless a record with this id is already on disk.

        A run killed between its two output files leaves the preference row
        present but the log line missing; the reprocessed task must not
        duplicate the row.
        """
        key = str(obj.get(self.id_field))
        if key in self.existing_ids:
            return False
        self.write(obj)
        return True

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Judgment logs
# ---------------------------------------------------------------------------


def judgment_log_entry(
    query_id: str,
    kind: str,
    aspects: list[dict],
    scores: list[float] | None,
    chosen_index: int | None,
    rejected_index: int | None,
    skipped: bool,
    skip_reason: str | None,
    extra: dict | None = None,
) -> dict:
    """Assemble one audit-log line for a judged task."""
    entry = {
        "v": SCHEMA_VERSION,
        "query_id": query_id,
        "kind": kind,
        "judgments": aspects,
        "scores": scores,
        "chosen_index": chosen_index,
        "rejected_index": rejected_index,
        "skipped": skipped,
        "skip_reason": skip_reason,
    }
    if extra:
        entry.update(extra)
    return entry


def read_judgment_log(path: str | Path) -> list[dict]:
    return [obj for _, _, obj in _iter_jsonl(path)]


# ---------------------------------------------------------------------------
# Gateway cache records
# ---------------------------------------------------------------------------


def cache_record_path(cache_dir: str | Path, digest: str) -> Path:
    return Path(cache_dir) / digest[:2] / f"{digest}.json"


def read_cache_record(cache_dir: str | Path, digest: str) -> dict | None:
    path = cache_record_path(cache_dir, digest)
    if not path.is_file():
        return None
    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def write_cache_record(cache_dir: str | Path, digest: str, record: dict) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = cache_record_path(cache_dir, digest)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{digest}.{uuid.uuid4().hex}.tmp"
    with tmp.open("w", encoding="utf-8") as handle:
        json.dump(record, handle, ensure_ascii=False)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Run statistics
# ---------------------------------------------------------------------------


@dataclass
class RunStatistics:
    """Accounting for one pipeline run: input = emitted + skipped, always."""

    pipeline: str
    input_count: int = 0
    emitted_count: int = 0
    skipped: dict[str, int] = field(default_factory=dict)
    cache_hits: int = 0
    cache_misses: int = 0
    started_at: float = field(default_factory=time.time)
    wall_time_s: float = 0.0
    extra: dict = field(default_factory=dict)

    RESUMED_REASON = "resumed-already-processed"

    def add_input(self) -> None:
        self.input_count += 1

    def add_emitted(self) -> None:
        self.emitted_count += 1

    def add_skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def skipped_count(self) -> int:
        return sum(self.skipped.values())

    @property
    def failure_rate(self) -> float:
        """Skip rate excluding work already finished by an earlier run."""
        fresh = self.input_count - self.skipped.get(self.RESUMED_REASON, 0)
        if fresh <= 0:
            return 0.0
        failures = self.skipped_count - self.skipped.get(self.RESUMED_REASON, 0)
        return failures / fresh

    def self_check(self) -> None:
        if self.input_count != self.emitted_count + self.skipped_count:
            raise DatasetError(
                f"statistics violated conservation: input={self.input_count}, "
                f"emitted={self.emitted_count}, skipped={self.skipped_count}"
            )

    def finish(self) -> None:
        self.wall_time_s = time.time() - self.started_at
        self.self_check()

    def as_dict(self) -> dict:
        total_cache = self.cache_hits + self.cache_misses
        return {
            "v": SCHEMA_VERSION,
            "pipeline": self.pipeline,
            "input": self.input_count,
            "emitted": self.emitted_count,
            "skipped": dict(sorted(self.skipped.items())),
            "skipped_total": self.skipped_count,
            "cache": {
                "hits": self.cache_hits,
                "misses": self.cache_misses,
                "hit_rate": (self.cache_hits / total_cache) if total_cache else None,
            },
            "wall_time_s": round(self.wall_time_s, 3),
            **self.extra,
        }


def write_stats(stats: RunStatistics, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        json.dump(stats.as_dict(), handle, ensure_ascii=False, indent=2)
        handle.write("\n")
