"""Run configuration: one structured file (YAML or JSON) plus CLI flag
overrides, with all validation done before any network call."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .gateway import ModelEndpoint
from .orchestrator import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_RAG_TEMPERATURE,
    DEFAULT_REPAIR_BUDGET,
    DEFAULT_TEMPERATURES,
)

DEFAULT_PARALLELISM = 8
DEFAULT_MAX_SKIP_RATE = 0.2
MOCK_BASE_URL = "http://mock.invalid"
MOCK_GENERATOR_COUNT = 4


class ConfigError(ValueError):
    """Configuration is unusable; the CLI maps this to exit code 2."""


@dataclass(frozen=True)
class MockSettings:
    enabled: bool = False
    seed: int = 0
    violation_rate: float = 0.0
    position_bias: Optional[str] = None
    semantic_embeddings: bool = True
    embed_dim: int = 64


@dataclass(frozen=True)
class PathSettings:
    tasks: str = "data/tasks.jsonl"
    retrieval: str = "data/retrieval.jsonl"
    candidates: str = "out/candidates.jsonl"
    rag_candidates: str = "out/rag_candidates.jsonl"
    preferences: str = "out/judge_dpo.jsonl"
    rag_preferences: str = "out/generator_dpo.jsonl"
    judgment_log: str = "out/judge_judgments.jsonl"
    rag_judgment_log: str = "out/rag_judgments.jsonl"
    stats_dir: str = "out"
    cache_dir: Optional[str] = ".judgekit-cache"

    def output_paths(self) -> dict[str, str]:
        return {
            "candidates": self.candidates,
            "rag_candidates": self.rag_candidates,
            "preferences": self.preferences,
            "rag_preferences": self.rag_preferences,
            "judgment_log": self.judgment_log,
            "rag_judgment_log": self.rag_judgment_log,
        }


@dataclass(frozen=True)
class SamplingSettings:
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    picks_per_model: int = 1
    max_tokens: int = DEFAULT_MAX_TOKENS
    rag_temperature: float = DEFAULT_RAG_TEMPERATURE


@dataclass(frozen=True)
class RunConfig:
    judge: Optional[ModelEndpoint] = None
    embedder: Optional[ModelEndpoint] = None
    referee: Optional[ModelEndpoint] = None
    generators: tuple[ModelEndpoint, ...] = ()
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    templates_dir: Optional[str] = None
    seed: int = 0
    parallelism: int = DEFAULT_PARALLELISM
    repair_budget: int = DEFAULT_REPAIR_BUDGET
    max_skip_rate: float = DEFAULT_MAX_SKIP_RATE
    aspect_names: Optional[tuple[str, ...]] = None
    mock: MockSettings = field(default_factory=MockSettings)

    def validate(self) -> "RunConfig":
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.repair_budget < 0:
            raise ConfigError("repair_budget must be non-negative")
        if not 0.0 <= self.max_skip_rate <= 1.0:
            raise ConfigError("max_skip_rate must be in [0, 1]")
        for t in self.sampling.temperatures:
            if not 0.0 <= t <= 2.0:
                raise ConfigError(f"sampling temperature {t} is out of [0, 2]")
        if self.sampling.picks_per_model < 1:
            raise ConfigError("picks_per_model must be at least 1")
        outputs = self.paths.output_paths()
        resolved: dict[str, str] = {}
        for name, path in outputs.items():
            key = str(Path(path))
            if key in resolved:
                raise ConfigError(
                    f"output paths {resolved[key]} and {name} both point at {path}"
                )
            resolved[key] = name
        if not self.mock.enabled:
            for endpoint in self._required_endpoints():
                if endpoint.api_key_ref and not os.environ.get(endpoint.api_key_ref):
                    raise ConfigError(
                        f"endpoint {endpoint.model_id} needs env var "
                        f"{endpoint.api_key_ref!r}, which is unset"
                    )
        return self

    def _required_endpoints(self) -> list[ModelEndpoint]:
        endpoints = [e for e in (self.judge, self.embedder, self.referee) if e]
        endpoints.extend(self.generators)
        return endpoints

    def require(self, role: str) -> ModelEndpoint:
        endpoint = getattr(self, role, None)
        if endpoint is None:
            raise ConfigError(
                f"no {role} endpoint configured; add endpoints.{role} or pass --mock"
            )
        return endpoint

    def require_generators(self) -> tuple[ModelEndpoint, ...]:
        if not self.generators:
            raise ConfigError("no generator endpoints configured; add endpoints.generators")
        return self.generators


def _endpoint_from(obj: dict, kind: str, where: str) -> ModelEndpoint:
    try:
        return ModelEndpoint(
            base_url=obj["base_url"],
            model_id=obj["model_id"],
            kind=obj.get("kind", kind),
            api_key_ref=obj.get("api_key_ref"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid endpoint under {where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    endpoints = data.get("endpoints") or {}
    judge = embedder = referee = None
    generators: tuple[ModelEndpoint, ...] = ()
    if "judge" in endpoints:
        judge = _endpoint_from(endpoints["judge"], "chat", "endpoints.judge")
    if "embedder" in endpoints:
        embedder = _endpoint_from(endpoints["embedder"], "embedding", "endpoints.embedder")
    if "referee" in endpoints:
        referee = _endpoint_from(endpoints["referee"], "chat", "endpoints.referee")
    if "generators" in endpoints:
        generators = tuple(
            _endpoint_from(e, "chat", f"endpoints.generators[{i}]")
            for i, e in enumerate(endpoints["generators"])
        )
    sampling_data = data.get("sampling") or {}
    sampling = SamplingSettings(
        temperatures=tuple(sampling_data.get("temperatures", DEFAULT_TEMPERATURES)),
        picks_per_model=sampling_data.get("picks_per_model", 1),
        max_tokens=sampling_data.get("max_tokens", DEFAULT_MAX_TOKENS),
        rag_temperature=sampling_data.get("rag_temperature", DEFAULT_RAG_TEMPERATURE),
    )
    paths_data = data.get("paths") or {}
    try:
        paths = PathSettings(**paths_data)
    except TypeError as exc:
        raise ConfigError(f"unknown key under paths: {exc}") from exc
    mock_data = data.get("mock") or {}
    try:
        mock = MockSettings(**mock_data)
    except TypeError as exc:
        raise ConfigError(f"unknown key under mock: {exc}") from exc
    aspect_names = data.get("aspects")
    known = {
        "endpoints", "sampling", "paths", "mock", "aspects", "templates_dir",
        "seed", "parallelism", "repair_budget", "max_skip_rate",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(
        judge=judge,
        embedder=embedder,
        referee=referee,
        generators=generators,
        sampling=sampling,
        paths=paths,
        templates_dir=data.get("templates_dir"),
        seed=data.get("seed", 0),
        parallelism=data.get("parallelism", DEFAULT_PARALLELISM),
        repair_budget=data.get("repair_budget", DEFAULT_REPAIR_BUDGET),
        max_skip_rate=data.get("max_skip_rate", DEFAULT_MAX_SKIP_RATE),
        aspect_names=tuple(aspect_names) if aspect_names else None,
        mock=mock,
    )


def load_config(path: Optional[str]) -> RunConfig:
    """Read a YAML or JSON config file; no file at all means all defaults."""
    if path is None:
        return RunConfig()
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = file_path.read_text(encoding="utf-8")
    try:
        if file_path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        elif file_path.suffix == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text) or {}
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def apply_mock_endpoints(config: RunConfig) -> RunConfig:
    """Fill any missing endpoint with a harness endpoint and flip mock on.

    Explicitly configured endpoints are kept, so a config can mix one real
    endpoint with mock stand-ins if it ever needs to.
    """
    mock = replace(config.mock, enabled=True)
    judge = config.judge or ModelEndpoint(MOCK_BASE_URL, "mock-judge", kind="chat")
    embedder = config.embedder or ModelEndpoint(MOCK_BASE_URL, "mock-embed", kind="embedding")
    referee = config.referee or ModelEndpoint(MOCK_BASE_URL, "mock-referee", kind="chat")
    generators = config.generators or tuple(
        ModelEndpoint(MOCK_BASE_URL, f"mock-gen-{i + 1}", kind="chat")
        for i in range(MOCK_GENERATOR_COUNT)
    )
    return replace(
        config,
        judge=judge,
        embedder=embedder,
        referee=referee,
        generators=generators,
        mock=mock,
    )
