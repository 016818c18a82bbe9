"""Config parsing, validation, and mock endpoint fill-in."""

import json

import pytest

from judgekit.config import (
    ConfigError,
    MockSettings,
    PathSettings,
    RunConfig,
    apply_mock_endpoints,
    config_from_dict,
    load_config,
)
from judgekit.gateway import ModelEndpoint


def full_dict():
    return {
        "endpoints": {
            "judge": {"base_url": "http://j.example", "model_id": "judge-x"},
            "embedder": {"base_url": "http://e.example", "model_id": "emb-x"},
            "referee": {"base_url": "http://r.example", "model_id": "ref-x"},
            "generators": [
                {"base_url": "http://g.example", "model_id": f"gen-{i}"}
                for i in range(4)
            ],
        },
        "sampling": {"temperatures": [0.5, 0.7], "picks_per_model": 2},
        "paths": {"tasks": "my/tasks.jsonl"},
        "seed": 11,
        "parallelism": 3,
        "repair_budget": 1,
        "max_skip_rate": 0.5,
        "aspects": ["Coherence"],
        "mock": {"enabled": True, "violation_rate": 0.1},
    }


class TestConfigFromDict:
    def test_full_round(self):
        config = config_from_dict(full_dict())
        assert config.judge.model_id == "judge-x"
        assert config.embedder.kind == "embedding"
        assert len(config.generators) == 4
        assert config.sampling.temperatures == (0.5, 0.7)
        assert config.paths.tasks == "my/tasks.jsonl"
        assert config.seed == 11
        assert config.aspect_names == ("Coherence",)
        assert config.mock.violation_rate == 0.1

    def test_empty_dict_gives_defaults(self):
        config = config_from_dict({})
        assert config.judge is None
        assert config.parallelism == 8
        assert config.max_skip_rate == 0.2
        assert config.paths.preferences == "out/judge_dpo.jsonl"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys.*retires"):
            config_from_dict({"retires": 3})

    def test_unknown_path_key_rejected(self):
        with pytest.raises(ConfigError, match="paths"):
            config_from_dict({"paths": {"output": "x"}})

    def test_unknown_mock_key_rejected(self):
        with pytest.raises(ConfigError, match="mock"):
            config_from_dict({"mock": {"chaos": True}})

    def test_invalid_endpoint_named(self):
        with pytest.raises(ConfigError, match="endpoints.judge"):
            config_from_dict({"endpoints": {"judge": {"model_id": "no-url"}}})

    def test_non_mapping_root_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict(["not", "a", "mapping"])


class TestValidate:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_parallelism_floor(self):
        with pytest.raises(ConfigError, match="parallelism"):
            RunConfig(parallelism=0).validate()

    def test_skip_rate_range(self):
        with pytest.raises(ConfigError, match="max_skip_rate"):
            RunConfig(max_skip_rate=1.5).validate()

    def test_colliding_output_paths(self):
        paths = PathSettings(candidates="out/same.jsonl", preferences="out/same.jsonl")
        with pytest.raises(ConfigError, match="both point at"):
            RunConfig(paths=paths).validate()

    def test_unset_api_key_env_rejected_without_mock(self, monkeypatch):
        monkeypatch.delenv("JUDGE_KEY_VAR", raising=False)
        endpoint = ModelEndpoint(
            "http://j.example", "judge-x", api_key_ref="JUDGE_KEY_VAR"
        )
        with pytest.raises(ConfigError, match="JUDGE_KEY_VAR"):
            RunConfig(judge=endpoint).validate()
        monkeypatch.setenv("JUDGE_KEY_VAR", "sk-1")
        RunConfig(judge=endpoint).validate()

    def test_mock_mode_skips_key_check(self, monkeypatch):
        monkeypatch.delenv("JUDGE_KEY_VAR", raising=False)
        endpoint = ModelEndpoint(
            "http://j.example", "judge-x", api_key_ref="JUDGE_KEY_VAR"
        )
        RunConfig(judge=endpoint, mock=MockSettings(enabled=True)).validate()

    def test_require_role(self):
        config = RunConfig()
        with pytest.raises(ConfigError, match="judge"):
            config.require("judge")
        with pytest.raises(ConfigError, match="generator"):
            config.require_generators()


class TestLoadConfig:
    def test_none_means_defaults(self):
        assert load_config(None) == RunConfig()

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.yaml"))

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 9\nparallelism: 2\n", encoding="utf-8")
        config = load_config(str(path))
        assert config.seed == 9 and config.parallelism == 2

    def test_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 4}), encoding="utf-8")
        assert load_config(str(path)).seed == 4

    def test_unparseable_yaml_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_config(str(path))


class TestApplyMockEndpoints:
    def test_fills_missing_endpoints(self):
        config = apply_mock_endpoints(RunConfig())
        assert config.mock.enabled
        assert config.judge.model_id == "mock-judge"
        assert config.embedder.kind == "embedding"
        assert [g.model_id for g in config.generators] == [
            "mock-gen-1", "mock-gen-2", "mock-gen-3", "mock-gen-4",
        ]

    def test_keeps_explicit_endpoints(self):
        mine = ModelEndpoint("http://real.example", "real-judge")
        config = apply_mock_endpoints(RunConfig(judge=mine))
        assert config.judge is mine
        assert config.referee.model_id == "mock-referee"
