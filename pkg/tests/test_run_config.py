import json

import pytest

from errors import ConfigError
from run_config import DEFAULT_CONFIG_PATH, RunConfig, apply_overrides, load_run_config, parse_run_config


class TestLoading:
    def test_shipped_config_matches_defaults(self):
        assert load_run_config(DEFAULT_CONFIG_PATH).resolved() == RunConfig().resolved()

    def test_missing_explicit_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "absent.json"))

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 7, "dynamics": {"f": 0.25}}))
        config = load_run_config(str(path))
        assert config.seed == 7
        assert config.dynamics.f == 0.25
        assert config.dynamics.gamma == RunConfig().dynamics.gamma


class TestStrictness:
    def test_unknown_key_names_line_and_key(self):
        text = '{\n  "seed": 1,\n  "dynamics": {\n    "epsilon0": 0.3,\n    "epsilon_zero": 0.2\n  }\n}\n'
        with pytest.raises(ConfigError) as info:
            parse_run_config(text)
        assert info.value.key == "dynamics.epsilon_zero"
        assert info.value.line == 5
        assert "line 5" in str(info.value)

    def test_out_of_range_value(self):
        with pytest.raises(ConfigError) as info:
            parse_run_config('{"dynamics": {"rho_sweep": [0.5, 1.5]}}')
        assert info.value.key == "dynamics.rho_sweep"

    def test_malformed_json(self):
        with pytest.raises(ConfigError) as info:
            parse_run_config('{\n  "seed": 1,\n}')
        assert info.value.line == 3

    def test_nested_train_section_is_strict(self):
        with pytest.raises(ConfigError):
            parse_run_config('{"bench": {"train": {"learning_rate": 0.1}}}')


class TestOverrides:
    def test_dotted_keys(self):
        config = apply_overrides(RunConfig(), {"dynamics.f": 0.7, "bench.seeds": [3], "jobs": None})
        assert config.dynamics.f == 0.7
        assert config.bench.seeds == [3]
        assert config.jobs == 1

    def test_invalid_override(self):
        with pytest.raises(ConfigError) as info:
            apply_overrides(RunConfig(), {"dynamics.gamma": 1.5})
        assert info.value.key == "dynamics.gamma"
        assert info.value.line is None
