import csv
import json
from pathlib import Path

import pytest

from main import collect_overrides, build_parser, run

FAST = {
    "validate_theory": {
        "kl_trials": 50, "scenario_trials": 50, "landscapes": 10, "quadratic_pairs": 2, "quadratic_draws": 10000,
        "stats_draws": 200, "memory_models": 10, "dynamics_trials": 50, "pixel_trials": 100,
        "mc_population": 2000, "mc_replicates": 5, "mc_steps": 10,
    },
    "dynamics": {"trajectory_steps": 40, "mc_population": 2000, "mc_replicates": 4},
    "gas_landscape": {"landscapes": 3, "dimension": 4, "mc_draws": 2000},
    "bench": {
        "configs": ["vanilla", "jascl"], "seeds": [0], "image_size": [16, 16], "shots": 1,
        "unlabeled_count": 2, "test_count": 2, "save_data": True,
        "train": {"lr": 0.3, "epochs": 1, "batch_size": 4},
        "base_train": {"lr": 0.5, "epochs": 1, "batch_size": 8},
    },
}


@pytest.fixture
def fast_config(tmp_path) -> Path:
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


def invoke(command, config, out, *extra) -> int:
    return run([command, "--config", str(config), "--out", str(out), *extra])


def artifact_bytes(out: Path):
    return {p.relative_to(out).as_posix(): p.read_bytes()
            for p in sorted(out.rglob("*")) if p.is_file() and p.relative_to(out).parts[0] != "logs"}


class TestExitStatus:
    def test_help_and_templates(self):
        assert run(["help"]) == 0
        assert run(["templates"]) == 0

    def test_unknown_command(self):
        assert run(["train-everything"]) == 2

    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"dynamics": {"epsilon_zero": 0.3}}')
        assert invoke("dynamics", bad, tmp_path / "out") == 2

    def test_invalid_flag_value(self, fast_config, tmp_path):
        assert invoke("dynamics", fast_config, tmp_path / "out", "--gamma", "1.5") == 2

    def test_report_without_outputs_fails(self, fast_config, tmp_path):
        assert invoke("report", fast_config, tmp_path / "empty") == 1


class TestDynamicsCommand:
    def test_sweep_reproduces_hand_limit(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("dynamics", fast_config, out) == 0
        with open(out / "dynamics" / "rho_sweep.csv", newline="") as f:
            rows = {float(r["rho"]): r for r in csv.DictReader(f)}
        assert float(rows[0.9]["asymptotic_error"]) == pytest.approx(0.1875, abs=1e-12)
        assert rows[0.0]["improves"] == "False"
        methods = json.loads((out / "dynamics" / "methods.json").read_text())
        assert methods["threshold"] == pytest.approx(-0.5)
        assert (out / "resolved_config.json").exists()
        assert (out / "logs" / "lab.log").exists()

    def test_flags_override_config(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("dynamics", fast_config, out, "--f", "1.0", "--rho-sweep", "0", "1") == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["dynamics"]["f"] == 1.0
        assert resolved["dynamics"]["rho_sweep"] == [0.0, 1.0]

    def test_rerun_is_byte_identical(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("dynamics", fast_config, out) == 0
        first = artifact_bytes(out)
        assert invoke("dynamics", fast_config, out) == 0
        assert artifact_bytes(out) == first


class TestOtherCommands:
    def test_validate_theory(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("validate-theory", fast_config, out) == 0
        summary = json.loads((out / "theory_summary.json").read_text())
        assert summary["passed"] is True

    def test_gas_landscape_is_reproducible(self, fast_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert invoke("gas-landscape", fast_config, a) == 0
        assert invoke("gas-landscape", fast_config, b) == 0
        kl = json.loads((a / "gas_landscape" / "kl_comparison.json").read_text())
        hand = next(s for s in kl["scenarios"] if s["name"] == "hand-shift")
        assert hand["kl"]["kl_static"] == pytest.approx(0.25)
        assert hand["static_condition"] is True
        for name in ("kl_comparison.json", "adversarial.json", "epsilon_sweep.json", "noise_variance.json"):
            assert (a / "gas_landscape" / name).read_bytes() == (b / "gas_landscape" / name).read_bytes()

    def test_bench_then_report(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("bench", fast_config, out) == 0
        assert (out / "bench" / "report.json").exists()
        assert (out / "bench" / "data" / "seed0" / "manifest.json").exists()
        projection = json.loads((out / "bench" / "dynamics_projection.json").read_text())
        assert {row["config"] for row in projection["rows"]} <= {"jascl"}
        assert invoke("report", fast_config, out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert "bench" in summary["sections"]


def test_overrides_skip_unset_flags():
    args = build_parser().parse_args(["dynamics", "--seeds", "1", "2"])
    overrides = {k: v for k, v in collect_overrides(args).items() if v is not None}
    assert overrides == {"bench.seeds": [1, 2]}


class TestListFlags:
    def test_comma_separated_epsilons(self):
        args = build_parser().parse_args(["gas-landscape", "--epsilon-sweep", "1e-6,1e-7,1e-8,1e-9"])
        assert collect_overrides(args)["gas_landscape.epsilon_sweep"] == [1e-6, 1e-7, 1e-8, 1e-9]

    def test_mixed_forms_flatten(self):
        args = build_parser().parse_args(["bench", "--seeds", "0,1", "2", "--configs", "vanilla,jascl",
                                          "--rho-sweep", "0.5", "0.7,0.9"])
        overrides = collect_overrides(args)
        assert overrides["bench.seeds"] == [0, 1, 2]
        assert overrides["bench.configs"] == ["vanilla", "jascl"]
        assert overrides["dynamics.rho_sweep"] == [0.5, 0.7, 0.9]

    def test_comma_seeds_match_spaced_seeds(self):
        comma = collect_overrides(build_parser().parse_args(["bench", "--seeds", "1,2"]))
        spaced = collect_overrides(build_parser().parse_args(["bench", "--seeds", "1", "2"]))
        assert comma["bench.seeds"] == spaced["bench.seeds"] == [1, 2]

    def test_bad_list_entry_is_a_usage_error(self):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["gas-landscape", "--epsilon-sweep", "1e-6,tiny"])
        assert info.value.code == 2

    def test_comma_sweep_reaches_resolved_config(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert invoke("dynamics", fast_config, out, "--rho-sweep", "0,0.5,1") == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["dynamics"]["rho_sweep"] == [0.0, 0.5, 1.0]


def test_bench_projection_agrees_with_recurrence(fast_config, tmp_path):
    out = tmp_path / "out"
    assert invoke("bench", fast_config, out) == 0
    projection = json.loads((out / "bench" / "dynamics_projection.json").read_text())
    for row in projection["rows"]:
        assert row["measured_rho"] is not None
        assert row["improves"] == (row["measured_rho"] > 0 and row["measured_f"] > 0)
        if row["threshold"] is not None and row["measured_rho"] > max(row["threshold"], 0.0):
            assert row["improves"]
