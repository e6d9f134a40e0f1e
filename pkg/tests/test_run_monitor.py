import json
import math
from types import SimpleNamespace

import pytest

from dynamics import DynamicsParams, asymptotic_error, improvement_threshold
from orchestrator import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, LabOrchestrator
from run_config import RunConfig
from run_monitor import RunMonitor, dump_json
from trainer import EpochStats, TrainingLog


class TestRunMonitor:
    def test_artifacts_are_canonical(self, tmp_path):
        monitor = RunMonitor(str(tmp_path))
        path = monitor.write_json("a/b.json", {"z": 1, "a": [1.5, None]}, "dynamics")
        assert path.read_text() == dump_json({"a": [1.5, None], "z": 1})
        assert monitor.artifacts == ["a/b.json"]

    def test_nan_is_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            RunMonitor(str(tmp_path)).write_json("x.json", {"v": math.nan})

    def test_events_are_appended_as_json_lines(self, tmp_path):
        monitor = RunMonitor(str(tmp_path))
        monitor.log_command_start("validate-theory")
        monitor.log_check_result("validate-theory", "kl_self_zero", True, "100 cases hold")
        monitor.log_check_result("validate-theory", "f_ratio_bounds", False, "1 of 10 cases fail")
        monitor.log_command_end("validate-theory", 1, "failed invariants: f_ratio_bounds")
        lines = (tmp_path / "logs" / "events.jsonl").read_text().splitlines()
        events = [json.loads(line) for line in lines]
        assert [e["event_type"] for e in events] == ["command_start", "check_result", "check_result", "command_end"]
        metrics = monitor.get_command_metrics("validate-theory")
        assert (metrics["checks"], metrics["passed_checks"], metrics["failed_checks"]) == (2, 1, 1)
        assert metrics["exit_status"] == 1
        assert [e["metadata"]["check"] for e in monitor.get_failed_checks()] == ["f_ratio_bounds"]

    def test_csv_writer(self, tmp_path):
        monitor = RunMonitor(str(tmp_path))
        path = monitor.write_csv("t.csv", [{"step": 0, "value": 0.5}], ["step", "value"])
        assert path.read_text() == "step,value\n0,0.5\n"


class TestOrchestrator:
    def test_unknown_command(self, tmp_path):
        orchestrator = LabOrchestrator(RunConfig(out_dir=str(tmp_path)))
        assert orchestrator.execute("train") == EXIT_CONFIG
        assert orchestrator.get_run_status("train")["status"] == "failed"

    def test_report_without_outputs(self, tmp_path):
        orchestrator = LabOrchestrator(RunConfig(out_dir=str(tmp_path)))
        assert orchestrator.execute("report") == EXIT_FAILED
        status = orchestrator.get_run_status("report")
        assert "no prior outputs" in status["error"]
        assert status["artifacts"] == ["resolved_config.json"]

    def test_dynamics_status(self, tmp_path):
        config = RunConfig(out_dir=str(tmp_path))
        config = config.model_copy(update={"dynamics": config.dynamics.model_copy(update={"monte_carlo": False})})
        orchestrator = LabOrchestrator(config)
        assert orchestrator.execute("dynamics") == EXIT_OK
        status = orchestrator.get_run_status("dynamics")
        assert status["status"] == "completed"
        assert "dynamics/methods.json" in status["artifacts"]
        assert status["metrics"]["artifacts"] == len(status["artifacts"])
        header = (tmp_path / "dynamics" / "trajectory.csv").read_text().splitlines()[0]
        assert header == "step,analytic"
        unfiltered = (tmp_path / "dynamics" / "trajectory_unfiltered.csv").read_text().splitlines()
        assert unfiltered[0] == "step,analytic"
        assert len(unfiltered) == config.dynamics.trajectory_steps + 2

    def test_dynamics_heatmap_keyed_by_coverage_and_precision(self, tmp_path):
        config = RunConfig(out_dir=str(tmp_path))
        config = config.model_copy(update={"dynamics": config.dynamics.model_copy(update={"monte_carlo": False})})
        assert LabOrchestrator(config).execute("dynamics") == EXIT_OK
        heatmap = json.loads((tmp_path / "dynamics" / "heatmap.json").read_text())
        assert heatmap["f_grid"] == [float(f) for f in config.dynamics.f_grid]
        assert heatmap["rho_grid"] == [float(r) for r in config.dynamics.rho_sweep]
        assert len(heatmap["grid"]) == len(heatmap["f_grid"])
        assert all(len(row) == len(heatmap["rho_grid"]) for row in heatmap["grid"])
        for i, f in enumerate(heatmap["f_grid"]):
            for j, rho in enumerate(heatmap["rho_grid"]):
                params = DynamicsParams(**{**heatmap["params"], "f": f, "rho": rho})
                assert heatmap["grid"][i][j] == pytest.approx(asymptotic_error(params))

    def test_dynamics_trajectory_carries_monte_carlo_columns(self, tmp_path):
        config = RunConfig(out_dir=str(tmp_path))
        config = config.model_copy(update={"dynamics": config.dynamics.model_copy(
            update={"trajectory_steps": 10, "mc_population": 1000, "mc_replicates": 3})})
        assert LabOrchestrator(config).execute("dynamics") == EXIT_OK
        lines = (tmp_path / "dynamics" / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "step,analytic,mc_mean,mc_stderr"
        assert len(lines) == 12


def _log(session: int, f, rho) -> TrainingLog:
    stats = EpochStats(0, 1.0, 0.1, 0.0, 1.1, accepted_pct=None if f is None else 100.0 * f,
                       measured_f=f, measured_rho=rho)
    return TrainingLog(session, "fingerprint", epochs=[stats])


class TestDynamicsProjection:
    def test_rows_follow_the_recurrence(self, tmp_path):
        orchestrator = LabOrchestrator(RunConfig(out_dir=str(tmp_path)))
        report = SimpleNamespace(cells=[SimpleNamespace(config_name="jascl", seed=3, logs=[
            _log(0, None, None), _log(1, 0.0, None), _log(2, 0.6, 0.0), _log(3, 0.9, 0.95),
        ])])
        projection = orchestrator._dynamics_projection(report)
        rows = projection["rows"]
        assert [row["session"] for row in rows] == [2, 3]
        base = DynamicsParams(epsilon0=projection["epsilon0"], gamma=projection["gamma"], alpha=projection["alpha"])
        for row in rows:
            limit = asymptotic_error(base.with_values(f=row["measured_f"], rho=row["measured_rho"]))
            assert row["asymptotic_error"] == pytest.approx(limit)
            assert row["improves"] == (row["measured_rho"] > 0)
            assert row["threshold"] == pytest.approx(improvement_threshold(row["measured_f"], base.gamma))
            if row["measured_rho"] > max(row["threshold"], 0.0):
                assert row["improves"]
        assert rows[0]["asymptotic_error"] == pytest.approx(base.epsilon0)
