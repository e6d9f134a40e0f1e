import csv
import json

import numpy as np
import pytest

from bench import DEFAULT_CONFIGS, DIRECTIONS, run_protocol, write_reports
from bench_data import ContinualProtocol
from errors import DomainError
from protocol_templates import ProtocolTemplateManager
from trainer import CONFIG_PRESETS, TrainConfig


@pytest.fixture(scope="module")
def tiny_protocol():
    return ProtocolTemplateManager().build_protocol(
        "joint-shift-3", shots=1, unlabeled_count=2, test_count=2, base_labeled=20)


@pytest.fixture(scope="module")
def tiny_report(tiny_protocol):
    return run_protocol(tiny_protocol, configs=["vanilla", "jascl"], seeds=[0],
                        train=TrainConfig(lr=0.3, epochs=1, batch_size=2),
                        base_train=TrainConfig(lr=0.5, epochs=2, batch_size=4), image_size=(16, 16))


class TestRunProtocol:
    def test_one_cell_per_config_and_seed(self, tiny_report, tiny_protocol):
        assert [(c.config_name, c.seed) for c in tiny_report.cells] == [("vanilla", 0), ("jascl", 0)]
        for cell in tiny_report.cells:
            assert len(cell.reports) == len(tiny_protocol.sessions)
            assert cell.reports[0].harmonic is None
            assert all(0.0 <= r.mean_dice <= 1.0 for r in cell.reports)

    def test_base_session_is_shared(self, tiny_report):
        vanilla = tiny_report.cell("vanilla", 0)
        jascl = tiny_report.cell("jascl", 0)
        assert vanilla.reports[0].to_dict() == jascl.reports[0].to_dict()

    def test_aggregates(self, tiny_report):
        aggregates = tiny_report.aggregates()
        assert set(aggregates) == {"vanilla", "jascl"}
        assert len(aggregates["jascl"]["sessions"]) == 3

    def test_directions_cover_present_pairs(self, tiny_report):
        directions = tiny_report.directions()
        assert directions["session"] == 1
        assert [(c["config"], c["baseline"]) for c in directions["comparisons"]] == [("jascl", "vanilla")]
        assert 0 <= directions["comparisons"][0]["wins"] <= 1
        assert len(directions["vanilla_seen_drop"]) == 1
        assert "directions" in tiny_report.to_dict()

    def test_default_configs_include_unlabeled_ablation(self):
        assert "jascl-no-unlabeled" in DEFAULT_CONFIGS
        assert ("jascl", "jascl-no-unlabeled") in DIRECTIONS

    def test_write_reports(self, tiny_report, tmp_path):
        written = write_reports(tiny_report, tmp_path)
        names = {p.relative_to(tmp_path).as_posix() for p in written}
        assert {"report.json", "report.csv", "training/vanilla_seed0.csv", "training/jascl_seed0.csv"} <= names
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["configs"] == ["vanilla", "jascl"]
        with open(tmp_path / "report.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert rows and set(rows[0]) == {"config", "seed", "session", "test_session", "class", "dice", "iou"}

    def test_deterministic(self, tiny_report, tiny_protocol):
        again = run_protocol(tiny_protocol, configs=["jascl"], seeds=[0],
                             train=TrainConfig(lr=0.3, epochs=1, batch_size=2),
                             base_train=TrainConfig(lr=0.5, epochs=2, batch_size=4), image_size=(16, 16))
        assert again.cell("jascl", 0).to_dict() == tiny_report.cell("jascl", 0).to_dict()

    def test_rejects_unknown_config_and_empty_seeds(self, tiny_protocol):
        with pytest.raises(DomainError):
            run_protocol(tiny_protocol, configs=["ewc"])
        with pytest.raises(DomainError):
            run_protocol(tiny_protocol, seeds=[])

    def test_featurizer_frozen_across_sessions(self, tiny_report):
        for cell in tiny_report.cells:
            assert len({log.featurizer_fingerprint for log in cell.logs}) == 1
        assert len({cell.logs[0].featurizer_fingerprint for cell in tiny_report.cells}) == 1

    def test_single_session_protocol_ignores_config(self, tiny_protocol):
        protocol = ContinualProtocol("base-only", tiny_protocol.sessions[:1])
        report = run_protocol(protocol, configs=list(CONFIG_PRESETS), seeds=[1],
                              train=TrainConfig(lr=0.3, epochs=1, batch_size=2),
                              base_train=TrainConfig(lr=0.5, epochs=2, batch_size=4), image_size=(16, 16))
        first = report.cells[0].reports[0].to_dict()
        assert all(cell.reports[0].to_dict() == first for cell in report.cells)
        losses = [cell.logs[0].step_losses for cell in report.cells]
        assert all(curve == losses[0] for curve in losses)


ACCEPTANCE_SEEDS = [0, 1, 2, 3, 4]


@pytest.mark.slow
class TestBenchmarkAcceptance:
    """Default joint-shift protocol at 32 x 32, five shots, fifty unlabeled images, five seeds."""

    @pytest.fixture(scope="class")
    def report(self):
        protocol = ProtocolTemplateManager().build_protocol("joint-shift-3")
        return run_protocol(protocol, seeds=ACCEPTANCE_SEEDS, train=TrainConfig(),
                            base_train=TrainConfig(epochs=8), image_size=(32, 32), jobs=4)

    def test_base_session_learns(self, report):
        assert all(cell.reports[0].mean_dice > 0.3 for cell in report.cells)

    def test_new_classes_are_learned(self, report):
        for seed in report.seeds:
            assert report.cell("jascl", seed).reports[1].new > 0.0

    def test_vanilla_forgets(self, report):
        drops = report.seen_drop("vanilla", 1)
        assert float(np.mean(drops)) >= 0.30
        assert sum(d > 0 for d in drops) == len(drops)

    def test_full_method_beats_vanilla(self, report):
        assert report.wins_over("jascl", "vanilla", 1) >= 4

    @pytest.mark.parametrize("config_name", ["gas-only", "pas-only"])
    def test_each_mechanism_beats_vanilla(self, report, config_name):
        assert report.wins_over(config_name, "vanilla", 1) >= 3

    def test_unlabeled_data_helps(self, report):
        assert report.wins_over("jascl", "jascl-no-unlabeled", 1) >= 4

    def test_measured_precision_recorded(self, report):
        for seed in report.seeds:
            log = report.cell("jascl", seed).logs[1]
            assert any(e.measured_f is not None for e in log.epochs)
            assert report.cell("jascl-no-unlabeled", seed).logs[1].final_coverage_precision() is None
