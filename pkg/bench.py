"""Continual benchmark runner.

Every (configuration, seed) cell generates the protocol data for its seed,
trains the base session with all incremental mechanisms off, then trains
each later session with the cell's configuration and evaluates on the test
sets of all sessions seen so far.
"""

import asyncio
import csv
import json
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bench_data import NUM_CLASSES, ContinualProtocol, SessionData, generate_protocol_data
from bench_metrics import ContinualScoreMatrix, MetricsReport, evaluate_predictions, total_drop
from errors import DomainError
from pixel_model import PixelClassifierModel
from trainer import CONFIG_PRESETS, TrainConfig, TrainingLog, preset_config, train_session

logger = logging.getLogger(__name__)

DEFAULT_CONFIGS = ("vanilla", "gas-only", "pas-only", "jascl", "jascl-no-unlabeled")
# (config, baseline) pairs compared seed by seed on the first incremental session
DIRECTIONS = (
    ("jascl", "vanilla"),
    ("gas-only", "vanilla"),
    ("pas-only", "vanilla"),
    ("jascl", "jascl-no-unlabeled"),
)


def evaluate(model: PixelClassifierModel, datasets: Sequence[SessionData], protocol: ContinualProtocol,
             session_index: int) -> MetricsReport:
    tests = [datasets[s].test for s in range(session_index + 1)]
    if any(len(test) == 0 for test in tests):
        raise DomainError("cannot evaluate on an empty test set")
    predictions = [model.predict(test.images) for test in tests]
    return evaluate_predictions(predictions, [test.labels for test in tests], protocol, session_index)


@dataclass
class CellResult:
    config_name: str
    seed: int
    reports: List[MetricsReport] = field(default_factory=list)
    logs: List[TrainingLog] = field(default_factory=list)
    score_matrix: Optional[ContinualScoreMatrix] = None

    def trajectory(self) -> List[float]:
        return [r.mean_dice for r in self.reports]

    def total_drop(self) -> Optional[float]:
        scores = self.trajectory()
        return total_drop(scores) if scores and scores[0] > 0 else None

    def to_dict(self) -> Dict[str, Any]:
        continual = self.score_matrix.compute_all() if self.score_matrix else {}
        return {
            "config": self.config_name,
            "seed": self.seed,
            "sessions": [r.to_dict() for r in self.reports],
            "trajectory": self.trajectory(),
            "total_drop": self.total_drop(),
            "score_matrix": self.score_matrix.to_list() if self.score_matrix else None,
            **continual,
            "training": [log.to_dict() for log in self.logs],
        }


def run_cell(protocol: ContinualProtocol, config_name: str, seed: int, train: TrainConfig, base_train: TrainConfig,
             image_size: Tuple[int, int]) -> CellResult:
    datasets = generate_protocol_data(protocol, image_size, seed)
    model = PixelClassifierModel.initialize(seed, NUM_CLASSES)
    base_config = preset_config("vanilla", base_train)
    session_config = preset_config(config_name, train)
    result = CellResult(config_name=config_name, seed=seed,
                        score_matrix=ContinualScoreMatrix(len(protocol.sessions)))

    for data in datasets:
        t = data.spec.index
        model, log = train_session(model, data, base_config if t == 0 else session_config, seed)
        report = evaluate(model, datasets, protocol, t)
        for s in range(t + 1):
            score = report.session_mean(s)
            if score is not None:
                result.score_matrix.update(t, s, score)
        result.reports.append(report)
        result.logs.append(log)
        logger.info(f"{config_name} seed {seed} session {t}: mean dice {report.mean_dice:.4f}"
                    + (f" harmonic {report.harmonic:.4f}" if report.harmonic is not None else ""))
    return result


@dataclass
class ComparisonReport:
    protocol: ContinualProtocol
    configs: List[str]
    seeds: List[int]
    cells: List[CellResult]

    def cell(self, config_name: str, seed: int) -> CellResult:
        for cell in self.cells:
            if cell.config_name == config_name and cell.seed == seed:
                return cell
        raise KeyError((config_name, seed))

    def harmonic(self, config_name: str, session: int) -> List[Optional[float]]:
        return [self.cell(config_name, seed).reports[session].harmonic for seed in self.seeds]

    def wins_over(self, config_name: str, baseline: str, session: int) -> int:
        pairs = zip(self.harmonic(config_name, session), self.harmonic(baseline, session))
        return sum(1 for a, b in pairs if a is not None and b is not None and a > b)

    def seen_drop(self, config_name: str, session: int) -> List[Optional[float]]:
        """Relative fall of seen-class Dice at `session` from the base session's score, per seed."""
        drops = []
        for seed in self.seeds:
            reports = self.cell(config_name, seed).reports
            base, seen = reports[0].new, reports[session].seen
            drops.append(1.0 - seen / base if base and seen is not None else None)
        return drops

    def directions(self, session: int = 1) -> Dict[str, Any]:
        if session >= len(self.protocol.sessions):
            return {}
        comparisons = [
            {"config": a, "baseline": b, "wins": self.wins_over(a, b, session), "seeds": len(self.seeds)}
            for a, b in DIRECTIONS if a in self.configs and b in self.configs
        ]
        summary: Dict[str, Any] = {"session": session, "comparisons": comparisons}
        if "vanilla" in self.configs:
            summary["vanilla_seen_drop"] = self.seen_drop("vanilla", session)
        return summary

    def aggregates(self) -> Dict[str, Dict[str, Any]]:
        summary = {}
        for name in self.configs:
            cells = [self.cell(name, seed) for seed in self.seeds]
            per_session = []
            for t in range(len(self.protocol.sessions)):
                harmonics = [c.reports[t].harmonic for c in cells if c.reports[t].harmonic is not None]
                per_session.append({
                    "mean_dice": float(np.mean([c.reports[t].mean_dice for c in cells])),
                    "miou": float(np.mean([c.reports[t].miou for c in cells])),
                    "harmonic": float(np.mean(harmonics)) if harmonics else None,
                })
            drops = [c.total_drop() for c in cells if c.total_drop() is not None]
            summary[name] = {
                "sessions": per_session,
                "total_drop": float(np.mean(drops)) if drops else None,
                "forgetting": float(np.mean([c.score_matrix.forgetting() for c in cells])),
                "bwt": float(np.mean([c.score_matrix.backward_transfer() for c in cells])),
            }
        return summary

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.to_dict(),
            "configs": list(self.configs),
            "seeds": list(self.seeds),
            "aggregates": self.aggregates(),
            "directions": self.directions(),
            "cells": [c.to_dict() for c in self.cells],
        }

    def csv_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for cell in self.cells:
            for report in cell.reports:
                for score in report.class_scores:
                    rows.append({
                        "config": cell.config_name,
                        "seed": cell.seed,
                        "session": report.session_index,
                        "test_session": score.session,
                        "class": score.class_id,
                        "dice": score.dice,
                        "iou": score.iou,
                    })
        return rows


async def _run_cells(protocol: ContinualProtocol, cells: List[Tuple[str, int]], train: TrainConfig,
                     base_train: TrainConfig, image_size: Tuple[int, int], executor: Executor) -> List[CellResult]:
    loop = asyncio.get_running_loop()
    futures = [
        loop.run_in_executor(executor, run_cell, protocol, name, seed, train, base_train, image_size)
        for name, seed in cells
    ]
    # gather preserves submission order, so results merge by cell index
    return list(await asyncio.gather(*futures))


def run_protocol(protocol: ContinualProtocol, configs: Sequence[str] = DEFAULT_CONFIGS, seeds: Sequence[int] = (0,),
                 train: Optional[TrainConfig] = None, base_train: Optional[TrainConfig] = None,
                 image_size: Tuple[int, int] = (32, 32), jobs: int = 1) -> ComparisonReport:
    if not seeds:
        raise DomainError("run_protocol needs at least one seed")
    unknown = [c for c in configs if c not in CONFIG_PRESETS]
    if unknown:
        raise DomainError(f"unknown configurations {unknown}; choose from {sorted(CONFIG_PRESETS)}")
    train = train or TrainConfig()
    base_train = base_train or train
    cells = [(name, seed) for name in configs for seed in seeds]
    logger.info(f"running {len(cells)} cells of protocol {protocol.name} with {jobs} job(s)")

    executor: Executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else ThreadPoolExecutor(max_workers=1)
    with executor:
        results = asyncio.run(_run_cells(protocol, cells, train, base_train, image_size, executor))
    return ComparisonReport(protocol=protocol, configs=list(configs), seeds=list(seeds), cells=results)


def _write_csv(path: Path, rows: List[Dict[str, Any]], fieldnames: Sequence[str]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_reports(report: ComparisonReport, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    training_dir = out_dir / "training"
    training_dir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(report_path)

    csv_path = out_dir / "report.csv"
    _write_csv(csv_path, report.csv_rows(), ["config", "seed", "session", "test_session", "class", "dice", "iou"])
    written.append(csv_path)

    columns = ["session", "epoch", "ce_loss", "consistency_loss", "proto_loss", "total_loss",
               "accepted_pct", "measured_f", "measured_rho"]
    for cell in report.cells:
        path = training_dir / f"{cell.config_name}_seed{cell.seed}.csv"
        _write_csv(path, [row for log in cell.logs for row in log.rows()], columns)
        written.append(path)
    return written
