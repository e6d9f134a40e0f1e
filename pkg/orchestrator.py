import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

import dynamics
import gas
import numerics
from bench import run_protocol, write_reports
from bench_data import generate_protocol_data, save_protocol_data
from display import LabDisplay
from errors import ConfigError, LabError, TrainingDivergenceError
from protocol_templates import ProtocolTemplateManager
from run_config import RunConfig
from run_monitor import RunMonitor
from seeding import derive_seed, named_stream
from theory_checks import TheoryCheckEngine

COMMANDS = ("validate-theory", "dynamics", "gas-landscape", "bench", "report")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


class CommandStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class CommandRun:
    command: str
    timestamp: datetime
    status: CommandStatus = CommandStatus.PENDING
    exit_status: Optional[int] = None
    error: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)


class LabOrchestrator:
    """Runs one command against a resolved configuration and records what it wrote."""

    def __init__(self, config: RunConfig, display: Optional[LabDisplay] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.monitor = RunMonitor(str(self.out_dir))
        self.display = display or LabDisplay()
        self.runs: List[CommandRun] = []
        self.handlers = {
            "validate-theory": self._run_validate_theory,
            "dynamics": self._run_dynamics,
            "gas-landscape": self._run_gas_landscape,
            "bench": self._run_bench,
            "report": self._run_report,
        }

    def execute(self, command: str) -> int:
        run = CommandRun(command=command, timestamp=datetime.now())
        self.runs.append(run)
        if command not in self.handlers:
            run.status = CommandStatus.FAILED
            run.error = f"unknown command {command!r}; choose from {', '.join(COMMANDS)}"
            self.display.print_error(run.error)
            return EXIT_CONFIG

        self.monitor.log_command_start(command, {"seed": self.config.seed, "out_dir": str(self.out_dir)})
        run.status = CommandStatus.RUNNING
        try:
            self.monitor.write_json("resolved_config.json", self.config.resolved(), command)
            run.exit_status = self.handlers[command](command)
        except ConfigError as e:
            run.exit_status, run.error = EXIT_CONFIG, str(e)
        except TrainingDivergenceError as e:
            self.monitor.log_training_divergence(command, e.step, str(e))
            run.exit_status, run.error = EXIT_FAILED, str(e)
        except LabError as e:
            run.exit_status, run.error = EXIT_FAILED, str(e)

        if run.error:
            self.display.print_error(run.error)
        run.status = CommandStatus.COMPLETED if run.exit_status == EXIT_OK else CommandStatus.FAILED
        run.artifacts = list(self.monitor.artifacts)
        self.monitor.log_command_end(command, run.exit_status, run.error)
        return run.exit_status

    def get_run_status(self, command: str) -> Optional[Dict[str, Any]]:
        for run in reversed(self.runs):
            if run.command == command:
                return {
                    "command": run.command,
                    "status": run.status.value,
                    "exit_status": run.exit_status,
                    "error": run.error,
                    "artifacts": run.artifacts,
                    "metrics": self.monitor.get_command_metrics(command),
                }
        return None

    # validate-theory

    def _run_validate_theory(self, command: str) -> int:
        engine = TheoryCheckEngine(self.config.validate_theory, self.config.seed, self.config.dynamics.criteria)
        results = engine.run()
        for result in results:
            self.monitor.log_check_result(command, result.name, result.passed, result.detail,
                                          {"kind": result.kind.value,
                                           "duration_seconds": round(result.duration_seconds, 3)})
        summary = engine.summary(results)
        self.monitor.write_json("theory_summary.json", summary, command)
        self.display.print_check_summary(summary)
        if not summary["passed"]:
            self.runs[-1].error = f"failed invariants: {', '.join(summary['failed'])}"
            return EXIT_FAILED
        return EXIT_OK

    # dynamics

    def _dynamics_params(self) -> dynamics.DynamicsParams:
        section = self.config.dynamics
        return dynamics.DynamicsParams(epsilon0=section.epsilon0, gamma=section.gamma, alpha=section.alpha,
                                       f=section.f, rho=section.rho)

    def _run_dynamics(self, command: str) -> int:
        section = self.config.dynamics
        params = self._dynamics_params()

        filtered = dynamics.trajectory(params, dynamics.Mode.FILTERED, section.trajectory_steps)
        unfiltered = dynamics.trajectory(params, dynamics.Mode.UNFILTERED, section.trajectory_steps)
        rows = [{"step": t, "analytic": e} for t, e in enumerate(filtered)]
        columns = ["step", "analytic"]
        if section.monte_carlo:
            oracle = dynamics.monte_carlo_oracle(params, section.mc_population, section.trajectory_steps,
                                                 section.mc_replicates, derive_seed(self.config.seed,
                                                                                    "dynamics/monte_carlo"))
            for row, mc in zip(rows, oracle.rows()):
                row["mc_mean"] = mc["mc_mean"]
                row["mc_stderr"] = mc["mc_stderr"]
            columns += ["mc_mean", "mc_stderr"]
        self.monitor.write_csv("dynamics/trajectory.csv", rows, columns, command)
        self.monitor.write_csv("dynamics/trajectory_unfiltered.csv",
                               [{"step": t, "analytic": e} for t, e in enumerate(unfiltered)],
                               ["step", "analytic"], command)

        sweep = dynamics.precision_sweep(params, section.rho_sweep)
        self.monitor.write_csv("dynamics/rho_sweep.csv", sweep, ["rho", "asymptotic_error", "improves", "threshold"],
                               command)
        heatmap = dynamics.coverage_precision_heatmap(params, section.f_grid, section.rho_sweep)
        self.monitor.write_csv("dynamics/heatmap.csv", heatmap, ["f", "rho", "asymptotic_error"], command)
        self.monitor.write_json("dynamics/heatmap.json", {
            "params": params.to_dict(),
            "f_grid": [float(f) for f in section.f_grid],
            "rho_grid": [float(rho) for rho in section.rho_sweep],
            "cells": heatmap,
            "grid": [[cell["asymptotic_error"] for cell in heatmap if cell["f"] == float(f)]
                     for f in section.f_grid],
        }, command)

        c = section.criteria
        stats = dynamics.CriteriaStats(c.alpha1, c.alpha2, c.beta1, c.beta2, c.pi)
        precision = dynamics.dual_precision(stats)
        comparison = dynamics.compare_methods(stats, params.f, params.gamma, params.epsilon0, params.alpha)

        bank = section.memory_bank
        model = dynamics.MemoryBankModel(bank.eta, dynamics.piecewise_linear_response(bank.knots), bank.e0)
        memory_errors = dynamics.memory_bank_trajectory(model, bank.horizon)
        crossover = dynamics.crossover_step(model, precision.rho12, bank.horizon)
        self.monitor.write_csv(
            "dynamics/memory_bank.csv",
            [{"step": t, "memory_error": e, "memory_precision": 1.0 - e, "pas_precision": precision.rho12}
             for t, e in enumerate(memory_errors)],
            ["step", "memory_error", "memory_precision", "pas_precision"], command)

        self.monitor.write_json("dynamics/methods.json", {
            "params": params.to_dict(),
            "asymptotic_error": dynamics.asymptotic_error(params),
            "threshold": dynamics.improvement_threshold(params.f, params.gamma) if params.f > 0 else None,
            "convergence_step_bound": dynamics.convergence_step_bound(params),
            "dual_precision": precision.to_dict(),
            "gain_closed_form": dynamics.precision_gain_closed_form(stats),
            "methods": comparison.to_dict(),
            "memory_bank": {"eta": bank.eta, "e0": bank.e0, "final_error": memory_errors[-1],
                            "crossover_step": crossover},
        }, command)

        self.display.print_dynamics_sweep(sweep, params.epsilon0)
        self.display.print_method_comparison(comparison.to_dict())
        return EXIT_OK

    # gas-landscape

    def _kl_scenarios(self) -> List[Dict[str, Any]]:
        results = []
        for scenario in self.config.gas_landscape.kl_scenarios:
            fisher = numerics.FisherDiagonal(scenario.fisher_current)
            approx_error = np.asarray(scenario.approx_error) if scenario.approx_error is not None else None
            hist = np.asarray(scenario.fisher_hist) if scenario.fisher_hist is not None else None
            options = numerics.ComparisonOptions(
                optimal_gas_scale=approx_error is not None,
                approx_error=approx_error,
                static_lambda=scenario.static_lambda,
                memory_lambda=scenario.memory_lambda if hist is not None else None,
                fisher_hist=hist,
            )
            report = numerics.kl_comparison(fisher, options)
            bound = float(np.max(np.abs(approx_error))) if approx_error is not None else 0.0
            entry: Dict[str, Any] = {"name": scenario.name, "kl": report.to_dict(), "approx_error_bound": bound}
            if scenario.static_lambda is not None:
                _, scores = numerics.fisher_mismatch(fisher, scenario.static_lambda)
                entry["static_condition"] = numerics.mismatch_exceeds_approx_error(scores, bound)
            if hist is not None:
                entry["domain_shift"] = numerics.domain_shift_magnitude(numerics.FisherDiagonal(hist), fisher)
                _, scores = numerics.fisher_mismatch(fisher, scenario.memory_lambda * hist)
                entry["memory_condition"] = numerics.mismatch_exceeds_approx_error(scores, bound)
            results.append(entry)
        return results

    def _run_gas_landscape(self, command: str) -> int:
        section = self.config.gas_landscape

        scenarios = self._kl_scenarios()
        self.monitor.write_json("gas_landscape/kl_comparison.json", {"scenarios": scenarios}, command)

        rng = named_stream(self.config.seed, "gas_landscape/landscapes")
        landscapes = [gas.QuadraticLandscape.random(rng, section.dimension, section.max_condition)
                      for _ in range(section.landscapes)]
        adversarial = []
        for rho_radius in section.rho_sweep:
            comparisons = [gas.adversarial_comparison(landscape, rho_radius) for landscape in landscapes]
            ratios = np.array([c.ratio for c in comparisons])
            z_scores = []
            for index, (landscape, comparison) in enumerate(zip(landscapes, comparisons)):
                mean, stderr = gas.monte_carlo_quadratic_increase(
                    landscape, gas.gas_budget_scales(landscape, rho_radius), section.mc_draws,
                    derive_seed(self.config.seed, f"gas_landscape/mc/{rho_radius}/{index}"))
                z_scores.append(abs(mean - comparison.delta_gas) / stderr)
            adversarial.append({
                "rho_radius": rho_radius,
                "mean_ratio": float(np.mean(ratios)),
                "min_ratio": float(np.min(ratios)),
                "max_ratio": float(np.max(ratios)),
                "max_condition": max(l.condition_number for l in landscapes),
                "mean_delta_adv": float(np.mean([c.delta_adv for c in comparisons])),
                "mean_delta_gas": float(np.mean([c.delta_gas for c in comparisons])),
                "max_mc_z": float(np.max(z_scores)),
            })
        self.monitor.write_json("gas_landscape/adversarial.json", {
            "landscapes": [l.to_dict() for l in landscapes],
            "rows": adversarial,
        }, command)

        sums = np.asarray(section.buffer_sums, dtype=np.float64)
        epsilon_rows = []
        for epsilon in section.epsilon_sweep:
            scales = gas.GradientBuffer.from_sums(sums, epsilon).noise_scales().scales
            epsilon_rows.append({"epsilon": epsilon, "min_scale": float(np.min(scales)),
                                 "mean_scale": float(np.mean(scales)), "scales": scales.tolist()})
        self.monitor.write_json("gas_landscape/epsilon_sweep.json",
                                {"buffer_sums": sums.tolist(), "rows": epsilon_rows}, command)

        landscape = landscapes[0]
        scales = gas.gas_budget_scales(landscape, 1.0)
        noise_rows = []
        for variance in section.noise_variance_sweep:
            scaled = scales * math.sqrt(variance)
            mean, stderr = gas.monte_carlo_quadratic_increase(
                landscape, scaled, section.mc_draws, derive_seed(self.config.seed, f"gas_landscape/noise/{variance}"))
            noise_rows.append({"noise_variance": variance,
                               "expected_increase": gas.expected_quadratic_increase(landscape, scaled),
                               "mc_mean": mean, "mc_stderr": stderr})
        self.monitor.write_json("gas_landscape/noise_variance.json", {"rows": noise_rows}, command)

        self.display.print_kl_comparison(scenarios)
        self.display.print_adversarial(adversarial)
        return EXIT_OK

    # bench

    def _run_bench(self, command: str) -> int:
        section = self.config.bench
        protocol = ProtocolTemplateManager().build_protocol(
            section.protocol, shots=section.shots, unlabeled_count=section.unlabeled_count,
            test_count=section.test_count)
        image_size = tuple(section.image_size)
        report = run_protocol(protocol, section.configs, section.seeds, section.train, section.base_train,
                              image_size, jobs=self.config.jobs)

        bench_dir = self.out_dir / "bench"
        self.monitor.register_existing(write_reports(report, bench_dir), command)
        for cell in report.cells:
            for log in cell.logs:
                self.monitor.log_session_trained(command, cell.config_name, cell.seed, log.session_index,
                                                 {"steps": log.steps})

        self.monitor.write_json("bench/dynamics_projection.json", self._dynamics_projection(report), command)

        if section.save_data:
            for seed in section.seeds:
                datasets = generate_protocol_data(protocol, image_size, seed)
                manifest = save_protocol_data(datasets, bench_dir / "data" / f"seed{seed}", protocol, seed)
                self.monitor.register_existing([manifest], command)

        self.display.print_bench_comparison(report.aggregates())
        self.display.print_bench_directions(report.directions())
        return EXIT_OK

    def _dynamics_projection(self, report) -> Dict[str, Any]:
        """Measured (f, rho) of the last epoch of each session, fed to the recurrence."""
        base = self._dynamics_params()
        rows = []
        for cell in report.cells:
            for log in cell.logs:
                measured = log.final_coverage_precision()
                if measured is None:
                    continue
                f, rho = measured
                params = base.with_values(f=f, rho=rho)
                limit = dynamics.asymptotic_error(params)
                rows.append({
                    "config": cell.config_name,
                    "seed": cell.seed,
                    "session": log.session_index,
                    "measured_f": f,
                    "measured_rho": rho,
                    "asymptotic_error": limit,
                    "threshold": dynamics.improvement_threshold(f, base.gamma) if f > 0 else None,
                    "improves": limit < base.epsilon0,
                })
        return {"epsilon0": base.epsilon0, "gamma": base.gamma, "alpha": base.alpha, "rows": rows}

    # report

    def _read_json(self, relative: str) -> Optional[Dict[str, Any]]:
        path = self.out_dir / relative
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def _read_csv(self, relative: str) -> Optional[List[Dict[str, str]]]:
        path = self.out_dir / relative
        if not path.exists():
            return None
        with open(path, newline="") as f:
            return list(csv.DictReader(f))

    def _run_report(self, command: str) -> int:
        sections: Dict[str, Any] = {}

        theory = self._read_json("theory_summary.json")
        if theory is not None:
            sections["theory"] = {"passed": theory["passed"], "checks": theory["total"],
                                  "failed": ", ".join(theory["failed"]) or "none"}

        sweep = self._read_csv("dynamics/rho_sweep.csv")
        if sweep is not None:
            sections["dynamics"] = {f"eps_inf at rho={float(r['rho']):g}": float(r["asymptotic_error"])
                                    for r in sweep}
        methods = self._read_json("dynamics/methods.json")
        if methods is not None:
            sections["filtering"] = {name: methods["methods"][name]
                                     for name in ("no_filter", "confidence_only", "consistency_based", "pas")}
            sections["filtering"]["memory_crossover_step"] = methods["memory_bank"]["crossover_step"]

        kl = self._read_json("gas_landscape/kl_comparison.json")
        if kl is not None:
            sections["kl"] = {f"{s['name']}/{key}": value for s in kl["scenarios"] for key, value in s["kl"].items()}
        adversarial = self._read_json("gas_landscape/adversarial.json")
        if adversarial is not None:
            sections["adversarial"] = {f"mean ratio at rho={row['rho_radius']:g}": row["mean_ratio"]
                                       for row in adversarial["rows"]}

        bench = self._read_json("bench/report.json")
        if bench is not None:
            last = len(bench["protocol"]["sessions"]) - 1
            sections["bench"] = {}
            for name, summary in bench["aggregates"].items():
                sections["bench"][f"{name} HM@{last}"] = summary["sessions"][last]["harmonic"]
                sections["bench"][f"{name} total drop"] = summary["total_drop"]

        if not sections:
            raise LabError(f"no prior outputs found in {self.out_dir}; run another command first")

        summary = {"title": self.config.report.title, "sections": sections}
        self.monitor.write_json("summary.json", summary, command)
        self.display.print_report_summary(summary)
        return EXIT_OK
