import csv
import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence


class LogLevel(Enum):
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


@dataclass
class RunEvent:
    timestamp: datetime
    event_type: str
    command: Optional[str]
    level: LogLevel
    message: str
    metadata: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["timestamp"] = self.timestamp.isoformat()
        result["level"] = self.level.value
        return result


def dump_json(data: Any) -> str:
    """Canonical artifact encoding; identical data gives identical bytes."""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


class RunMonitor:
    """Structured event log and artifact writer for one output directory.

    Events carry wall-clock timestamps and live under `logs/`; artifacts are
    written with canonical encodings so reruns reproduce them byte for byte.
    """

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        self.log_dir = self.out_dir / "logs"
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.events_file = self.log_dir / "events.jsonl"
        self.logger = logging.getLogger("run_monitor")

        self.events: List[RunEvent] = []
        self.command_metrics: Dict[str, Dict[str, Any]] = {}
        self.artifacts: List[str] = []
        self.failed_checks: List[RunEvent] = []

    def _create_event(self, event_type: str, command: Optional[str], level: LogLevel, message: str,
                      metadata: Optional[Dict[str, Any]] = None) -> RunEvent:
        event = RunEvent(
            timestamp=datetime.now(),
            event_type=event_type,
            command=command,
            level=level,
            message=message,
            metadata=metadata or {},
        )
        self.events.append(event)
        with open(self.events_file, "a") as f:
            f.write(json.dumps(event.to_dict(), default=str) + "\n")
        return event

    def log_command_start(self, command: str, metadata: Optional[Dict[str, Any]] = None):
        self.command_metrics[command] = {
            "start_time": datetime.now(),
            "checks": 0,
            "passed_checks": 0,
            "failed_checks": 0,
            "artifacts": 0,
        }
        self._create_event("command_start", command, LogLevel.INFO, f"Command {command} started", metadata)
        self.logger.info(f"Command {command} started")

    def log_command_end(self, command: str, exit_status: int, error: Optional[str] = None):
        metrics = self.command_metrics.get(command)
        if metrics is not None:
            metrics["end_time"] = datetime.now()
            metrics["duration_seconds"] = (metrics["end_time"] - metrics["start_time"]).total_seconds()
            metrics["exit_status"] = exit_status

        level = LogLevel.INFO if exit_status == 0 else LogLevel.ERROR
        metadata = {"exit_status": exit_status}
        if error:
            metadata["error"] = error
        self._create_event("command_end", command, level, f"Command {command} finished with status {exit_status}",
                           metadata)
        if exit_status == 0:
            self.logger.info(f"Command {command} finished")
        else:
            self.logger.error(f"Command {command} failed with status {exit_status}" + (f" - {error}" if error else ""))

    def log_check_result(self, command: str, name: str, passed: bool, detail: str,
                         metadata: Optional[Dict[str, Any]] = None):
        metrics = self.command_metrics.get(command)
        if metrics is not None:
            metrics["checks"] += 1
            metrics["passed_checks" if passed else "failed_checks"] += 1
        event = self._create_event(
            "check_result", command, LogLevel.INFO if passed else LogLevel.WARNING,
            f"Check {name} {'passed' if passed else 'failed'}: {detail}", {"check": name, "passed": passed,
                                                                            **(metadata or {})})
        if not passed:
            self.failed_checks.append(event)
            self.logger.warning(f"Check {name} failed: {detail}")

    def log_session_trained(self, command: str, config_name: str, seed: int, session: int,
                            metadata: Optional[Dict[str, Any]] = None):
        self._create_event("session_trained", command, LogLevel.INFO,
                           f"{config_name} seed {seed} session {session} trained", metadata)

    def log_training_divergence(self, command: str, step: int, message: str):
        self._create_event("training_divergence", command, LogLevel.ERROR, message, {"step": step})
        self.logger.error(f"Training diverged at step {step}: {message}")

    def _register_artifact(self, command: Optional[str], path: Path):
        relative = path.relative_to(self.out_dir).as_posix()
        if relative not in self.artifacts:
            self.artifacts.append(relative)
        if command in self.command_metrics:
            self.command_metrics[command]["artifacts"] += 1
        self._create_event("artifact_written", command, LogLevel.INFO, f"Wrote {relative}", {"path": relative})

    def write_json(self, relative: str, data: Any, command: Optional[str] = None) -> Path:
        path = self.out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_json(data))
        self._register_artifact(command, path)
        return path

    def write_csv(self, relative: str, rows: Sequence[Dict[str, Any]], fieldnames: Sequence[str],
                  command: Optional[str] = None) -> Path:
        path = self.out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        self._register_artifact(command, path)
        return path

    def register_existing(self, paths: Sequence[Path], command: Optional[str] = None):
        for path in paths:
            self._register_artifact(command, Path(path))

    def get_command_metrics(self, command: str) -> Dict[str, Any]:
        metrics = dict(self.command_metrics.get(command, {}))
        for key in ("start_time", "end_time"):
            if key in metrics:
                metrics[key] = metrics[key].isoformat()
        return metrics

    def get_recent_events(self, command: Optional[str] = None, event_type: Optional[str] = None,
                          limit: int = 100) -> List[Dict[str, Any]]:
        events = self.events
        if command:
            events = [e for e in events if e.command == command]
        if event_type:
            events = [e for e in events if e.event_type == event_type]
        events = sorted(events, key=lambda e: e.timestamp, reverse=True)[:limit]
        return [e.to_dict() for e in events]

    def get_failed_checks(self) -> List[Dict[str, Any]]:
        return [e.to_dict() for e in self.failed_checks]
