from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text


def _fmt(value: Any, digits: int = 4) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


class LabDisplay:
    """Console rendering for command results; never affects artifacts."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def print_header(self, title: str):
        self.console.print(Panel(
            Text(title, style="bold cyan"),
            style="blue",
            padding=(1, 2)
        ))

    def print_check_summary(self, summary: Dict[str, Any]):
        table = Table(title="Invariant Checks")
        table.add_column("Check", style="cyan")
        table.add_column("Kind", style="magenta")
        table.add_column("Status")
        table.add_column("Detail", style="white")

        for check in summary["checks"]:
            status = "[green]pass[/green]" if check["status"] == "pass" else "[red]fail[/red]"
            detail = check["detail"]
            table.add_row(check["name"], check["kind"], status, detail[:70] + "..." if len(detail) > 70 else detail)
        self.console.print(table)

        if summary["passed"]:
            self.console.print(f"[green]✓ all {summary['total']} checks passed[/green]")
        else:
            self.console.print(f"[red]✗ {len(summary['failed'])} failed: {', '.join(summary['failed'])}[/red]")

    def print_dynamics_sweep(self, rows: Sequence[Dict[str, Any]], epsilon0: float):
        table = Table(title=f"Asymptotic teacher error (epsilon0 = {epsilon0})")
        table.add_column("rho", style="cyan", justify="right")
        table.add_column("eps_inf", style="green", justify="right")
        table.add_column("improves", justify="center")
        for row in rows:
            table.add_row(_fmt(row["rho"], 2), _fmt(row["asymptotic_error"], 6), _fmt(row["improves"]))
        self.console.print(table)

    def print_method_comparison(self, comparison: Dict[str, Any]):
        table = Table(title="Filtering strategies")
        table.add_column("Method", style="cyan")
        table.add_column("Precision", justify="right")
        table.add_column("eps_inf", style="green", justify="right")
        precisions = comparison.get("precisions", {})
        for method in ("no_filter", "confidence_only", "consistency_based", "pas"):
            table.add_row(method, _fmt(precisions.get(method)), _fmt(comparison[method], 6))
        self.console.print(table)

    def print_kl_comparison(self, scenarios: Sequence[Dict[str, Any]]):
        table = Table(title="KL to the Laplace posterior")
        table.add_column("Scenario", style="cyan")
        for column in ("kl_gas", "kl_iso", "kl_static", "kl_memory"):
            table.add_column(column, justify="right")
        for scenario in scenarios:
            kl = scenario["kl"]
            table.add_row(scenario["name"], *(_fmt(kl.get(c), 6) for c in ("kl_gas", "kl_iso", "kl_static",
                                                                               "kl_memory")))
        self.console.print(table)

    def print_adversarial(self, rows: Sequence[Dict[str, Any]]):
        table = Table(title="Adversarial vs GAS loss increase")
        table.add_column("rho_radius", style="cyan", justify="right")
        table.add_column("mean ratio", justify="right")
        table.add_column("min ratio", justify="right")
        table.add_column("max ratio", justify="right")
        table.add_column("max kappa", justify="right")
        for row in rows:
            table.add_row(_fmt(row["rho_radius"], 2), _fmt(row["mean_ratio"]), _fmt(row["min_ratio"]),
                          _fmt(row["max_ratio"]), _fmt(row["max_condition"], 1))
        self.console.print(table)

    def print_bench_comparison(self, aggregates: Dict[str, Dict[str, Any]]):
        table = Table(title="Continual benchmark (mean over seeds)")
        table.add_column("Config", style="cyan")
        table.add_column("Session", justify="right")
        table.add_column("mean Dice", justify="right")
        table.add_column("mIoU", justify="right")
        table.add_column("HM", style="green", justify="right")
        for name, summary in aggregates.items():
            for t, session in enumerate(summary["sessions"]):
                table.add_row(name if t == 0 else "", str(t), _fmt(session["mean_dice"]), _fmt(session["miou"]),
                              _fmt(session["harmonic"]))
        self.console.print(table)

        drops = Table(title="Forgetting")
        drops.add_column("Config", style="cyan")
        drops.add_column("Total Drop %", justify="right")
        drops.add_column("Forgetting", justify="right")
        drops.add_column("BWT", justify="right")
        for name, summary in aggregates.items():
            drops.add_row(name, _fmt(summary["total_drop"], 2), _fmt(summary["forgetting"]), _fmt(summary["bwt"]))
        self.console.print(drops)

    def print_bench_directions(self, directions: Dict[str, Any]):
        if not directions.get("comparisons"):
            return
        table = Table(title=f"Seed-by-seed wins at session {directions['session']} (HM Dice)")
        table.add_column("Config", style="cyan")
        table.add_column("Baseline", style="yellow")
        table.add_column("Wins", style="green", justify="right")
        for row in directions["comparisons"]:
            table.add_row(row["config"], row["baseline"], f"{row['wins']}/{row['seeds']}")
        self.console.print(table)

    def print_report_summary(self, summary: Dict[str, Any]):
        table = Table(title=summary.get("title", "Summary"))
        table.add_column("Section", style="cyan")
        table.add_column("Item", style="yellow")
        table.add_column("Value", style="green")
        for section, items in summary["sections"].items():
            rows: List = list(items.items()) if isinstance(items, dict) else [("", items)]
            for index, (key, value) in enumerate(rows):
                table.add_row(section if index == 0 else "", str(key), _fmt(value))
        self.console.print(table)

    def print_artifacts(self, artifacts: Sequence[str]):
        for path in artifacts:
            self.console.print(f"[dim]  wrote {path}[/dim]")

    def print_error(self, message: str):
        self.console.print(f"[red]✗ {message}[/red]")
