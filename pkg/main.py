import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.text import Text

from errors import ConfigError
from orchestrator import COMMANDS, EXIT_CONFIG, LabOrchestrator
from protocol_templates import ProtocolTemplateManager
from run_config import apply_overrides, load_run_config


def setup_logging(out_dir: str, level: int = logging.INFO):
    """Configure logging for the application."""
    log_dir = Path(out_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_dir / "lab.log"),
            logging.StreamHandler()
        ],
        force=True,
    )


def print_banner():
    """Print the application banner."""
    console = Console()
    console.print(Panel(
        Text("Continual segmentation mechanism lab", style="bold cyan", justify="center"),
        title="Continual Learning Lab",
        subtitle="gradient-adaptive stabilization · prototype-anchored supervision",
        style="blue"
    ))


def print_help():
    """Print help information."""
    console = Console()
    help_text = """
    [bold cyan]Continual Learning Lab - Usage Guide[/bold cyan]

    [bold]Commands:[/bold]
    • validate-theory      - Run every invariant suite, write theory_summary.json
    • dynamics             - Pseudo-label error trajectories, rho sweep and heatmap CSVs
    • gas-landscape        - KL comparisons, adversarial ratios, epsilon and noise sweeps
    • bench                - Continual segmentation benchmark over configs x seeds
    • report               - Merge earlier outputs into summary.json
    • templates            - List benchmark protocol templates
    • help                 - Show this help message

    [bold]Options:[/bold]
    --config PATH          Run configuration (default: config.json next to main.py)
    --seed N / --out DIR / --jobs N
    --epsilon-sweep, --rho-sweep, --f, --gamma, --epsilon0, --seeds, --configs
    (list flags take "a,b,c" or space-separated values)

    [bold]Example Usage:[/bold]

    [green]# Check every invariant[/green]
    python main.py validate-theory

    [green]# Sweep precision at a different coverage[/green]
    python main.py dynamics --f 0.7 --rho-sweep 0 0.5 0.9 1

    [green]# Two-seed benchmark on four workers[/green]
    python main.py bench --seeds 0 1 --jobs 4

    [bold]Exit status:[/bold] 0 success, 1 failed check or run error, 2 configuration error
    """

    console.print(Panel(help_text, title="Help", style="green"))


def comma_list(cast: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    """argparse type accepting "a,b,c" as well as a single value."""
    def parse(text: str) -> List[Any]:
        try:
            return [cast(part.strip()) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list value: {text!r}")
    return parse


def _flatten(values: Optional[List[List[Any]]]) -> Optional[List[Any]]:
    return None if values is None else [v for group in values for v in group]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Continual learning mechanism lab",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("command", nargs="?", default="help",
                        help=f"Command to execute ({', '.join(COMMANDS)}, templates, help)")
    parser.add_argument("--config", help="Path to the JSON run configuration")
    parser.add_argument("--seed", type=int, help="Root seed for every named random stream")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--jobs", type=int, help="Worker processes for benchmark cells")
    parser.add_argument("--epsilon-sweep", type=comma_list(float), nargs="+", help="Buffer epsilons for gas-landscape")
    parser.add_argument("--rho-sweep", type=comma_list(float), nargs="+", help="Precision grid for dynamics")
    parser.add_argument("--f", type=float, help="Coverage for dynamics")
    parser.add_argument("--gamma", type=float, help="Pseudo-label fraction for dynamics")
    parser.add_argument("--epsilon0", type=float, help="Supervised error for dynamics")
    parser.add_argument("--seeds", type=comma_list(int), nargs="+", help="Benchmark seeds")
    parser.add_argument("--configs", type=comma_list(str), nargs="+", help="Benchmark configurations")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "out_dir": args.out,
        "jobs": args.jobs,
        "gas_landscape.epsilon_sweep": _flatten(args.epsilon_sweep),
        "dynamics.rho_sweep": _flatten(args.rho_sweep),
        "dynamics.f": args.f,
        "dynamics.gamma": args.gamma,
        "dynamics.epsilon0": args.epsilon0,
        "bench.seeds": _flatten(args.seeds),
        "bench.configs": _flatten(args.configs),
    }


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    console = Console()

    if args.command == "help":
        print_banner()
        print_help()
        return 0
    if args.command == "templates":
        console.print("[bold]Available Protocol Templates:[/bold]")
        for template in ProtocolTemplateManager().list_templates():
            console.print(f"• {template['name']}: {template['description']}")
        return 0
    if args.command not in COMMANDS:
        console.print(f"[red]Unknown command: {args.command}[/red]")
        console.print("Use 'python main.py help' for available commands")
        return EXIT_CONFIG

    try:
        config = apply_overrides(load_run_config(args.config), collect_overrides(args))
    except ConfigError as e:
        console.print(f"[red]✗ configuration error: {e}[/red]")
        return EXIT_CONFIG

    setup_logging(config.out_dir, logging.DEBUG if args.verbose else logging.INFO)
    print_banner()
    return LabOrchestrator(config).execute(args.command)


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
