"""
Command-line interface for the EZ-PGDPO solver.
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from config.settings import (
    BASELINE_CONFIG,
    MERTON_CONFIG,
    ConfigError,
    RunConfig,
    app_config,
    load_run_config,
)
from src.models.checkpoint import CheckpointError
from src.models.networks import NonFiniteParameterError
from src.orchestration.runs import (
    run_ablation_suite,
    run_evaluation,
    run_seed_study,
    run_training,
    run_training_seeds,
    run_validation,
    set_reference_mode,
)
from src.pgdpo.trainer import Ablation, DivergenceError

# Initialize
app = typer.Typer(help="EZ-PGDPO - Epstein-Zin consumption-investment solver")
console = Console()
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or app_config.log_level).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def parse_seeds(text: str) -> List[int]:
    """'1..5' or '0,2,4' to a list of seeds."""
    text = text.strip()
    try:
        if ".." in text:
            low, high = (int(part) for part in text.split("..", 1))
            if high < low:
                raise ValueError
            return list(range(low, high + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"cannot parse seeds '{text}' (use '1..5' or '0,2,4')")


def _load(
    config: Path,
    iterations: Optional[int],
    threads: Optional[int],
    reference_mode: bool,
    export_paths: bool = False,
) -> RunConfig:
    """Load a config and apply command-line overrides."""
    cfg = load_run_config(config)
    overrides: Dict[str, Any] = {}
    if iterations is not None:
        overrides["training.iterations"] = iterations
    if reference_mode:
        overrides["training.threads"] = 1
    elif threads is not None:
        overrides["training.threads"] = threads
    elif app_config.threads != cfg.training.threads and app_config.threads > 1:
        overrides["training.threads"] = app_config.threads
    if export_paths:
        overrides["io.export_paths"] = True
    if overrides:
        cfg = cfg.with_overrides(overrides)
    set_reference_mode(reference_mode)
    return cfg


def _guarded(stage: str, fn: Callable[[], Any]) -> Any:
    """Run a stage, mapping failures to exit codes."""
    try:
        return fn()
    except (ConfigError, CheckpointError, FileNotFoundError) as e:
        logger.error(f"{stage} failed: {e}")
        console.print(f"[red]Configuration or input error:[/red] {e}")
        raise typer.Exit(EXIT_CONFIG)
    except (DivergenceError, NonFiniteParameterError, RuntimeError, ValueError) as e:
        logger.error(f"{stage} failed: {e}")
        console.print(f"[red]{stage} failed:[/red] {e}")
        raise typer.Exit(EXIT_RUNTIME)


def _progress(status, total: int):
    def update(iteration: int, row: Dict[str, float]) -> None:
        status.update(
            f"[bold blue]Iteration {iteration + 1}/{total}[/bold blue] "
            f"L_val={row['L_val']:.2e} L_adj={row['L_adj']:.2e} J={row['J_act']:.4f}"
        )

    return update


def _metrics_table(title: str, rows: Dict[str, Any]) -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in rows.items():
        table.add_row(str(key), f"{value:.6g}" if isinstance(value, float) else str(value))
    return table


@app.command("validate-merton")
def validate_merton(
    config: Path = typer.Option(MERTON_CONFIG, "--config", "-c", help="Run configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Training seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output base directory"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Override training iterations"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads"),
    reference_mode: bool = typer.Option(False, "--reference-mode", help="Single-threaded determinism"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level"),
):
    """
    Train the single-asset benchmark and check it against the Merton solution.
    """
    setup_logging(log_level)
    cfg = _guarded("config", lambda: _load(config, iterations, threads, reference_mode))

    with console.status("[bold blue]Training benchmark...[/bold blue]") as status:
        outcome = _guarded(
            "validate-merton",
            lambda: run_validation(
                cfg, out, app_config.output_dir, seed, _progress(status, cfg.training.iterations)
            ),
        )

    report = outcome.report
    console.print(
        _metrics_table(
            "Merton validation",
            {
                "Err_pi": report.err_pi,
                "Err_c": report.err_c,
                "CE (Merton)": report.ce_merton,
                "CE (learned)": report.ce_learned,
                "CE gap": report.ce_gap,
                "HJB residual mean": report.residual["mean"],
                "HJB residual sd": report.residual["sd"],
            },
        )
    )
    for name, ok in report.checks.items():
        console.print(f"  {'[green]PASS[/green]' if ok else '[red]FAIL[/red]'} {name}")
    console.print(f"[dim]Artifacts: {outcome.run_dir}[/dim]")
    if not report.passed:
        raise typer.Exit(EXIT_ACCEPTANCE)


@app.command()
def train(
    config: Path = typer.Option(BASELINE_CONFIG, "--config", "-c", help="Run configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Training seed"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="Several seeds, e.g. '1..5'"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output base directory"),
    warm_start: Optional[Path] = typer.Option(None, "--warm-start", help="Checkpoint to start from"),
    ablation: Optional[Ablation] = typer.Option(None, "--ablation", help="Training variant"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Override training iterations"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads"),
    reference_mode: bool = typer.Option(False, "--reference-mode", help="Single-threaded determinism"),
    export_paths: bool = typer.Option(False, "--export-paths", help="Export simulated paths"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level"),
):
    """
    Train value, costate and policy networks.
    """
    setup_logging(log_level)
    cfg = _guarded("config", lambda: _load(config, iterations, threads, reference_mode, export_paths))
    seed_list = parse_seeds(seeds) if seeds else None

    with console.status("[bold blue]Training...[/bold blue]") as status:
        progress = _progress(status, cfg.training.iterations)
        if seed_list:
            outcome = _guarded(
                "train",
                lambda: run_training_seeds(
                    cfg, out, app_config.output_dir, seed_list, ablation, warm_start, progress
                ),
            )
        else:
            outcome = _guarded(
                "train",
                lambda: run_training(cfg, out, app_config.output_dir, seed, ablation, warm_start, progress),
            )

    if seed_list:
        table = Table(title=f"Final diagnostics over seeds {seed_list}")
        for column in ("Metric", "Mean", "SD"):
            table.add_column(column)
        for row in outcome.summary["table"]:
            table.add_row(row["metric"], f"{row['mean']:.6g}", f"{row['sd']:.3g}")
        console.print(table)
    else:
        console.print(_metrics_table("Final iteration", outcome.result.final_row()))
    console.print(f"[dim]Artifacts: {outcome.run_dir}[/dim]")


@app.command()
def evaluate(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Trained checkpoint"),
    config: Path = typer.Option(BASELINE_CONFIG, "--config", "-c", help="Run configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Evaluation seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output base directory"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads"),
    reference_mode: bool = typer.Option(False, "--reference-mode", help="Single-threaded determinism"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level"),
):
    """
    Write welfare, distribution, hedging and regression reports for a checkpoint.
    """
    setup_logging(log_level)
    cfg = _guarded("config", lambda: _load(config, None, threads, reference_mode))

    with console.status("[bold blue]Evaluating...[/bold blue]"):
        outcome = _guarded(
            "evaluate", lambda: run_evaluation(cfg, checkpoint, out, app_config.output_dir, seed)
        )

    summary = outcome.summary
    welfare = Table(title="Welfare")
    for column in ("Policy", "EZ value", "EZ CE", "CRRA CE"):
        welfare.add_column(column)
    for policy, row in summary["welfare"].items():
        welfare.add_row(
            policy,
            f"{row['ez_value_at_start']:.5f}",
            f"{row['ez_certainty_equivalent']:.5f}",
            f"{row['crra_certainty_equivalent']:.5f}",
        )
    console.print(welfare)
    console.print(_metrics_table("Mean |hedging demand|", summary["mean_abs_hedge"]))
    if "rank_agreement" in summary:
        console.print(f"Hedging rank agreement (Spearman): {summary['rank_agreement']:.3f}")
    console.print(f"[dim]Artifacts: {outcome.run_dir}[/dim]")


@app.command("seed-study")
def seed_study(
    config: Path = typer.Option(BASELINE_CONFIG, "--config", "-c", help="Run configuration (YAML)"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="Seeds, e.g. '0..4'"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output base directory"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Override training iterations"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads"),
    reference_mode: bool = typer.Option(False, "--reference-mode", help="Single-threaded determinism"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level"),
):
    """
    Train and evaluate several seeds and report mean and sd across them.
    """
    setup_logging(log_level)
    cfg = _guarded("config", lambda: _load(config, iterations, threads, reference_mode))
    seed_list = parse_seeds(seeds) if seeds else None

    with console.status("[bold blue]Running seed study...[/bold blue]") as status:
        outcome = _guarded(
            "seed-study",
            lambda: run_seed_study(
                cfg, out, app_config.output_dir, seed_list, _progress(status, cfg.training.iterations)
            ),
        )
    console.print(Panel(f"Seeds: {outcome.summary['seeds']}\nArtifacts: {outcome.run_dir}", title="Seed study"))


@app.command()
def ablate(
    config: Path = typer.Option(BASELINE_CONFIG, "--config", "-c", help="Run configuration (YAML)"),
    ablation: Optional[List[Ablation]] = typer.Option(None, "--ablation", help="Variants (default: all)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Training seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output base directory"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Override training iterations"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads"),
    reference_mode: bool = typer.Option(False, "--reference-mode", help="Single-threaded determinism"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level"),
):
    """
    Train the ablation variants on one seed and compare their diagnostics.
    """
    setup_logging(log_level)
    cfg = _guarded("config", lambda: _load(config, iterations, threads, reference_mode))
    variants = ablation or list(Ablation)

    with console.status("[bold blue]Running ablations...[/bold blue]") as status:
        outcome = _guarded(
            "ablate",
            lambda: run_ablation_suite(
                cfg, out, app_config.output_dir, variants, seed, _progress(status, cfg.training.iterations)
            ),
        )

    table = Table(title="Ablations")
    for column in ("Variant", "Iterations", "Floor hits", "Infeasibility", "CRRA value"):
        table.add_column(column)
    for row in outcome.summary["table"]:
        table.add_row(
            row["ablation"],
            str(row["iterations_run"]),
            f"{row.get('floor_hit_rate', float('nan')):.4f}",
            f"{row.get('mean_applied_infeasibility', float('nan')):.4g}",
            f"{row['crra_value']:.5f}",
        )
    console.print(table)
    console.print(f"[dim]Artifacts: {outcome.run_dir}[/dim]")


def main():
    app()


if __name__ == "__main__":
    main()
