"""
Run orchestration: run directories, manifests and the end-to-end pipelines
behind the CLI commands.
"""
import logging
import platform
import time
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from config.settings import ConfigError, RunConfig
from src.analytic.myopic import MyopicPolicy
from src.data.artifacts import ArtifactWriter, write_json_atomic
from src.evaluation.distribution import compare_terminal_wealth, mean_wealth_paths
from src.evaluation.hedging import (
    GridSpec,
    feasible_portfolio,
    hedging_by_wealth,
    hedging_surfaces,
    mean_hedging_by_asset,
)
from src.evaluation.regression import (
    asset_characteristics,
    hedging_regressions,
    rank_agreement,
    regression_table,
)
from src.evaluation.validation import MertonValidationReport, merton_params_for, merton_validation
from src.evaluation.welfare import (
    PolicyEvaluationConfig,
    WelfareReport,
    discounted_crra_value,
    evaluate_ez_value,
    welfare_report,
)
from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler, Policy, draw_noise, simulate_batch, simulate_from_noise
from src.models.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from src.models.networks import NetworkTriple, describe
from src.pgdpo.trainer import Ablation, TrainingResult, build_networks, restore_optimizers, train
from src.preferences.aggregators import AggregatorKind
from src.preferences.utility import EZParams
from src.projection.constraints import ControlProjector, PortfolioConstraint, diagnostics

logger = logging.getLogger(__name__)

PACKAGE_NAME = "ez-pgdpo"
MANIFEST_FILE = "manifest.json"
FINAL_CHECKPOINT = "checkpoint_final.pt"
# Stream reserved for evaluation-time simulations
EVALUATION_STREAM = 5_000_000

Progress = Optional[Callable[[int, Dict[str, float]], None]]


def software_versions() -> Dict[str, str]:
    try:
        version = importlib_metadata.version(PACKAGE_NAME)
    except importlib_metadata.PackageNotFoundError:
        version = "0.1.0"
    return {
        PACKAGE_NAME: version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "torch": torch.__version__,
        "platform": platform.platform(),
    }


def set_reference_mode(enabled: bool = True) -> None:
    """Single-threaded deterministic torch kernels."""
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
        logger.info("Reference mode: single-threaded deterministic kernels")


def make_run_dir(base: Path, name: str, seed: int) -> Path:
    """Fresh directory <timestamp>_<name>_seed<seed>; never reuses an existing one."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
    candidate = base / f"{stamp}_{name}_seed{seed}"
    suffix = 1
    while True:
        try:
            candidate.mkdir(parents=False, exist_ok=False)
            return candidate
        except FileExistsError:
            candidate = base / f"{stamp}_{name}_seed{seed}_{suffix}"
            suffix += 1


@dataclass
class RunManifest:
    """Record of one run: configuration, versions, timing, diagnostics and files."""
    command: str
    config: Dict[str, Any]
    seed: int
    software: Dict[str, str] = field(default_factory=software_versions)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    wall_clock_s: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    files: List[Dict[str, Any]] = field(default_factory=list)
    _started: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self, writer: ArtifactWriter, diagnostics: Optional[Dict[str, Any]] = None) -> Path:
        """Fill in end time and inventory, then write manifest.json atomically."""
        self.finished_at = datetime.now(timezone.utc).isoformat()
        self.wall_clock_s = time.perf_counter() - self._started
        if diagnostics:
            self.diagnostics.update(diagnostics)
        self.files = writer.inventory()
        data = asdict(self)
        data.pop("_started")
        path = write_json_atomic(writer.path(MANIFEST_FILE), data)
        logger.info(f"Manifest written to {path}")
        return path


@dataclass
class Problem:
    """Library objects resolved from a run configuration."""
    market: MarketParams
    ez: EZParams
    constraint: PortfolioConstraint
    aggregator: AggregatorKind

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Problem":
        return cls(
            market=cfg.market.to_params(),
            ez=cfg.preferences.to_params(),
            constraint=cfg.constraint.to_params(),
            aggregator=cfg.preferences.aggregator,
        )

    def projector(self) -> ControlProjector:
        return ControlProjector.from_params(self.constraint, self.ez)


@dataclass
class TrainOutcome:
    run_dir: Path
    result: TrainingResult
    checkpoint: Path


@dataclass
class ValidationOutcome:
    run_dir: Path
    report: MertonValidationReport

    @property
    def passed(self) -> bool:
        return self.report.passed


@dataclass
class EvaluationOutcome:
    run_dir: Path
    summary: Dict[str, Any]


def _output_base(cfg: RunConfig, out: Optional[Path], default: Path) -> Path:
    if out is not None:
        return Path(out)
    if cfg.io.output_dir:
        return Path(cfg.io.output_dir)
    return default


def _train_into(
    writer: ArtifactWriter,
    cfg: RunConfig,
    problem: Problem,
    seed: int,
    ablation: Ablation,
    warm_start: Optional[Path],
    progress: Progress,
) -> TrainOutcome:
    train_cfg = cfg.train_config(seed)
    triple = None
    if warm_start is not None:
        triple, meta = load_checkpoint(warm_start)
        check_compatible(triple, describe(build_networks(train_cfg, problem.market, problem.ez)))
        restore_optimizers(triple, train_cfg.adam, meta.get("optimizer_states", {}))
        logger.info(f"Warm start from {warm_start} (seed {meta.get('seed')})")

    result = train(
        train_cfg,
        problem.market,
        problem.ez,
        problem.constraint,
        weights=cfg.training.losses.to_params(),
        triple=triple,
        ablation=ablation,
        checkpoint_dir=writer.path("checkpoints"),
        progress=progress,
    )
    writer.write_csv("training_log.csv", result.log, kind="training_log")
    writer.write_csv("timing.csv", result.timing, kind="timing")
    checkpoint = save_checkpoint(
        writer.path(FINAL_CHECKPOINT),
        result.triple,
        {"seed": seed, "ablation": Ablation(ablation).value, "config": cfg.to_yaml()},
    )
    writer.register(checkpoint)
    for path in sorted(writer.path("checkpoints").glob("*.pt")):
        writer.register(path)

    if cfg.io.export_paths:
        batch = simulate_batch(
            result.triple.policy.as_policy(),
            problem.projector(),
            problem.market,
            train_cfg.N,
            cfg.io.export_path_count,
            train_cfg.sampler,
            seed,
            stream=EVALUATION_STREAM,
        )
        writer.write_csv("paths.csv", batch.to_frame(), kind="paths")
    return TrainOutcome(run_dir=writer.run_dir, result=result, checkpoint=checkpoint)


def run_training(
    cfg: RunConfig,
    out: Optional[Path],
    default_base: Path,
    seed: Optional[int] = None,
    ablation: Optional[Ablation] = None,
    warm_start: Optional[Path] = None,
    progress: Progress = None,
) -> TrainOutcome:
    """Train one seed and write log, timing, checkpoints and manifest."""
    seed = cfg.training.seed if seed is None else seed
    ablation = Ablation(ablation or cfg.training.ablation)
    problem = Problem.from_config(cfg)
    run_dir = make_run_dir(_output_base(cfg, out, default_base), f"train-{ablation.value}", seed)
    writer = ArtifactWriter(run_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="train", config=cfg.model_dump(mode="json"), seed=seed)

    outcome = _train_into(writer, cfg, problem, seed, ablation, warm_start, progress)
    final = outcome.result.final_row()
    manifest.finish(
        writer,
        {
            "final": final,
            "iterations_run": outcome.result.iterations_run,
            "stopped_early": outcome.result.stopped_early,
        },
    )
    return outcome


def run_validation(
    cfg: RunConfig,
    out: Optional[Path],
    default_base: Path,
    seed: Optional[int] = None,
    progress: Progress = None,
) -> ValidationOutcome:
    """Train the single-asset benchmark and compare it with the Merton solution."""
    seed = cfg.training.seed if seed is None else seed
    problem = Problem.from_config(cfg)
    try:
        merton_params_for(problem.market, problem.ez)
    except ValueError as e:
        raise ConfigError(str(e), ("market",)) from e
    run_dir = make_run_dir(_output_base(cfg, out, default_base), "validate-merton", seed)
    writer = ArtifactWriter(run_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="validate-merton", config=cfg.model_dump(mode="json"), seed=seed)

    outcome = _train_into(writer, cfg, problem, seed, Ablation.FULL, None, progress)
    report, grid_frame, residual = merton_validation(
        outcome.result.triple,
        problem.market,
        problem.ez,
        problem.constraint,
        mc_paths=cfg.evaluation.mc_paths,
        N=cfg.training.N,
        seed=seed,
        thresholds=cfg.evaluation.thresholds.to_params(),
        threads=cfg.training.threads,
    )
    writer.write_csv("validation_grid.csv", grid_frame, kind="validation_grid")
    writer.write_csv("hjb_residual.csv", residual.to_frame(), kind="hjb_residual")
    writer.write_json("validation.json", report.to_dict())
    manifest.finish(writer, {"validation": report.to_dict(), "final": outcome.result.final_row()})
    return ValidationOutcome(run_dir=run_dir, report=report)


def _welfare(
    name: str, policy: Policy, cfg: RunConfig, problem: Problem, seed: int
) -> WelfareReport:
    ev = cfg.evaluation
    train_cfg = cfg.train_config(seed)
    estimate = evaluate_ez_value(
        policy,
        problem.market,
        problem.ez,
        PolicyEvaluationConfig(
            iterations=ev.value_iterations,
            N=train_cfg.N,
            M=ev.value_paths,
            M_eval=ev.eval_paths,
            W0=ev.W0,
            seed=seed,
            lr=train_cfg.adam.lr_value,
            network=train_cfg.network,
            aggregator=problem.aggregator,
            threads=train_cfg.threads,
        ),
        problem.constraint,
    )
    batch = simulate_batch(
        policy, problem.projector(), problem.market, train_cfg.N, ev.eval_paths,
        InitialStateSampler.fixed(ev.W0), seed, stream=EVALUATION_STREAM + 1, threads=train_cfg.threads,
    )
    J0, _ = discounted_crra_value(batch, problem.ez.R, problem.ez.delta, problem.ez.kappa_bequest)
    return welfare_report(name, [seed], [estimate], [J0], problem.ez, problem.market.T)


def evaluate_triple(
    triple: NetworkTriple, cfg: RunConfig, writer: ArtifactWriter, seed: int
) -> Dict[str, Any]:
    """Write every evaluation artifact for trained networks; return the summary."""
    problem = Problem.from_config(cfg)
    mkt, ev = problem.market, cfg.evaluation
    projector = problem.projector()
    learned = triple.policy.as_policy()
    myopic = MyopicPolicy(mkt, problem.ez, problem.constraint)

    grid = GridSpec.training_band(mkt, W0=ev.W0, n_w=ev.grid_w, n_y=ev.grid_y, t=ev.grid_t)
    surface = hedging_surfaces(feasible_portfolio(learned, projector), myopic.portfolio, grid, mkt)
    writer.write_csv("surfaces.csv", surface.to_frame(), kind="surfaces")
    by_asset = mean_hedging_by_asset(surface)
    writer.write_csv("hedging_by_asset.csv", by_asset, kind="hedging_by_asset")
    writer.write_csv("hedging_by_wealth.csv", hedging_by_wealth(surface), kind="hedging_by_wealth")
    characteristics = asset_characteristics(mkt).merge(by_asset, on="asset")
    writer.write_csv("characteristics.csv", characteristics, kind="characteristics")

    summary: Dict[str, Any] = {
        "seed": seed,
        "mean_abs_hedge": {f"asset_{a}": float(v) for a, v in zip(by_asset["asset"], by_asset["mean_abs_hedge"])},
    }
    if mkt.d > 1:
        regressions = hedging_regressions(surface, mkt, replications=ev.bootstrap_replications, seed=seed)
        writer.write_csv("regression.csv", regression_table(regressions), kind="regression")
        summary["regression"] = {r.characteristic: r.to_dict() for r in regressions}
        summary["rank_agreement"] = rank_agreement(by_asset["rank"].to_numpy())

    threads = cfg.training.threads
    policies = {"ez": learned, "myopic": myopic}
    writer.write_csv(
        "mean_wealth.csv",
        mean_wealth_paths(
            policies, projector, mkt, cfg.training.N, ev.wealth_path_paths, seed, W0=ev.W0, threads=threads
        ),
        kind="mean_wealth",
    )
    W0_draw, Y0_draw, dB = draw_noise(
        mkt, cfg.training.N, ev.distribution_paths, InitialStateSampler.fixed(ev.W0), seed,
        stream=EVALUATION_STREAM + 2, threads=threads,
    )
    batches = {name: simulate_from_noise(p, projector, mkt, W0_draw, Y0_draw, dB) for name, p in policies.items()}
    terminal = compare_terminal_wealth({name: b.terminal_wealth for name, b in batches.items()})
    writer.write_csv("terminal_wealth.csv", terminal, kind="terminal_wealth")
    summary["terminal_wealth"] = terminal.set_index("policy").to_dict(orient="index")
    summary["diagnostics"] = diagnostics(batches["ez"]).to_dict()

    welfare = [_welfare(name, p, cfg, problem, seed) for name, p in policies.items()]
    writer.write_csv(
        "welfare.csv", pd.concat([w.to_frame() for w in welfare], ignore_index=True), kind="welfare"
    )
    summary["welfare"] = {w.policy: w.to_frame().iloc[0].drop(["policy", "seed"]).to_dict() for w in welfare}
    writer.write_json("summary.json", summary)
    return summary


def run_evaluation(
    cfg: RunConfig,
    checkpoint: Path,
    out: Optional[Path],
    default_base: Path,
    seed: Optional[int] = None,
) -> EvaluationOutcome:
    """Load a checkpoint and write all evaluation reports."""
    seed = cfg.training.seed if seed is None else seed
    triple, meta = load_checkpoint(checkpoint)
    problem = Problem.from_config(cfg)
    check_compatible(triple, describe(build_networks(cfg.train_config(seed), problem.market, problem.ez)))

    run_dir = make_run_dir(_output_base(cfg, out, default_base), "evaluate", seed)
    writer = ArtifactWriter(run_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="evaluate", config=cfg.model_dump(mode="json"), seed=seed)
    summary = evaluate_triple(triple, cfg, writer, seed)
    manifest.finish(writer, {"checkpoint": str(checkpoint), "checkpoint_seed": meta.get("seed")})
    return EvaluationOutcome(run_dir=run_dir, summary=summary)


def _flatten(prefix: str, data: Any, out: Dict[str, float]) -> None:
    if isinstance(data, dict):
        for key, value in data.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), value, out)
    elif isinstance(data, (int, float, np.floating, np.integer)) and not isinstance(data, bool):
        out[prefix] = float(data)


def aggregate_summaries(summaries: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Mean and sd across seeds of every numeric leaf shared by all summaries."""
    flat = []
    for summary in summaries:
        row: Dict[str, float] = {}
        _flatten("", {k: v for k, v in summary.items() if k != "seed"}, row)
        flat.append(row)
    if not flat:
        return pd.DataFrame(columns=["metric", "mean", "sd", "n"])
    frame = pd.DataFrame(flat).dropna(axis=1)
    return pd.DataFrame(
        {
            "metric": frame.columns,
            "mean": frame.mean(axis=0).to_numpy(),
            "sd": frame.std(axis=0, ddof=1).fillna(0.0).to_numpy() if len(frame) > 1 else 0.0,
            "n": len(frame),
        }
    )


def run_seed_study(
    cfg: RunConfig,
    out: Optional[Path],
    default_base: Path,
    seeds: Optional[Sequence[int]] = None,
    progress: Progress = None,
) -> EvaluationOutcome:
    """Train and evaluate every seed, then merge the per-seed summaries."""
    seeds = list(cfg.training.seeds if seeds is None else seeds)
    problem = Problem.from_config(cfg)
    study_dir = make_run_dir(_output_base(cfg, out, default_base), "seed-study", seeds[0])
    writer = ArtifactWriter(study_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="seed-study", config=cfg.model_dump(mode="json"), seed=seeds[0])

    summaries = []
    for seed in seeds:
        logger.info(f"Seed study: seed {seed}")
        seed_writer = ArtifactWriter(study_dir / f"seed_{seed}")
        outcome = _train_into(seed_writer, cfg, problem, seed, cfg.training.ablation, None, progress)
        summary = evaluate_triple(outcome.result.triple, cfg, seed_writer, seed)
        summary["final"] = outcome.result.final_row()
        summaries.append(summary)
        for path in seed_writer.files:
            writer.register(path)

    table = aggregate_summaries(summaries)
    writer.write_csv("seed_summary.csv", table, kind="seed_summary")
    manifest.finish(writer, {"seeds": seeds})
    return EvaluationOutcome(run_dir=study_dir, summary={"seeds": seeds, "table": table.to_dict(orient="records")})


def run_ablation_suite(
    cfg: RunConfig,
    out: Optional[Path],
    default_base: Path,
    ablations: Sequence[Ablation] = tuple(Ablation),
    seed: Optional[int] = None,
    progress: Progress = None,
) -> EvaluationOutcome:
    """Train each named variant on the same seed and tabulate final diagnostics."""
    seed = cfg.training.seed if seed is None else seed
    problem = Problem.from_config(cfg)
    suite_dir = make_run_dir(_output_base(cfg, out, default_base), "ablate", seed)
    writer = ArtifactWriter(suite_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="ablate", config=cfg.model_dump(mode="json"), seed=seed)

    ev = cfg.evaluation
    W0_draw, Y0_draw, dB = draw_noise(
        problem.market, cfg.training.N, ev.distribution_paths, InitialStateSampler.fixed(ev.W0), seed,
        stream=EVALUATION_STREAM + 3,
    )
    rows = []
    for ablation in ablations:
        ablation = Ablation(ablation)
        logger.info(f"Ablation: {ablation.value}")
        variant_writer = ArtifactWriter(suite_dir / ablation.value)
        outcome = _train_into(variant_writer, cfg, problem, seed, ablation, None, progress)
        batch = simulate_from_noise(
            outcome.result.triple.policy.as_policy(), problem.projector(), problem.market, W0_draw, Y0_draw, dB
        )
        crra_value, crra_se = discounted_crra_value(
            batch, problem.ez.R, problem.ez.delta, problem.ez.kappa_bequest
        )
        row = {"ablation": ablation.value, "iterations_run": outcome.result.iterations_run}
        row.update({k: v for k, v in outcome.result.final_row().items() if k != "iteration"})
        row["crra_value"] = crra_value
        row["crra_value_se"] = crra_se
        row["mean_terminal_wealth"] = float(batch.terminal_wealth.mean())
        rows.append(row)
        for path in variant_writer.files:
            writer.register(path)

    table = pd.DataFrame(rows)
    writer.write_csv("ablation_summary.csv", table, kind="ablation_summary")
    manifest.finish(writer, {"ablations": [Ablation(a).value for a in ablations]})
    return EvaluationOutcome(run_dir=suite_dir, summary={"table": table.to_dict(orient="records")})


def run_training_seeds(
    cfg: RunConfig,
    out: Optional[Path],
    default_base: Path,
    seeds: Sequence[int],
    ablation: Optional[Ablation] = None,
    warm_start: Optional[Path] = None,
    progress: Progress = None,
) -> EvaluationOutcome:
    """Train several seeds and summarize their final log rows as mean and sd."""
    seeds = list(seeds)
    ablation = Ablation(ablation or cfg.training.ablation)
    problem = Problem.from_config(cfg)
    group_dir = make_run_dir(_output_base(cfg, out, default_base), f"train-{ablation.value}-seeds", seeds[0])
    writer = ArtifactWriter(group_dir)
    writer.write_text("config.yaml", cfg.to_yaml())
    manifest = RunManifest(command="train", config=cfg.model_dump(mode="json"), seed=seeds[0])

    finals = []
    for seed in seeds:
        seed_writer = ArtifactWriter(group_dir / f"seed_{seed}")
        outcome = _train_into(seed_writer, cfg, problem, seed, ablation, warm_start, progress)
        finals.append({"final": outcome.result.final_row()})
        for path in seed_writer.files:
            writer.register(path)

    table = aggregate_summaries(finals)
    writer.write_csv("seed_summary.csv", table, kind="seed_summary")
    manifest.finish(writer, {"seeds": seeds})
    return EvaluationOutcome(run_dir=group_dir, summary={"seeds": seeds, "table": table.to_dict(orient="records")})
