import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import typer
from pydantic import ValidationError

from app.agent.dqn import make_env_factory, train
from app.agent.gradcheck import LossKind, check_q_network
from app.agent.network import save_params
from app.analysis.fitting import fit_decay
from app.base.config import WORKERS
from app.base.config_utils import (
    comma_separated_str_to_floats,
    comma_separated_str_to_ints,
)
from app.base.exceptions import CustomException, ExType
from app.base.utils import update_partially
from app.base.utils.rng import derive_seed, make_rng
from app.corruption.schemas import CorruptionKind, ImputationMethod
from app.experiment.render import (
    PlotKind,
    render_boundary,
    render_decay,
    render_empty,
    render_heatmap,
    render_quantity,
    render_training_curves,
    write_svg,
)
from app.experiment.reports import (
    advantage_from_rows,
    boundary_report,
    decay_points,
    fit_payload,
    fit_rows,
    grid_payload,
    manifest_label,
    quantity_from_rows,
    read_curves,
    write_contour,
    write_json,
)
from app.experiment.runner import (
    CURVES_FILE,
    RESULTS_FILE,
    ResultRow,
    SweepSummary,
    load_results,
    run_sweep,
)
from app.experiment.schemas import ExperimentConfig, Task, load_config
from app.pattern.generator import generate
from app.pattern.recovery import analytic_recovery, mc_recovery_oracle
from app.sim.baseline import (
    GREEN_GRID,
    SEARCH_SEEDS,
    dump_trace,
    fixed_timing_score,
    run_fixed_timing,
    search_fixed_plan,
)
from app.sim.environment import SignalEnv

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Corruption and imputation experiments.")

DEFAULT_P_SWEEP = "0,0.1,...,1.0"
DEFAULT_HEATMAP_GRID = "0,0.25,...,1.0"
GRADCHECK_TOLERANCE = 1e-4
ORACLE_TRIALS = 2000

ConfigOption = typer.Option(None, "--config", help="JSON experiment config")
OutOption = typer.Option(None, "--out", help="Output directory")
WorkersOption = typer.Option(WORKERS, "--workers", help="Worker processes")
ForceOption = typer.Option(False, "--force", help="Discard or combine mixed runs")
SeedsOption = typer.Option(None, "--seeds", help="Seed count or comma list")


def parse_seeds(value: Optional[str]) -> Optional[List[int]]:
    """`3` means seeds 0,1,2; a comma list is taken as is."""
    if value is None:
        return None
    if "," not in value:
        try:
            count = int(value)
        except ValueError as e:
            raise CustomException(
                code=ExType.USAGE_ERROR, field="seeds", detail=f"Bad seeds '{value}'"
            ) from e
        if count < 1:
            raise CustomException(
                code=ExType.USAGE_ERROR, field="seeds", detail="Need at least 1 seed"
            )
        return list(range(count))
    return comma_separated_str_to_ints(value)


def parse_grid(value: Optional[str]) -> Optional[List[float]]:
    return None if value is None else comma_separated_str_to_floats(value)


def build_config(
    config_path: Optional[Path],
    defaults: Dict[str, Any],
    overrides: Dict[str, Any],
) -> ExperimentConfig:
    """Config file (or built-in defaults) with command-line overrides on top."""
    try:
        if config_path is None:
            config = update_partially(ExperimentConfig(), defaults)
        else:
            config = load_config(config_path)
        config = update_partially(config, overrides)
    except ValidationError as e:
        detail = "; ".join(
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
            for error in e.errors()
        )
        raise CustomException(code=ExType.VALIDATION_ERROR, detail=detail) from e
    config.check_task()
    return config


def echo_json(payload: Any) -> None:
    typer.echo(json.dumps(payload, indent=2, sort_keys=True))


def _sweep(
    config: ExperimentConfig, workers: int, force: bool
) -> Tuple[SweepSummary, List[ResultRow]]:
    summary = run_sweep(config, workers=workers, force=force)
    rows = load_results([Path(config.output_dir) / RESULTS_FILE])
    return summary, rows


def _finish(summary: SweepSummary) -> None:
    echo_json(summary.model_dump(mode="json"))
    if summary.failures:
        raise CustomException(
            code=ExType.PARTIAL_FAILURE,
            field="cells",
            detail=f"{len(summary.failures)} of {summary.total} cells failed",
        )


def write_decay_outputs(rows: List[ResultRow], out: Path) -> None:
    manifest = manifest_label(rows)
    fits = fit_rows(rows)
    write_json(out / "fit.json", fit_payload(fits), manifest)
    if not fits:
        placeholder = render_empty("decay", "no results to plot", manifest)
        write_svg(out / "decay.svg", placeholder)
    for size, fit in sorted(fits.items()):
        name = "decay.svg" if len(fits) == 1 else f"decay_size{size:g}.svg"
        write_svg(out / name, render_decay(decay_points(rows, size), fit, manifest))


def write_heatmap_outputs(rows: List[ResultRow], out: Path) -> Dict[str, Any]:
    manifest = manifest_label(rows)
    report = boundary_report(advantage_from_rows(rows))
    write_json(out / "grid.json", grid_payload(report.grid), manifest)
    write_contour(out / "contour.csv", report.contour, manifest)
    boundary = {
        "fits": {
            family.value: fit.model_dump(mode="json")
            for family, fit in report.fits.items()
        },
        "selected": report.selected.value if report.selected else None,
        "bands": [band.model_dump(mode="json") for band in report.bands],
        "contour_message": report.contour.message,
    }
    write_json(out / "boundary.json", boundary, manifest)
    fit = report.selected_fit
    write_svg(
        out / "heatmap.svg",
        render_heatmap(report.grid, report.contour, fit, report.bands, manifest),
    )
    write_svg(
        out / "boundary.svg",
        render_boundary(report.contour, fit, report.bands, manifest),
    )
    return boundary


def sweep_kind(
    kind: CorruptionKind,
    config_path: Optional[Path],
    p: Optional[str],
    seeds: Optional[str],
    out: Optional[Path],
    workers: int,
    force: bool,
) -> None:
    config = build_config(
        config_path,
        {"task": Task.SIGNAL_RL, "p_grid": parse_grid(DEFAULT_P_SWEEP)},
        {
            "corruption.kind": kind,
            "p_grid": parse_grid(p),
            "q_grid": [],
            "seeds": parse_seeds(seeds),
            "output_dir": str(out) if out else None,
        },
    )
    summary, rows = _sweep(config, workers, force)
    out_dir = Path(config.output_dir)
    write_decay_outputs(rows, out_dir)
    curves = read_curves([out_dir / CURVES_FILE])
    write_svg(
        out_dir / "training_curves.svg",
        render_training_curves(curves, manifest_label(rows)),
    )
    _finish(summary)


@app.command()
def sweep_missing(
    config: Optional[Path] = ConfigOption,
    p: Optional[str] = typer.Option(None, "--p", help="Missing ratios"),
    seeds: Optional[str] = SeedsOption,
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Score against the vehicle-missing ratio."""
    sweep_kind(CorruptionKind.VEHICLE_MISSING, config, p, seeds, out, workers, force)


@app.command()
def sweep_noise(
    config: Optional[Path] = ConfigOption,
    p: Optional[str] = typer.Option(None, "--p", help="Noise ratios"),
    seeds: Optional[str] = SeedsOption,
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Score against the cell-noise ratio."""
    sweep_kind(CorruptionKind.CELL_NOISE, config, p, seeds, out, workers, force)


@app.command()
def sweep_mask(
    config: Optional[Path] = ConfigOption,
    p: Optional[str] = typer.Option(None, "--p", help="Masking ratios"),
    seeds: Optional[str] = SeedsOption,
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Score against the masked share of every lane."""
    sweep_kind(CorruptionKind.MASK_REGION, config, p, seeds, out, workers, force)


@app.command()
def heatmap(
    config: Optional[Path] = ConfigOption,
    task: Task = typer.Option(Task.SIGNAL_RL, "--task"),
    p: Optional[str] = typer.Option(None, "--p", help="Corruption ratios"),
    q: Optional[str] = typer.Option(None, "--q", help="Imputation noise levels"),
    method: Optional[ImputationMethod] = typer.Option(None, "--method"),
    seeds: Optional[str] = SeedsOption,
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Imputation advantage over a (p, q) grid with its decision boundary."""
    kind = (
        CorruptionKind.VEHICLE_MISSING
        if task == Task.SIGNAL_RL
        else CorruptionKind.TOKEN_MISSING
    )
    grid = parse_grid(DEFAULT_HEATMAP_GRID)
    config_ = build_config(
        config,
        {
            "task": task,
            "corruption.kind": kind,
            "imputation.method": ImputationMethod.ARTIFICIAL,
            "p_grid": grid,
            "q_grid": grid,
            "seeds": [0, 1, 2],
        },
        {
            "imputation.method": method,
            "p_grid": parse_grid(p),
            "q_grid": parse_grid(q),
            "include_plain": True,
            "seeds": parse_seeds(seeds),
            "output_dir": str(out) if out else None,
        },
    )
    summary, rows = _sweep(config_, workers, force)
    boundary = write_heatmap_outputs(rows, Path(config_.output_dir))
    echo_json({"selected": boundary["selected"], "fits": boundary["fits"]})
    _finish(summary)


@app.command()
def quantity(
    config: Optional[Path] = ConfigOption,
    task: Task = typer.Option(Task.PATTERN, "--task"),
    p: Optional[str] = typer.Option(None, "--p", help="Corruption ratios"),
    sizes: Optional[str] = typer.Option(None, "--sizes", help="Size factors"),
    target: Optional[float] = typer.Option(None, "--target"),
    seeds: Optional[str] = SeedsOption,
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Dataset size needed to reach a target score at each corruption level."""
    kind = (
        CorruptionKind.VEHICLE_MISSING
        if task == Task.SIGNAL_RL
        else CorruptionKind.TOKEN_MISSING
    )
    config_ = build_config(
        config,
        {
            "task": task,
            "corruption.kind": kind,
            "p_grid": [0.0, 0.2, 0.4, 0.6],
            "size_grid": [1.0, 2.0, 4.0],
            "seeds": [0, 1, 2],
        },
        {
            "p_grid": parse_grid(p),
            "size_grid": parse_grid(sizes),
            "q_grid": [],
            "seeds": parse_seeds(seeds),
            "output_dir": str(out) if out else None,
        },
    )
    summary, rows = _sweep(config_, workers, force)
    out_dir = Path(config_.output_dir)
    report = quantity_from_rows(rows, target)
    manifest = manifest_label(rows)
    write_json(out_dir / "quantity.json", report, manifest)
    write_svg(
        out_dir / "quantity.svg",
        render_quantity(report.points, report.benchmark, manifest),
    )
    _finish(summary)


@app.command()
def pattern(
    config: Optional[Path] = ConfigOption,
    p: Optional[str] = typer.Option(None, "--p", help="Missing ratios"),
    seeds: Optional[str] = SeedsOption,
    trials: int = typer.Option(ORACLE_TRIALS, "--trials"),
    clean_test: Optional[bool] = typer.Option(
        None,
        "--clean-test/--corrupted-test",
        help="Score on an uncorrupted test split (default here)",
    ),
    out: Optional[Path] = OutOption,
    workers: int = WorkersOption,
    force: bool = ForceOption,
) -> None:
    """Pattern-task scores next to the Poisson recovery oracle."""
    corrupt_test = None if clean_test is None else not clean_test
    config_ = build_config(
        config,
        {
            "task": Task.PATTERN,
            "corruption.kind": CorruptionKind.TOKEN_MISSING,
            "p_grid": parse_grid(DEFAULT_P_SWEEP),
            "seeds": [0, 1, 2],
            "pattern_train.corrupt_test": False,
        },
        {
            "p_grid": parse_grid(p),
            "q_grid": [],
            "pattern_train.corrupt_test": corrupt_test,
            "seeds": parse_seeds(seeds),
            "output_dir": str(out) if out else None,
        },
    )
    summary, rows = _sweep(config_, workers, force)
    out_dir = Path(config_.output_dir)
    write_decay_outputs(rows, out_dir)

    spec = config_.pattern
    data_seed = derive_seed(config_.master_seed, 0, config_.seeds[0])
    dataset = generate(spec, make_rng(data_seed), seed=data_seed)
    rng = make_rng(derive_seed(data_seed, 13))
    oracle = []
    for value in config_.p_grid:
        recovered = mc_recovery_oracle(dataset, value, trials, rng)
        analytic = np.mean(
            [analytic_recovery(r, value, spec.pattern_length) for r in spec.rates]
        )
        oracle.append(
            {"p": value, "mc": float(recovered.mean()), "analytic": float(analytic)}
        )
    oracle_fit = fit_decay([(item["p"], item["mc"]) for item in oracle])
    score_fit = fit_decay(decay_points(rows))
    lambda_error = None
    if oracle_fit.success and score_fit.success:
        lambda_error = abs(score_fit.lam - oracle_fit.lam) / oracle_fit.lam
    payload = {
        "planted_rate": float(np.mean(spec.rates)),
        "oracle": oracle,
        "oracle_fit": oracle_fit.model_dump(mode="json"),
        "score_fit": score_fit.model_dump(mode="json"),
        "lambda_relative_error": lambda_error,
    }
    write_json(out_dir / "pattern.json", payload, manifest_label(rows))
    echo_json(payload)
    _finish(summary)


@app.command("train")
def train_command(
    config: Optional[Path] = ConfigOption,
    kind: Optional[CorruptionKind] = typer.Option(None, "--kind"),
    p: Optional[float] = typer.Option(None, "--p"),
    method: Optional[ImputationMethod] = typer.Option(None, "--method"),
    q: Optional[float] = typer.Option(None, "--q"),
    episodes: Optional[int] = typer.Option(None, "--episodes"),
    seed: int = typer.Option(0, "--seed"),
    out: Optional[Path] = OutOption,
) -> None:
    """A single Signal-RL training run followed by greedy evaluation."""
    config_ = build_config(
        config,
        {"task": Task.SIGNAL_RL},
        {
            "corruption.kind": kind,
            "corruption.p": p,
            "imputation.method": method,
            "imputation.q": q,
            "train.episodes": episodes,
            "output_dir": str(out) if out else None,
        },
    )
    if config_.task != Task.SIGNAL_RL:
        raise CustomException(
            code=ExType.USAGE_ERROR, field="task", detail="train runs signal_rl only"
        )
    result = train(
        make_env_factory(config_.env),
        config_.train,
        config_.corruption.model_copy(update={"seed": derive_seed(seed, 11)}),
        config_.imputation.model_copy(update={"seed": derive_seed(seed, 12)}),
        seed,
    )
    out_dir = Path(config_.output_dir)
    manifest = config_.config_hash()
    save_params(result.agent.online, out_dir / "params.bin", seed, manifest)
    payload = {
        "seed": seed,
        "episode_returns": result.episode_returns,
        "eval_returns": result.eval_returns,
        "eval_return": result.eval_return,
        "fixed_timing_return": fixed_timing_score(config_.env),
    }
    write_json(out_dir / "train.json", payload, manifest)
    write_svg(
        out_dir / "training_curves.svg",
        render_training_curves({f"seed={seed}": result.episode_returns}, manifest),
    )
    echo_json(payload)


@app.command()
def baseline(
    config: Optional[Path] = ConfigOption,
    greens: str = typer.Option(",".join(map(str, GREEN_GRID)), "--greens"),
    seeds: Optional[str] = SeedsOption,
    trace: Optional[Path] = typer.Option(None, "--trace", help="CSV trace path"),
) -> None:
    """Search the fixed-timing plan and report its return and mean queue."""
    config_ = build_config(config, {}, {})
    search_seeds = parse_seeds(seeds) or list(SEARCH_SEEDS)
    plan, mean_return, mean_queue = search_fixed_plan(
        config_.env, comma_separated_str_to_ints(greens), search_seeds
    )
    if trace is not None:
        env = SignalEnv(config_.env.demand(), search_seeds[0])
        dump_trace(run_fixed_timing(env, plan), trace)
    echo_json(
        {
            "plan": [step.model_dump(mode="json") for step in plan],
            "mean_return": mean_return,
            "mean_queue": mean_queue,
        }
    )


@app.command()
def gradcheck(
    seed: int = typer.Option(0, "--seed"),
    batch: int = typer.Option(16, "--batch"),
    n_params: int = typer.Option(200, "--params"),
    loss: LossKind = typer.Option(LossKind.MSE, "--loss"),
) -> None:
    """Backprop against central differences on the full Q-network."""
    result = check_q_network(seed, batch, n_params, loss)
    echo_json(result.model_dump(mode="json"))
    if not result.max_rel_error < GRADCHECK_TOLERANCE:
        raise CustomException(
            code=ExType.VALIDATION_ERROR,
            field="gradcheck",
            detail=f"max relative error {result.max_rel_error:.3e} "
            f">= {GRADCHECK_TOLERANCE:g}",
        )


@app.command()
def fit(
    results: List[Path] = typer.Argument(..., help="results.csv files"),
    force: bool = ForceOption,
) -> None:
    """Re-fit the decay law to stored results."""
    rows = load_results(results, force=force)
    echo_json(fit_payload(fit_rows(rows)))


@app.command()
def plot(
    kind: PlotKind = typer.Argument(...),
    results: List[Path] = typer.Argument(..., help="results.csv files"),
    out: Path = typer.Option(Path("."), "--out"),
    target: Optional[float] = typer.Option(None, "--target"),
    force: bool = ForceOption,
) -> None:
    """Render stored results as SVG."""
    rows = load_results(results, force=force)
    manifest = manifest_label(rows)
    title = kind.value.replace("_", " ")
    if kind == PlotKind.TRAINING_CURVES:
        curves = read_curves([path.parent / CURVES_FILE for path in results])
        write_svg(out / "training_curves.svg", render_training_curves(curves, manifest))
    elif not rows or (
        kind in (PlotKind.HEATMAP, PlotKind.BOUNDARY)
        and all(row.q is None for row in rows)
    ):
        placeholder = render_empty(title, "no results to plot", manifest)
        write_svg(out / f"{kind.value}.svg", placeholder)
    elif kind == PlotKind.DECAY:
        write_decay_outputs(rows, out)
    elif kind in (PlotKind.HEATMAP, PlotKind.BOUNDARY):
        write_heatmap_outputs(rows, out)
    else:
        report = quantity_from_rows(rows, target)
        write_svg(
            out / "quantity.svg",
            render_quantity(report.points, report.benchmark, manifest),
        )
