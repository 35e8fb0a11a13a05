import logging
import traceback
from time import perf_counter
from typing import List, Optional, Tuple

from app.agent.dqn import make_env_factory, train
from app.base.utils.rng import derive_seed, make_rng
from app.corruption.schemas import CorruptionSpec, ImputationSpec
from app.pattern.generator import generate, scale
from app.pattern.trainer import train_eval

from .schemas import NO_IMPUTATION, Cell, CellResult, ExperimentConfig, Task

logger = logging.getLogger(__name__)


def plan_cells(config: ExperimentConfig) -> List[Cell]:
    """Every (p, q, size, seed) cell in canonical order.

    With a q grid, cells without imputation are added when `include_plain`
    is set so that advantages can be computed from the same sweep.
    """
    q_values: List[Tuple[int, Optional[float]]] = list(enumerate(config.q_grid))
    if not q_values or config.include_plain:
        q_values.insert(0, (NO_IMPUTATION, None))

    cells = []
    for p_index, p in enumerate(config.p_grid):
        for q_index, q in q_values:
            for size_index, size in enumerate(config.size_grid):
                for seed_index, seed in enumerate(config.seeds):
                    cells.append(
                        Cell(
                            p=p,
                            q=q,
                            size=size,
                            seed=seed,
                            p_index=p_index,
                            q_index=q_index,
                            size_index=size_index,
                            seed_index=seed_index,
                            cell_seed=derive_seed(
                                config.master_seed,
                                p_index,
                                q_index,
                                size_index,
                                seed_index,
                            ),
                            # Shared by every p and q so cells differ only in
                            # corruption and imputation.
                            data_seed=derive_seed(config.master_seed, size_index, seed),
                        )
                    )
    return cells


def cell_specs(
    config: ExperimentConfig, cell: Cell
) -> Tuple[CorruptionSpec, ImputationSpec]:
    """Corruption draws are shared by every q at a given p; imputation draws are
    per cell.
    """
    corruption = config.corruption.model_copy(
        update={"p": cell.p, "seed": derive_seed(cell.data_seed, cell.p_index, 11)}
    )
    if cell.q is None:
        imputation = ImputationSpec()
    else:
        imputation = config.imputation.model_copy(
            update={"q": cell.q, "seed": derive_seed(cell.cell_seed, 12)}
        )
    return corruption, imputation


def run_signal_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    corruption, imputation = cell_specs(config, cell)
    train_config = config.train.model_copy(
        update={"episodes": max(int(round(config.train.episodes * cell.size)), 1)}
    )
    env_factory = make_env_factory(config.env)
    result = train(env_factory, train_config, corruption, imputation, cell.data_seed)
    return CellResult(
        cell=cell, score=result.eval_return, episode_returns=result.episode_returns
    )


def run_pattern_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    corruption, imputation = cell_specs(config, cell)
    spec = scale(config.pattern, cell.size)
    dataset = generate(spec, make_rng(cell.data_seed), seed=cell.data_seed)
    score = train_eval(
        dataset, corruption, imputation, cell.data_seed, config=config.pattern_train
    )
    return CellResult(cell=cell, score=score)


def run_cell(config: ExperimentConfig, cell: Cell) -> CellResult:
    """Execute one cell; failures are returned, never raised."""
    started = perf_counter()
    try:
        if config.task == Task.SIGNAL_RL:
            result = run_signal_cell(config, cell)
        else:
            result = run_pattern_cell(config, cell)
    except Exception as e:
        logger.error(f"cell {cell.label} failed: {e}")
        logger.debug(traceback.format_exc())
        result = CellResult(cell=cell, error=f"{type(e).__name__}: {e}")
    result.duration_s = perf_counter() - started
    return result


def run_cell_args(args: Tuple[ExperimentConfig, Cell]) -> CellResult:
    return run_cell(*args)
