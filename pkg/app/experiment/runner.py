import csv
import json
import logging
import multiprocessing
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from app.base.config import RESULT_HEADER, TOOL_VERSION, WORKERS
from app.base.exceptions import CustomException, ExType
from app.base.utils.decorator import timing

from .schemas import Cell, CellResult, ExperimentConfig, RunManifest
from .tasks import plan_cells, run_cell, run_cell_args

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
CURVES_FILE = "curves.csv"
MANIFEST_FILE = "manifest.json"
CURVES_HEADER = ["task", "p", "q", "size", "seed", "episode", "return", "manifest"]

RowKey = Tuple[str, str, str, str]


class ResultRow(BaseModel):
    task: str
    p: float
    q: Optional[float] = None
    size: float
    seed: int
    score: float
    duration_s: Optional[float] = None
    manifest: str


class SweepSummary(BaseModel):
    output_dir: str
    config_hash: str
    total: int
    computed: int = 0
    skipped: int = 0
    failures: Dict[str, str] = Field(default_factory=dict)


def _number(value: float) -> str:
    return repr(float(value))


def cell_key(cell: Cell) -> RowKey:
    q = "" if cell.q is None else _number(cell.q)
    return (_number(cell.p), q, _number(cell.size), str(cell.seed))


def row_key(row: Dict[str, str]) -> RowKey:
    q = row["q"] and _number(float(row["q"]))
    return (_number(float(row["p"])), q, _number(float(row["size"])), row["seed"])


def format_row(
    config: ExperimentConfig, result: CellResult, manifest: str
) -> List[str]:
    cell = result.cell
    assert result.score is not None
    duration = f"{result.duration_s:.3f}" if config.record_durations else ""
    return [
        config.task.value,
        *cell_key(cell)[:3],
        str(cell.seed),
        _number(result.score),
        duration,
        manifest,
    ]


def read_rows(path: Path) -> List[Dict[str, str]]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != RESULT_HEADER:
            raise CustomException(
                code=ExType.VALIDATION_ERROR,
                field=str(path),
                detail=f"{path} header {reader.fieldnames} != {RESULT_HEADER}",
            )
        return list(reader)


def parse_rows(rows: Iterable[Dict[str, str]]) -> List[ResultRow]:
    return [
        ResultRow(
            task=row["task"],
            p=float(row["p"]),
            q=float(row["q"]) if row["q"] else None,
            size=float(row["size"]),
            seed=int(row["seed"]),
            score=float(row["score"]),
            duration_s=float(row["duration_s"]) if row["duration_s"] else None,
            manifest=row["manifest"],
        )
        for row in rows
    ]


def load_results(paths: Sequence[Path], force: bool = False) -> List[ResultRow]:
    """Rows from one or more results files, refusing mixed manifest hashes."""
    rows = parse_rows(row for path in paths for row in read_rows(path))
    hashes = sorted({row.manifest for row in rows})
    if len(hashes) > 1:
        if not force:
            raise CustomException(
                code=ExType.MIXED_MANIFEST,
                field="results",
                detail=f"Results mix manifest hashes {hashes}; use --force to combine",
            )
        logger.warning(f"combining results from manifests {hashes}")
    return rows


def _execute(
    config: ExperimentConfig, cells: Sequence[Cell], workers: int
) -> Iterator[CellResult]:
    if workers <= 1 or len(cells) <= 1:
        for cell in cells:
            yield run_cell(config, cell)
        return
    with multiprocessing.Pool(processes=min(workers, len(cells))) as pool:
        yield from pool.imap_unordered(run_cell_args, [(config, c) for c in cells])


def _write_csv(path: Path, header: List[str], rows: Iterable[List[str]]) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def _curve_rows(
    config: ExperimentConfig, result: CellResult, manifest: str
) -> List[List[str]]:
    cell = result.cell
    return [
        [
            config.task.value,
            *cell_key(cell)[:3],
            str(cell.seed),
            str(k),
            _number(r),
            manifest,
        ]
        for k, r in enumerate(result.episode_returns, start=1)
    ]


@timing
def run_sweep(
    config: ExperimentConfig,
    workers: int = WORKERS,
    force: bool = False,
) -> SweepSummary:
    """Run every pending cell and persist rows as they finish.

    Rows already present under the same config hash are kept, so a killed
    sweep resumes where it stopped. Failed cells are recorded in the manifest
    and retried on the next run.
    """
    config.check_task()
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    results_path = output_dir / RESULTS_FILE
    curves_path = output_dir / CURVES_FILE
    manifest_hash = config.config_hash()
    cells = plan_cells(config)

    existing = read_rows(results_path)
    foreign = sorted({row["manifest"] for row in existing} - {manifest_hash})
    if foreign and not force:
        raise CustomException(
            code=ExType.MIXED_MANIFEST,
            field="output_dir",
            detail=f"{results_path} holds results of manifest {foreign}; "
            "use --force to discard them",
        )
    keep = {row_key(r): r for r in existing if r["manifest"] == manifest_hash}
    curves: Dict[RowKey, List[List[str]]] = {}
    for row in read_curve_rows(curves_path):
        if row[-1] == manifest_hash:
            curves.setdefault((row[1], row[2], row[3], row[4]), []).append(row)

    pending = [cell for cell in cells if cell_key(cell) not in keep]
    summary = SweepSummary(
        output_dir=str(output_dir),
        config_hash=manifest_hash,
        total=len(cells),
        skipped=len(cells) - len(pending),
    )
    manifest = RunManifest(
        config_hash=manifest_hash,
        tool_version=TOOL_VERSION,
        task=config.task,
        started_at=datetime.now(timezone.utc).isoformat(),
        cell_seeds={cell.label: cell.cell_seed for cell in cells},
        config=json.loads(config.model_dump_json()),
    )
    logger.info(
        f"sweep {manifest_hash}: {len(pending)} of {len(cells)} cells pending, "
        f"{workers} workers"
    )

    if pending:
        if not results_path.exists() or foreign:
            _write_csv(results_path, RESULT_HEADER, [])
        with open(results_path, "a", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            for result in _execute(config, pending, workers):
                label = result.cell.label
                manifest.durations[label] = round(result.duration_s, 3)
                if not result.ok:
                    summary.failures[label] = result.error or "unknown error"
                    continue
                row = format_row(config, result, manifest_hash)
                writer.writerow(row)
                f.flush()
                keep[cell_key(result.cell)] = dict(zip(RESULT_HEADER, row))
                if result.episode_returns:
                    curves[cell_key(result.cell)] = _curve_rows(
                        config, result, manifest_hash
                    )
                summary.computed += 1
                logger.info(
                    f"cell {label} p={result.cell.p} q={result.cell.q} "
                    f"score {result.score:.4f} ({summary.computed}/{len(pending)})"
                )

    order = [cell_key(cell) for cell in cells]
    _write_csv(
        results_path,
        RESULT_HEADER,
        ([keep[k][h] for h in RESULT_HEADER] for k in order if k in keep),
    )
    if curves:
        _write_csv(
            curves_path,
            CURVES_HEADER,
            (row for k in order for row in curves.get(k, [])),
        )

    manifest.completed = {cell.label: cell_key(cell) in keep for cell in cells}
    manifest.failures = summary.failures
    manifest.finished_at = datetime.now(timezone.utc).isoformat()
    with open(output_dir / MANIFEST_FILE, "w") as f:
        f.write(manifest.model_dump_json(indent=2) + "\n")

    if summary.failures:
        logger.warning(f"{len(summary.failures)} cells failed: {summary.failures}")
    return summary


def read_curve_rows(path: Path) -> List[List[str]]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        return [row for row in reader if row]
