import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from app.analysis.advantage import advantage_grid, zero_contour
from app.analysis.boundary import fit_boundary, se_bands
from app.analysis.fitting import fit_decay
from app.analysis.quantity import quantity_tradeoff
from app.analysis.schemas import (
    AdvantageGrid,
    BoundaryFamily,
    BoundaryFit,
    Contour,
    DecayFit,
    Point,
    QuantityPoint,
    SEBands,
)
from app.base.exceptions import CustomException, ExType

from .runner import ResultRow

logger = logging.getLogger(__name__)

BAND_LEVELS = (1.0, 1.96)


class BoundaryReport(BaseModel):
    grid: AdvantageGrid
    contour: Contour
    fits: Dict[BoundaryFamily, BoundaryFit] = Field(default_factory=dict)
    selected: Optional[BoundaryFamily] = None
    bands: List[SEBands] = Field(default_factory=list)

    @property
    def selected_fit(self) -> Optional[BoundaryFit]:
        return self.fits[self.selected] if self.selected else None


class QuantityReport(BaseModel):
    target: float
    benchmark: float
    points: List[QuantityPoint]


def manifest_label(rows: Sequence[ResultRow]) -> str:
    return ",".join(sorted({row.manifest for row in rows}))


def plain_rows(rows: Sequence[ResultRow]) -> List[ResultRow]:
    return [row for row in rows if row.q is None]


def base_size(rows: Sequence[ResultRow]) -> float:
    return min(row.size for row in rows)


def decay_points(
    rows: Sequence[ResultRow], size: Optional[float] = None
) -> List[Point]:
    """(p, score) pairs of the runs without imputation at one dataset size."""
    plain = plain_rows(rows)
    if not plain:
        return []
    size = base_size(plain) if size is None else size
    return [(row.p, row.score) for row in plain if row.size == size]


def fit_rows(rows: Sequence[ResultRow]) -> Dict[float, DecayFit]:
    """A decay fit per dataset size."""
    sizes = sorted({row.size for row in plain_rows(rows)})
    return {size: fit_decay(decay_points(rows, size)) for size in sizes}


def advantage_from_rows(rows: Sequence[ResultRow]) -> AdvantageGrid:
    if not rows:
        raise CustomException(
            code=ExType.GRID_MISMATCH, field="results", detail="No result rows"
        )
    size = base_size(rows)
    selected = [row for row in rows if row.size == size]
    scores_with = {
        (row.p, row.q, row.seed): row.score for row in selected if row.q is not None
    }
    scores_without = {(row.p, row.seed): row.score for row in plain_rows(selected)}
    if not scores_with or not scores_without:
        raise CustomException(
            code=ExType.GRID_MISMATCH,
            field="results",
            detail="Advantage needs runs both with and without imputation",
        )
    return advantage_grid(scores_with, scores_without)


def boundary_report(grid: AdvantageGrid) -> BoundaryReport:
    """Zero contour, both boundary families, and SE bands of the better fit."""
    contour = zero_contour(grid)
    report = BoundaryReport(grid=grid, contour=contour)
    if contour.empty:
        return report
    for family in BoundaryFamily:
        report.fits[family] = fit_boundary(contour, family)
    fitted = [fit for fit in report.fits.values() if fit.success]
    if fitted:
        best = min(fitted, key=lambda fit: fit.rmse)
        report.selected = best.family
        report.bands = [se_bands(best, contour, grid, level) for level in BAND_LEVELS]
    return report


def quantity_from_rows(
    rows: Sequence[ResultRow], target: Optional[float] = None
) -> QuantityReport:
    """Size trade-off per p; the benchmark is the clean score at base size."""
    plain = plain_rows(rows)
    if not plain:
        raise CustomException(
            code=ExType.VALIDATION_ERROR, field="results", detail="No plain runs"
        )
    size = base_size(plain)
    clean_p = min(row.p for row in plain)
    benchmark = float(
        np.mean([row.score for row in plain if row.p == clean_p and row.size == size])
    )
    target = benchmark if target is None else target
    results = {(row.p, row.size, row.seed): row.score for row in plain}
    return QuantityReport(
        target=target,
        benchmark=benchmark,
        points=quantity_tradeoff(results, target),
    )


def read_curves(paths: Sequence[Path]) -> Dict[str, List[float]]:
    """Mean training return per episode for every (p, q) pair."""
    grouped: Dict[str, Dict[int, List[float]]] = defaultdict(lambda: defaultdict(list))
    for path in paths:
        if not path.exists():
            continue
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                q = f" q={float(row['q']):g}" if row["q"] else ""
                label = f"p={float(row['p']):g}{q}"
                grouped[label][int(row["episode"])].append(float(row["return"]))
    return {
        label: [float(np.mean(episodes[k])) for k in sorted(episodes)]
        for label, episodes in grouped.items()
    }


def write_json(path: Path, payload: Any, manifest: str) -> None:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump({"manifest": manifest, **payload}, f, indent=2, sort_keys=True)
        f.write("\n")


def write_contour(path: Path, contour: Contour, manifest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["p", "q", "manifest"])
        for p, q in contour.points:
            writer.writerow([repr(p), repr(q), manifest])


def grid_payload(grid: AdvantageGrid) -> Dict[str, Any]:
    z = [[grid.z_score(p, q) for q in grid.q_grid] for p in grid.p_grid]
    return {
        **grid.model_dump(mode="json"),
        "z": [[v if np.isfinite(v) else None for v in row] for row in z],
    }


def fit_payload(fits: Dict[float, DecayFit]) -> Dict[str, Any]:
    if len(fits) == 1:
        return next(iter(fits.values())).model_dump(mode="json")
    return {
        "fits": [
            {"size": size, **fit.model_dump(mode="json")}
            for size, fit in sorted(fits.items())
        ]
    }

