import json
import re
from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest

from app.analysis.advantage import zero_contour
from app.analysis.fitting import fit_decay
from app.analysis.schemas import AdvantageGrid, Contour, QuantityPoint, QuantityStatus
from app.base.exceptions import CustomException, ExType
from app.experiment.render import (
    NO_SIGN_CHANGE,
    Axes,
    diverging_color,
    render_boundary,
    render_decay,
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
    quantity_from_rows,
    read_curves,
    write_contour,
    write_json,
)
from app.experiment.runner import ResultRow

from .config import decay_samples, init_config  # noqa


def _row(
    p: float, q: Optional[float], size: float, seed: int, score: float
) -> ResultRow:
    return ResultRow(
        task="pattern", p=p, q=q, size=size, seed=seed, score=score, manifest="abc"
    )


def _polyline(svg: str, element_id: str) -> List[List[float]]:
    match = re.search(rf'<polyline points="([^"]+)"[^>]*id="{element_id}"', svg)
    assert match is not None
    return [[float(v) for v in pair.split(",")] for pair in match.group(1).split()]


def _diagonal_grid() -> AdvantageGrid:
    p_grid, q_grid = np.linspace(0, 1, 6).tolist(), np.linspace(0, 1, 7).tolist()
    return AdvantageGrid(
        p_grid=p_grid,
        q_grid=q_grid,
        mean=[[q - p for q in q_grid] for p in p_grid],
        se=[[0.05] * len(q_grid) for _ in p_grid],
        n_seeds=3,
    )


def test_decay_render_annotates_the_fit() -> None:
    p, s = decay_samples(0.475, 3.517)
    points = list(zip(p.tolist(), s.tolist()))
    svg = render_decay(points, fit_decay(points), manifest="abc123")
    assert "<!-- manifest: abc123 -->" in svg
    assert "a=0.475" in svg
    assert "λ=3.517" in svg
    assert "R²=1.000" in svg
    assert len(_polyline(svg, "fit")) == 101
    assert svg.count("<circle") == 11


def test_decay_render_of_failed_fit_and_empty_selection() -> None:
    points = [(0.0, 0.3), (1.0, 0.3)]
    assert "fit failed" in render_decay(points, fit_decay(points))
    assert "no results to plot" in render_decay([], fit_decay([]))


def test_heatmap_without_sign_change() -> None:
    grid = AdvantageGrid(
        p_grid=[0.0, 0.5, 1.0],
        q_grid=[0.0, 1.0],
        mean=[[0.0, 0.0]] * 3,
        se=[[0.0, 0.0]] * 3,
    )
    svg = render_heatmap(grid, zero_contour(grid))
    assert NO_SIGN_CHANGE in svg
    assert 'id="contour"' not in svg
    assert 'id="boundary"' not in svg
    assert svg.count('fill="#ffffff"') == 6


def test_boundary_render_of_diagonal_field() -> None:
    report = boundary_report(_diagonal_grid())
    assert report.selected is not None
    assert len(report.bands) == 2

    svg = render_boundary(report.contour, report.selected_fit, report.bands)
    axes = Axes((0.0, 1.0), (0.0, 1.0))
    for pixel in _polyline(svg, "boundary"):
        p, q = axes.invert((pixel[0], pixel[1]))
        assert abs(q - p) <= 1 / 6
    assert 'class="band-1.96"' in svg

    heatmap = render_heatmap(
        report.grid, report.contour, report.selected_fit, report.bands
    )
    assert 'id="contour"' in heatmap
    assert "gradient_scaled_offset" in heatmap


def test_boundary_render_placeholder() -> None:
    svg = render_boundary(Contour(message=NO_SIGN_CHANGE), manifest="abc")
    assert NO_SIGN_CHANGE in svg
    assert 'class="placeholder"' in svg


def test_quantity_render() -> None:
    point = QuantityPoint(
        p=0.0,
        status=QuantityStatus.REACHED,
        required_size=2.0,
        sizes=[1.0, 2.0, 4.0],
        means=[0.3, 0.5, 0.6],
        ses=[0.01, 0.02, 0.01],
    )
    svg = render_quantity([point], benchmark=0.6, manifest="abc")
    assert 'id="benchmark"' in svg
    assert "p=0: reached" in svg
    assert "dashed: clean data" in svg
    assert svg.count("<circle") == 3

    assert "no results to plot" in render_quantity([])


def test_training_curves_render() -> None:
    svg = render_training_curves({"p=0": [1.0, 2.0, 3.0], "p=0.5": []})
    assert svg.count("<polyline") == 1
    assert "p=0.5" not in svg
    assert "no training curves" in render_training_curves({})


def test_diverging_color() -> None:
    assert diverging_color(0.0, 1.0) == "#ffffff"
    assert diverging_color(2.0, 1.0) == "#b2182b"
    assert diverging_color(-1.0, 1.0) == "#2166ac"
    assert diverging_color(0.5, 0.0) == "#ffffff"


def test_axes_round_trip() -> None:
    axes = Axes((1.0, 100.0), (0.0, 2.0), log_x=True)
    p, q = axes.invert(axes.point((10.0, 1.5)))
    assert p == pytest.approx(10.0)
    assert q == pytest.approx(1.5)


def test_write_svg(tmp_path: Path) -> None:
    path = write_svg(tmp_path / "plots" / "decay.svg", render_decay([], fit_decay([])))
    assert path.read_text().endswith("</svg>\n")


def test_decay_points_use_plain_rows_at_base_size() -> None:
    rows = [
        _row(0.0, None, 1.0, 0, 0.9),
        _row(0.5, None, 1.0, 0, 0.6),
        _row(0.5, 0.2, 1.0, 0, 0.7),
        _row(0.5, None, 2.0, 0, 0.8),
    ]
    assert decay_points(rows) == [(0.0, 0.9), (0.5, 0.6)]
    assert decay_points(rows, size=2.0) == [(0.5, 0.8)]
    assert decay_points([rows[2]]) == []
    assert sorted(fit_rows(rows)) == [1.0, 2.0]


def test_advantage_from_rows() -> None:
    rows = [
        _row(p, q, 1.0, seed, score)
        for p in (0.0, 1.0)
        for seed in (0, 1)
        for q, score in ((None, 0.5), (0.0, 0.5 + p), (1.0, 0.5 - p))
    ]
    grid = advantage_from_rows(rows + [_row(0.0, None, 2.0, 0, 9.0)])
    assert grid.mean == [[0.0, 0.0], [1.0, -1.0]]
    assert grid.n_seeds == 2

    with pytest.raises(CustomException) as e:
        advantage_from_rows([row for row in rows if row.q is None])
    assert e.value.code == ExType.GRID_MISMATCH


def test_quantity_benchmark_is_the_clean_base_score() -> None:
    rows = [
        _row(p, None, size, seed, (1.0 - p) * size / (size + 1) + 0.01 * seed)
        for p in (0.0, 0.5)
        for size in (1.0, 2.0, 4.0)
        for seed in (0, 1)
    ]
    report = quantity_from_rows(rows)
    assert report.benchmark == pytest.approx(0.505)
    assert report.target == report.benchmark
    assert [point.p for point in report.points] == [0.0, 0.5]
    assert report.points[0].status == QuantityStatus.REACHED
    assert report.points[0].required_size == 1.0

    assert quantity_from_rows(rows, target=0.7).target == 0.7


def test_json_and_contour_outputs_carry_the_manifest(tmp_path: Path) -> None:
    write_json(tmp_path / "fit.json", {"a": 1.0}, "abc")
    assert json.loads((tmp_path / "fit.json").read_text()) == {
        "manifest": "abc",
        "a": 1.0,
    }

    write_contour(tmp_path / "contour.csv", Contour(points=[(0.5, 0.25)]), "abc")
    lines = (tmp_path / "contour.csv").read_text().splitlines()
    assert lines == ["p,q,manifest", "0.5,0.25,abc"]


def test_fit_payload() -> None:
    p, s = decay_samples(0.475, 3.517)
    fit = fit_decay(list(zip(p, s)))
    assert fit_payload({1.0: fit})["a"] == pytest.approx(0.475)
    multiple = fit_payload({2.0: fit, 1.0: fit})
    assert [entry["size"] for entry in multiple["fits"]] == [1.0, 2.0]


def test_read_curves(tmp_path: Path) -> None:
    path = tmp_path / "curves.csv"
    path.write_text(
        "task,p,q,size,seed,episode,return,manifest\n"
        "signal_rl,0.0,,1.0,0,1,-10.0,abc\n"
        "signal_rl,0.0,,1.0,1,1,-20.0,abc\n"
        "signal_rl,0.0,,1.0,0,2,-4.0,abc\n"
        "signal_rl,0.0,,1.0,1,2,-6.0,abc\n"
        "signal_rl,0.5,0.25,1.0,0,1,-30.0,abc\n"
    )
    curves = read_curves([path, tmp_path / "missing.csv"])
    assert curves == {"p=0": [-15.0, -5.0], "p=0.5 q=0.25": [-30.0]}
