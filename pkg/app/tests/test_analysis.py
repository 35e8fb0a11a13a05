from typing import Callable, Sequence

import numpy as np
import pytest

from app.analysis.advantage import advantage_grid, bilinear, zero_contour
from app.analysis.boundary import (
    classify,
    exponential,
    fit_boundary,
    logistic,
    se_bands,
    signed_area,
)
from app.analysis.fitting import (
    clean_score,
    decay_model,
    fit_decay,
    marginal_utility,
    r_squared,
)
from app.analysis.quantity import quantity_tradeoff
from app.analysis.schemas import (
    AdvantageGrid,
    BoundaryFamily,
    BoundaryFit,
    Classification,
    DecayFit,
    QuantityStatus,
)
from app.base.exceptions import CustomException, ExType
from app.base.utils.rng import make_rng

from .config import decay_samples, init_config  # noqa


def _field_grid(
    field: Callable[[float, float], float],
    p_grid: Sequence[float],
    q_grid: Sequence[float],
    se: float = 0.0,
) -> AdvantageGrid:
    return AdvantageGrid(
        p_grid=list(p_grid),
        q_grid=list(q_grid),
        mean=[[field(p, q) for q in q_grid] for p in p_grid],
        se=[[se] * len(q_grid) for _ in p_grid],
        n_seeds=2,
    )


@pytest.mark.parametrize("a, lam", [(0.475, 3.517), (395.8, 7.493)])
def test_fit_decay_round_trip(a: float, lam: float) -> None:
    p, s = decay_samples(a, lam)
    fit = fit_decay(list(zip(p, s)))
    assert fit.success
    assert fit.a == pytest.approx(a, rel=1e-6)
    assert fit.lam == pytest.approx(lam, rel=1e-6)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.n_points == 11


def test_fit_decay_with_noise() -> None:
    p, s = decay_samples(0.475, 3.517, np.linspace(0.0, 1.0, 21))
    noisy = s + make_rng(0).normal(scale=0.01 * 0.475, size=s.size)
    fit = fit_decay(list(zip(p, noisy)))
    assert fit.a == pytest.approx(0.475, rel=0.05)
    assert fit.lam == pytest.approx(3.517, rel=0.05)
    assert fit.r2 >= 0.99


def test_fit_decay_is_scale_equivariant() -> None:
    p, s = decay_samples(0.475, 3.517)
    s = s + make_rng(1).normal(scale=0.01, size=s.size)
    base = fit_decay(list(zip(p, s)))
    scaled = fit_decay(list(zip(p, 3.7 * s)))
    assert scaled.a == pytest.approx(3.7 * base.a, rel=1e-9)
    assert scaled.lam == pytest.approx(base.lam, rel=1e-9)


def test_fit_decay_degenerate_inputs() -> None:
    assert not fit_decay([(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]).success
    two_levels = [(0.0, 1.0), (0.0, 0.9), (1.0, 0.0), (1.0, 0.1)]
    assert not fit_decay(two_levels).success
    flat = fit_decay([(p, 0.3) for p in (0.0, 0.25, 0.5, 0.75)])
    assert not flat.success
    assert flat.message == "all scores are equal"


def test_r_squared() -> None:
    points = [(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)]
    assert r_squared(points, lambda x: {0.0: 1.0, 1.0: 2.0, 2.0: 4.0}[x]) == 1.0
    assert r_squared(points, lambda x: 7.0 / 3.0) == pytest.approx(0.0)
    assert r_squared(points, lambda x: x + 1.0) == pytest.approx(33.0 / 42.0)

    for bad in ([(0.0, 1.0)], [(0.0, 1.0), (1.0, 1.0)]):
        with pytest.raises(CustomException) as e:
            r_squared(bad, lambda x: x)
        assert e.value.code == ExType.FIT_FAILURE


def test_marginal_utility() -> None:
    fit = DecayFit(a=0.475, lam=3.517)
    assert marginal_utility(fit, 1.0) == pytest.approx(0.475 * 3.517)
    assert marginal_utility(fit, 0.0) == pytest.approx(0.0496, abs=1e-4)
    assert clean_score(fit) == pytest.approx(0.475 * (1 - np.exp(-3.517)))

    h = 1e-5
    for p in (0.1, 0.45, 0.9):
        upper, lower = decay_model([p - h, p + h], fit.a, fit.lam)
        numeric = (upper - lower) / (2 * h)
        assert marginal_utility(fit, p) == pytest.approx(numeric, abs=1e-6)


def test_advantage_grid_by_hand() -> None:
    scores_with = {
        (0.0, 0.0, 0): 1.0,
        (0.0, 0.0, 1): 3.0,
        (0.0, 1.0, 0): 2.0,
        (0.0, 1.0, 1): 2.0,
        (1.0, 0.0, 0): 2.0,
        (1.0, 0.0, 1): 2.0,
        (1.0, 1.0, 0): 2.0,
        (1.0, 1.0, 1): 2.0,
    }
    scores_without = {(0.0, 0): 1.0, (0.0, 1): 1.0, (1.0, 0): 0.0, (1.0, 1): 2.0}
    grid = advantage_grid(scores_with, scores_without)
    assert grid.mean == [[1.0, 1.0], [1.0, 1.0]]
    assert grid.se == [[1.0, 0.0], [1.0, 1.0]]
    assert grid.n_seeds == 2

    swapped = {(p, q, 1 - s): v for (p, q, s), v in scores_with.items()}
    assert advantage_grid(swapped, scores_without).mean == grid.mean


def test_advantage_of_identical_scores_is_zero() -> None:
    plain = {(p, s): p + s for p in (0.0, 0.5) for s in (0, 1)}
    imputed = {(p, q, s): v for (p, s), v in plain.items() for q in (0.0, 0.5)}
    grid = advantage_grid(imputed, plain)
    assert not grid.mean_array.any()


def test_advantage_grid_mismatch() -> None:
    plain = {(0.0, 0): 1.0, (0.5, 0): 1.0}
    with pytest.raises(CustomException) as e:
        advantage_grid({(0.0, 0.0, 0): 1.0, (0.0, 1.0, 0): 1.0}, plain)
    assert e.value.code == ExType.GRID_MISMATCH

    partial = {(0.0, 0.0, 0): 1.0, (0.5, 0.0, 0): 1.0, (0.5, 1.0, 0): 1.0}
    with pytest.raises(CustomException) as e:
        advantage_grid(partial, plain)
    assert e.value.field == "q_grid"


def test_zero_contour_of_horizontal_field() -> None:
    axis = np.linspace(0.0, 1.0, 6).tolist()
    grid = _field_grid(lambda p, q: q - 0.5, axis, axis)
    contour = zero_contour(grid)
    assert contour.n_polylines == 1
    assert all(abs(q - 0.5) < 1e-12 for _, q in contour.points)
    assert {round(p, 9) for p, _ in contour.points} == {round(p, 9) for p in axis}


def test_zero_contour_of_diagonal_field() -> None:
    grid = _field_grid(
        lambda p, q: q - p, np.linspace(0, 1, 6).tolist(), np.linspace(0, 1, 7)
    )
    contour = zero_contour(grid)
    assert len(contour.points) >= 6
    assert all(abs(q - p) <= 1 / 6 for p, q in contour.points)
    assert np.abs(bilinear(grid, contour.points)).max() < 1e-12


def test_zero_contour_single_sign_and_saddle() -> None:
    flat = _field_grid(lambda p, q: 1.0 + p, [0.0, 1.0], [0.0, 1.0])
    contour = zero_contour(flat)
    assert contour.empty
    assert contour.message == "no sign change"

    saddle = AdvantageGrid(
        p_grid=[0.0, 1.0],
        q_grid=[0.0, 1.0],
        mean=[[1.0, -1.0], [-1.0, 1.0]],
        se=[[0.0, 0.0], [0.0, 0.0]],
    )
    assert zero_contour(saddle).n_polylines == 2


def test_grid_validation() -> None:
    with pytest.raises(CustomException) as e:
        AdvantageGrid(p_grid=[0.0], q_grid=[0.0, 1.0], mean=[[0, 0]], se=[[0, 0]])
    assert e.value.code == ExType.GRID_MISMATCH


def test_logistic_boundary_recovers_midpoint() -> None:
    p = np.linspace(0.0, 1.0, 21)
    points = list(zip(p, logistic(p, 0.1, 0.9, 10.0, 0.7)))
    fit = fit_boundary(points, BoundaryFamily.LOGISTIC)
    assert fit.success
    assert fit.params["p0"] == pytest.approx(0.7, abs=0.05)
    assert fit.rmse < 1e-6
    assert fit.classification == Classification.NOISE_INSENSITIVE


def test_exponential_boundary_beats_logistic_on_exponential_data() -> None:
    p = np.linspace(0.0, 1.0, 21)
    points = list(zip(p, exponential(p, 0.8, 3.0)))
    exp_fit = fit_boundary(points, BoundaryFamily.EXPONENTIAL)
    logistic_fit = fit_boundary(points, BoundaryFamily.LOGISTIC)
    assert exp_fit.success
    assert exp_fit.params["k"] == pytest.approx(3.0, rel=1e-4)
    assert not logistic_fit.rmse <= exp_fit.rmse
    assert exp_fit.classification == Classification.NOISE_SENSITIVE


def test_diagonal_boundary_is_a_boundary_case() -> None:
    assert signed_area(lambda p: np.asarray(p)) == pytest.approx(0.0, abs=1e-12)
    assert signed_area(lambda p: np.ones_like(p)) == pytest.approx(0.5)
    assert classify(0.2) == Classification.NOISE_INSENSITIVE
    assert classify(-0.2) == Classification.NOISE_SENSITIVE

    p = np.linspace(0.0, 1.0, 11)
    fit = fit_boundary(list(zip(p, p)), BoundaryFamily.EXPONENTIAL)
    assert abs(fit.signed_area) < 1e-3
    assert fit.classification == Classification.BOUNDARY


def test_too_few_boundary_points() -> None:
    fit = fit_boundary([(0.0, 0.0), (1.0, 1.0)], BoundaryFamily.LOGISTIC)
    assert not fit.success
    assert fit.n_points == 2


def _flat_fit(q: float) -> BoundaryFit:
    params = {"q_min": q, "q_max": q, "k": 1.0, "p0": 0.5}
    return BoundaryFit(family=BoundaryFamily.LOGISTIC, params=params)


def test_se_bands_follow_the_hand_formula() -> None:
    axis = np.linspace(0.0, 1.0, 6).tolist()
    grid = _field_grid(lambda p, q: 2.0 * (q - 0.5), axis, axis, se=0.1)
    contour = [(0.0, 0.5), (1.0, 0.5)]

    still = se_bands(_flat_fit(0.5), contour, grid, 0.0)
    assert all(q == pytest.approx(0.5) for _, q in still.lower + still.upper)

    narrow = se_bands(_flat_fit(0.5), contour, grid, 1.0)
    wide = se_bands(_flat_fit(0.5), contour, grid, 1.96)
    assert len(narrow.lower) == 50
    # Offset = z * SE / |dA/dq| = z * 0.1 / 2.
    assert all(q == pytest.approx(0.45, rel=0.1) for _, q in narrow.lower)
    assert all(q == pytest.approx(0.55, rel=0.1) for _, q in narrow.upper)
    for (_, n_low), (_, w_low) in zip(narrow.lower, wide.lower):
        assert w_low < n_low
    for (_, n_high), (_, w_high) in zip(narrow.upper, wide.upper):
        assert w_high > n_high


def test_se_bands_omit_flat_regions() -> None:
    grid = _field_grid(lambda p, q: 0.0, [0.0, 1.0], [0.0, 1.0], se=0.1)
    bands = se_bands(_flat_fit(0.5), [(0.0, 0.5), (1.0, 0.5)], grid, 1.0)
    assert bands.omitted == 50
    assert not bands.lower and not bands.upper


def _saturating(sizes: Sequence[float], s_inf: float = 0.8, tau: float = 2.0):
    return {
        (0.0, size, seed): s_inf * (1 - np.exp(-size / tau))
        for size in sizes
        for seed in (0, 1)
    }


def test_quantity_reached_by_interpolation() -> None:
    (point,) = quantity_tradeoff(_saturating([1, 2, 4, 8, 16]), 0.6)
    assert point.status == QuantityStatus.REACHED
    analytic = -2.0 * np.log(1 - 0.6 / 0.8)
    assert point.required_size == pytest.approx(analytic, rel=0.1)
    assert point.asymptote == pytest.approx(0.8, rel=1e-4)
    assert point.warning is None


def test_quantity_extrapolated_and_unreachable() -> None:
    (point,) = quantity_tradeoff(_saturating([1, 2, 4]), 0.75)
    assert point.status == QuantityStatus.EXTRAPOLATED
    analytic = -2.0 * np.log(1 - 0.75 / 0.8)
    assert point.required_size == pytest.approx(analytic, rel=0.1)

    (point,) = quantity_tradeoff(_saturating([1, 2, 4, 8]), 0.95)
    assert point.status == QuantityStatus.UNREACHABLE
    assert point.required_size is None


def test_quantity_flags_non_monotone_means() -> None:
    results = {
        (0.2, size, seed): score
        for size, score in ((1, 0.5), (2, 0.9), (4, 0.3))
        for seed in (0, 1)
    }
    (point,) = quantity_tradeoff(results, 0.8)
    assert point.warning is not None
    assert point.status == QuantityStatus.REACHED

    with pytest.raises(CustomException) as e:
        quantity_tradeoff({(0.0, 1, 0): 0.1, (0.0, 2, 0): 0.2}, 0.5)
    assert e.value.code == ExType.VALIDATION_ERROR
