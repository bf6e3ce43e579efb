from __future__ import annotations

import numpy as np
import pytest

from compat_estimator.exceptions import (
    EstimationError,
    InvalidCompatibilityError,
    InvalidParameterError,
)
from compat_estimator.services.compatibility import (
    extract_free_params,
    free_param_count,
    make_compatibility,
    parameter_basis,
    reconstruct_h,
    skew_compatibility,
)
from compat_estimator.services.estimation import (
    clipped_result,
    dce_energy,
    dce_estimate,
    dce_gradient,
    dcer_estimate,
    estimation_result_to_json,
    heuristic_compatibility,
    holdout_estimate,
    lce_estimate,
    mce_estimate,
    mce_from_summaries,
    parse_pattern,
    restart_points,
)
from compat_estimator.services.graph_core import build_graph, make_label_set
from compat_estimator.services.summarization import weight_vector
from compat_estimator.tests.conftest import SummariesFactory
from compat_estimator.types import (
    EstimationResult,
    EstimatorConfig,
    FreeParams,
    GraphSummaries,
    LabelSet,
    Method,
    NormalizationVariant,
    PropagationConfig,
    SparseGraph,
)

# ============================================================================
# MCE
# ============================================================================


def test_mce_symmetrizes_k2_statistics() -> None:
    result = mce_estimate(np.array([[0.6, 0.4], [0.2, 0.8]]))
    np.testing.assert_allclose(result.h_hat.entries, [[0.7, 0.3], [0.3, 0.7]])
    assert result.method is Method.MCE
    assert result.energy == pytest.approx(0.04)


def test_mce_recovers_exact_statistics(exact_summaries: SummariesFactory) -> None:
    H = skew_compatibility(3, 3.0)
    result = mce_from_summaries(exact_summaries(H, 2))
    np.testing.assert_allclose(result.h_hat.entries, H.entries, atol=1e-10)
    assert result.energy == pytest.approx(0.0, abs=1e-12)


def test_mce_with_every_row_masked_is_uniform(caplog: pytest.LogCaptureFixture) -> None:
    result = mce_estimate(np.full((3, 3), 1 / 3), row_mask=np.ones(3, dtype=bool))
    np.testing.assert_allclose(result.h_hat.entries, np.full((3, 3), 1 / 3))
    assert "uniform" in caplog.text


# ============================================================================
# LCE
# ============================================================================


def test_lce_two_cliques(two_cliques: tuple[SparseGraph, LabelSet]) -> None:
    g, labels = two_cliques
    result = lce_estimate(g, labels)
    assert result.h_hat.entries[0, 0] == pytest.approx(2 / 3)
    assert result.method is Method.LCE


def test_lce_matches_dense_least_squares() -> None:
    rng = np.random.default_rng(21)
    n, k = 50, 3
    upper = np.triu(rng.random((n, n)) < 0.2, k=1)
    sources, targets = np.nonzero(upper)
    g = build_graph(sources, targets, n=n)
    chosen = rng.choice(n, size=20, replace=False)
    seeds = make_label_set(chosen, rng.integers(0, k, size=20), k=k)

    E = np.zeros((n, k))
    E[seeds.nodes, seeds.classes] = 1.0
    N = g.adjacency.toarray() @ E
    offset, structure = parameter_basis(k)
    design = np.stack([(N @ s).ravel() for s in structure], axis=1)
    response = (E - N @ offset).ravel()
    expected, *_ = np.linalg.lstsq(design, response, rcond=None)

    result = lce_estimate(g, seeds)
    np.testing.assert_allclose(extract_free_params(result.h_hat).h, expected, atol=1e-6)
    residual = E - N @ result.h_hat.entries
    assert result.energy == pytest.approx(float(np.sum(residual**2)), rel=1e-8)


def test_lce_isolated_seeds_fall_back_to_uniform(
    caplog: pytest.LogCaptureFixture,
) -> None:
    g = build_graph(np.array([1]), np.array([2]), n=3)
    seeds = make_label_set(np.array([0]), np.array([1]), k=2)
    result = lce_estimate(g, seeds)
    np.testing.assert_allclose(result.h_hat.entries, np.full((2, 2), 0.5))
    assert "uniform" in caplog.text


# ============================================================================
# DCE energy and gradient
# ============================================================================


def _identity_summaries() -> GraphSummaries:
    return GraphSummaries(
        k=2,
        lmax=1,
        raw=np.eye(2)[None],
        normalized=np.eye(2)[None],
        variant=NormalizationVariant.ROW_STOCHASTIC,
        zero_row_mask=np.zeros((1, 2), dtype=bool),
    )


def test_dce_energy_by_hand() -> None:
    energy = dce_energy(FreeParams(k=2, h=np.array([0.5])), _identity_summaries(), np.ones(1))
    assert energy == pytest.approx(1.0)


def test_dce_energy_ignores_masked_rows() -> None:
    summaries = _identity_summaries()
    masked = GraphSummaries(
        k=2,
        lmax=1,
        raw=summaries.raw,
        normalized=summaries.normalized,
        variant=summaries.variant,
        zero_row_mask=np.array([[False, True]]),
    )
    energy = dce_energy(FreeParams(k=2, h=np.array([0.5])), masked, np.ones(1))
    assert energy == pytest.approx(0.5)


def test_dce_energy_rejects_too_many_weights() -> None:
    with pytest.raises(EstimationError):
        dce_energy(FreeParams(k=2, h=np.array([0.5])), _identity_summaries(), np.ones(2))


def test_dce_gradient_matches_finite_differences(
    exact_summaries: SummariesFactory,
) -> None:
    summaries = exact_summaries(skew_compatibility(3, 3.0), 3)
    weights = weight_vector(2.0, 3)
    h = np.array([0.25, 0.4, 0.3])
    analytic = dce_gradient(FreeParams(k=3, h=h), summaries, weights)

    step = 1e-6
    numeric = np.empty_like(h)
    for p in range(h.size):
        up, down = h.copy(), h.copy()
        up[p] += step
        down[p] -= step
        numeric[p] = (
            dce_energy(FreeParams(k=3, h=up), summaries, weights)
            - dce_energy(FreeParams(k=3, h=down), summaries, weights)
        ) / (2 * step)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def _random_summaries(k: int, lmax: int, rng: np.random.Generator) -> GraphSummaries:
    normalized = np.stack([rng.dirichlet(np.ones(k), size=k) for _ in range(lmax)])
    mask = rng.random((lmax, k)) < 0.25
    return GraphSummaries(
        k=k,
        lmax=lmax,
        raw=normalized.copy(),
        normalized=normalized,
        variant=NormalizationVariant.ROW_STOCHASTIC,
        zero_row_mask=mask,
    )


@pytest.mark.parametrize("k", [2, 3, 5])
@pytest.mark.parametrize("lmax", [1, 3, 5])
def test_dce_gradient_matches_finite_differences_with_masks(k: int, lmax: int) -> None:
    rng = np.random.default_rng(10 * k + lmax)
    summaries = _random_summaries(k, lmax, rng)
    weights = weight_vector(2.0, lmax)
    h = 1.0 / k + rng.uniform(-0.1, 0.1, size=free_param_count(k))
    analytic = dce_gradient(FreeParams(k=k, h=h), summaries, weights)

    step = 1e-6
    numeric = np.empty_like(h)
    for p in range(h.size):
        up, down = h.copy(), h.copy()
        up[p] += step
        down[p] -= step
        numeric[p] = (
            dce_energy(FreeParams(k=k, h=up), summaries, weights)
            - dce_energy(FreeParams(k=k, h=down), summaries, weights)
        ) / (2 * step)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_longer_paths_do_not_move_the_uniform_start(
    exact_summaries: SummariesFactory,
) -> None:
    summaries = exact_summaries(skew_compatibility(3, 3.0), 3)
    uniform = FreeParams(k=3, h=np.full(3, 1 / 3))
    short_only = dce_gradient(uniform, summaries, np.array([1.0, 0.0, 0.0]))
    all_lengths = dce_gradient(uniform, summaries, np.array([1.0, 10.0, 100.0]))
    np.testing.assert_allclose(all_lengths, short_only, atol=1e-12)
    assert np.abs(short_only).max() > 0


# ============================================================================
# DCE and DCEr
# ============================================================================


def test_dce_recovers_exact_compatibility(exact_summaries: SummariesFactory) -> None:
    H = skew_compatibility(3, 3.0)
    cfg = EstimatorConfig(lmax=3, scaling=1.0, max_gd_iters=2000)
    result = dce_estimate(exact_summaries(H, 3), cfg)
    np.testing.assert_allclose(result.h_hat.entries, H.entries, atol=1e-3)
    assert result.energy_trace[0] >= result.energy_trace[-1]
    assert result.hyperparameters["lmax"] == 3


def test_single_length_dce_matches_mce_from_random_starts() -> None:
    rng = np.random.default_rng(8)
    statistics = rng.dirichlet(np.ones(3), size=3)
    summaries = GraphSummaries(
        k=3,
        lmax=1,
        raw=statistics[None].copy(),
        normalized=statistics[None],
        variant=NormalizationVariant.ROW_STOCHASTIC,
        zero_row_mask=np.zeros((1, 3), dtype=bool),
    )
    expected = mce_from_summaries(summaries).h_hat.entries
    cfg = EstimatorConfig(lmax=1, grad_tol=1e-10, max_gd_iters=5000)
    for _ in range(20):
        start = FreeParams(k=3, h=rng.uniform(0.0, 0.6, size=free_param_count(3)))
        result = dce_estimate(summaries, cfg, initial=start)
        np.testing.assert_allclose(result.h_hat.entries, expected, atol=1e-6)


def test_dcer_recovers_exact_compatibility(exact_summaries: SummariesFactory) -> None:
    H = skew_compatibility(3, 3.0)
    cfg = EstimatorConfig(lmax=3, scaling=1.0, max_gd_iters=2000, restarts=10)
    result = dcer_estimate(exact_summaries(H, 3), cfg, seed=0)
    np.testing.assert_allclose(result.h_hat.entries, H.entries, atol=1e-3)
    assert result.restarts_used == 9
    assert result.method is Method.DCER


def test_dcer_parallel_restarts_match_sequential(
    exact_summaries: SummariesFactory,
) -> None:
    summaries = exact_summaries(skew_compatibility(3, 8.0), 3)
    sequential = dcer_estimate(summaries, EstimatorConfig(max_workers=1), seed=3)
    parallel = dcer_estimate(summaries, EstimatorConfig(max_workers=4), seed=3)
    np.testing.assert_array_equal(parallel.h_hat.entries, sequential.h_hat.entries)
    assert parallel.energy == sequential.energy


def test_dcer_rejects_large_perturbation(exact_summaries: SummariesFactory) -> None:
    summaries = exact_summaries(skew_compatibility(3, 3.0), 2)
    with pytest.raises(EstimationError, match="below 1/k"):
        dcer_estimate(summaries, EstimatorConfig(delta=0.2))


@pytest.mark.parametrize(
    "settings, message",
    [
        ({"restarts": 0}, "restarts must be >= 1"),
        ({"lmax": 0}, "lmax must be >= 1"),
        ({"scaling": 0.0}, "lambda must be positive"),
        ({"grad_tol": -1.0}, "grad_tol must be positive"),
        ({"delta": 0.0}, "delta must be positive"),
        ({"max_workers": 0}, "max_workers must be >= 1"),
    ],
)
def test_estimator_config_rejects_out_of_range(
    settings: dict[str, float], message: str
) -> None:
    with pytest.raises(InvalidParameterError, match=message):
        EstimatorConfig(**settings)


@pytest.mark.parametrize(
    "k, restarts, expected",
    [(3, 10, 9), (3, 1, 1), (2, 10, 3), (4, 10, 10), (3, 5, 5)],
)
def test_restart_point_counts(k: int, restarts: int, expected: int) -> None:
    points = restart_points(k, restarts, delta=0.01, seed=0)
    assert len(points) == expected
    np.testing.assert_allclose(points[0], np.full(k * (k - 1) // 2, 1 / k))
    distinct = {tuple(np.round(p, 12)) for p in points}
    assert len(distinct) == expected


def test_restart_points_lie_on_quadrant_corners() -> None:
    points = restart_points(3, 10, delta=0.05, seed=0)
    for point in points[1:]:
        np.testing.assert_allclose(np.abs(point - 1 / 3), np.full(3, 0.05))


# ============================================================================
# Holdout
# ============================================================================


def test_holdout_two_cliques(two_cliques: tuple[SparseGraph, LabelSet]) -> None:
    g, labels = two_cliques
    result = holdout_estimate(
        g,
        labels,
        EstimatorConfig(holdout_splits=1, holdout_max_evals=40),
        PropagationConfig(s=0.5, iterations=5),
        seed=0,
    )
    assert result.h_hat.entries[0, 0] > 0.5
    assert result.energy == pytest.approx(0.0)
    assert result.hyperparameters["compound_accuracy"] == pytest.approx(1.0)
    assert result.method is Method.HOLDOUT


def test_holdout_respects_evaluation_budget(
    two_cliques: tuple[SparseGraph, LabelSet],
) -> None:
    g, labels = two_cliques
    result = holdout_estimate(
        g, labels, EstimatorConfig(holdout_max_evals=10), seed=1
    )
    evaluations = result.hyperparameters["evaluations"]
    assert isinstance(evaluations, int)
    assert evaluations <= 12


# ============================================================================
# Heuristic
# ============================================================================


def test_parse_pattern() -> None:
    assert parse_pattern("l, h; h ,l;") == [["L", "H"], ["H", "L"]]


def test_heuristic_heterophily_pattern() -> None:
    pattern = parse_pattern("L,H,H;H,L,H;H,H,L")
    H = heuristic_compatibility(pattern, gap=0.3)
    diagonal = 1 / 3 - 2 * 0.3 / 3
    off_diagonal = 1 / 3 + 0.3 / 3
    expected = np.full((3, 3), off_diagonal)
    np.fill_diagonal(expected, diagonal)
    np.testing.assert_allclose(H.entries, expected)


def test_heuristic_keeps_high_entries_above_low_entries() -> None:
    pattern = parse_pattern("H,L,L,L;L,L,H,L;L,H,L,L;L,L,L,H")
    H = heuristic_compatibility(pattern, gap=0.2)
    high = np.array(pattern) == "H"
    for row, mask in zip(H.entries, high):
        assert row[mask].min() > row[~mask].max()


@pytest.mark.parametrize(
    "pattern, gap, message",
    [
        ("L,H,H;H,L,H", 0.1, "square"),
        ("L,X;X,L", 0.1, "'H' or 'L'"),
        ("L,H;L,L", 0.1, "symmetric"),
        ("L,H;H,L", -0.1, "non-negative"),
    ],
)
def test_heuristic_rejects(pattern: str, gap: float, message: str) -> None:
    with pytest.raises(InvalidCompatibilityError, match=message):
        heuristic_compatibility(parse_pattern(pattern), gap)


def test_estimation_result_to_json() -> None:
    result = mce_estimate(np.array([[0.6, 0.4], [0.2, 0.8]]))
    document = estimation_result_to_json(result)
    assert document["method"] == "MCE"
    assert document["k"] == 2
    assert document["energy_trace_length"] == 0


def test_clipped_result_moves_estimate_into_unit_interval() -> None:
    result = EstimationResult(
        h_hat=reconstruct_h(FreeParams(k=2, h=np.array([1.2]))),
        energy=0.0,
        restarts_used=1,
        wall_time=0.0,
        method=Method.DCE,
        hyperparameters={"lmax": 1},
    )
    assert clipped_result(result, EstimatorConfig()) is result

    clipped = clipped_result(result, EstimatorConfig(clip=True))
    np.testing.assert_allclose(clipped.h_hat.entries, np.eye(2), atol=1e-12)
    assert clipped.hyperparameters == {"lmax": 1, "clip": True}


def test_clipped_result_keeps_valid_estimate() -> None:
    H = make_compatibility(np.array([[0.3, 0.7], [0.7, 0.3]]))
    result = EstimationResult(
        h_hat=H, energy=0.0, restarts_used=1, wall_time=0.0, method=Method.MCE
    )
    assert clipped_result(result, EstimatorConfig(clip=True)).h_hat is H
