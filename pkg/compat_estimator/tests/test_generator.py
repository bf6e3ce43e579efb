from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from scipy import stats

from compat_estimator.exceptions import GeneratorInfeasibleError
from compat_estimator.services.compatibility import make_compatibility, skew_compatibility
from compat_estimator.services.generator import (
    MAX_ATTEMPTS,
    balanced_alpha,
    class_sizes,
    generate_graph,
    plan_block_counts,
    sample_degrees,
    stub_totals,
    write_manifest,
)
from compat_estimator.services.summarization import factorized_summaries
from compat_estimator.types import CompatibilityMatrix, DegreeFamily, GeneratorSpec


def _spec(
    n: int = 300,
    m: int = 3000,
    h: CompatibilityMatrix | None = None,
    dist: DegreeFamily = DegreeFamily.UNIFORM,
    seed: int = 0,
) -> GeneratorSpec:
    h = h if h is not None else skew_compatibility(3, 3.0)
    return GeneratorSpec(
        n=n, m=m, alpha=balanced_alpha(h.k), h=h, dist=dist, seed=seed
    )


# ============================================================================
# Planning
# ============================================================================


def test_plan_block_counts_k3() -> None:
    blocks = plan_block_counts(_spec())
    np.testing.assert_array_equal(
        blocks, [[200, 1200, 400], [1200, 200, 400], [400, 400, 600]]
    )
    assert int(np.triu(blocks).sum()) == 3000


def test_stub_totals_give_equal_endpoint_mass() -> None:
    stubs = stub_totals(plan_block_counts(_spec()))
    np.testing.assert_array_equal(stubs, [2000, 2000, 2000])


def test_class_sizes_sum_to_n() -> None:
    spec = GeneratorSpec(
        n=10, m=20, alpha=np.array([0.5, 0.25, 0.25]), h=skew_compatibility(3, 2.0)
    )
    np.testing.assert_array_equal(class_sizes(spec), [5, 3, 2])


def test_block_over_capacity_rejected() -> None:
    spec = _spec(n=6, m=10, h=make_compatibility(np.eye(2)))
    with pytest.raises(GeneratorInfeasibleError, match="node pairs exist"):
        plan_block_counts(spec)


@pytest.mark.parametrize(
    "spec, message",
    [
        (
            GeneratorSpec(n=10, m=20, alpha=np.array([1.0]), h=skew_compatibility(3, 2.0)),
            "alpha has 1 entries",
        ),
        (
            GeneratorSpec(
                n=10, m=20, alpha=np.array([0.6, 0.6]), h=skew_compatibility(2, 2.0)
            ),
            "sum to 1",
        ),
        (
            GeneratorSpec(n=10, m=4, alpha=balanced_alpha(2), h=skew_compatibility(2, 2.0)),
            "average degree",
        ),
        (
            GeneratorSpec(
                n=10,
                m=20,
                alpha=balanced_alpha(2),
                h=CompatibilityMatrix(k=2, entries=np.array([[1.2, -0.2], [-0.2, 1.2]])),
            ),
            "non-negative",
        ),
        (
            GeneratorSpec(
                n=10,
                m=20,
                alpha=balanced_alpha(2),
                h=CompatibilityMatrix(k=2, entries=np.array([[0.7, 0.7], [0.3, 0.3]])),
            ),
            "planted matrix is invalid",
        ),
    ],
)
def test_invalid_specs_rejected(spec: GeneratorSpec, message: str) -> None:
    with pytest.raises(GeneratorInfeasibleError, match=message):
        plan_block_counts(spec)


# ============================================================================
# Degree sampling
# ============================================================================


def test_uniform_degrees_are_balanced() -> None:
    degrees = sample_degrees(100, 2050, DegreeFamily.UNIFORM, 0.3, np.random.default_rng(0))
    assert degrees.sum() == 2050
    assert set(degrees.tolist()) == {20, 21}


def test_sparse_degrees_keep_every_node_connected() -> None:
    degrees = sample_degrees(
        50, 60, DegreeFamily.POWERLAW, 0.9, np.random.default_rng(4)
    )
    assert degrees.sum() == 60
    assert degrees.min() >= 1


def test_fewer_stubs_than_nodes() -> None:
    degrees = sample_degrees(10, 5, DegreeFamily.UNIFORM, 0.3, np.random.default_rng(0))
    assert degrees.sum() == 5
    assert set(degrees.tolist()) == {0, 1}


def test_powerlaw_degrees_follow_weights() -> None:
    size, stubs, coefficient = 2000, 2_000_000, 0.3
    degrees = sample_degrees(
        size, stubs, DegreeFamily.POWERLAW, coefficient, np.random.default_rng(7)
    )
    weights = np.power(1.0 - np.random.default_rng(7).random(size), -coefficient)
    expected = stubs * weights / weights.sum()
    assert degrees.sum() == stubs
    assert np.abs(degrees - expected).max() < 1.0

    rescaled = degrees * weights.sum() / stubs
    result = stats.kstest(rescaled, stats.pareto(b=1.0 / coefficient).cdf)
    assert result.pvalue > 0.001


# ============================================================================
# Wiring
# ============================================================================


def test_generated_graph_matches_plan() -> None:
    spec = _spec()
    generated = generate_graph(spec)
    g = generated.graph
    assert g.n == 300
    assert g.m == 3000
    assert g.adjacency.diagonal().sum() == 0
    assert g.adjacency.max() == 1.0
    np.testing.assert_array_equal(generated.block_counts, plan_block_counts(spec))
    np.testing.assert_array_equal(np.bincount(generated.labels.classes), [100, 100, 100])


def test_generated_powerlaw_graph_is_simple() -> None:
    generated = generate_graph(_spec(dist=DegreeFamily.POWERLAW, seed=2))
    assert generated.graph.m == 3000
    assert generated.graph.adjacency.max() == 1.0
    assert generated.attempts <= MAX_ATTEMPTS


def test_generation_is_deterministic() -> None:
    first = generate_graph(_spec(seed=9))
    second = generate_graph(_spec(seed=9))
    assert (first.graph.adjacency != second.graph.adjacency).nnz == 0
    np.testing.assert_array_equal(first.labels.classes, second.labels.classes)


def test_different_seeds_give_different_graphs() -> None:
    first = generate_graph(_spec(seed=1))
    second = generate_graph(_spec(seed=2))
    assert (first.graph.adjacency != second.graph.adjacency).nnz > 0


def test_repeated_repair_failure_is_infeasible() -> None:
    with patch(
        "compat_estimator.services.generator._repair", return_value=False
    ) as repair:
        with pytest.raises(GeneratorInfeasibleError, match="after 5 attempts"):
            generate_graph(_spec())
    assert repair.call_count == MAX_ATTEMPTS


def test_write_manifest(tmp_path: Path) -> None:
    spec = _spec(n=60, m=300)
    generated = generate_graph(spec)
    path = tmp_path / "g.manifest.json"
    write_manifest(spec, generated, path)
    manifest = json.loads(path.read_text())
    assert manifest["n"] == 60
    assert manifest["dist"] == "uniform"
    assert manifest["compatibility"]["k"] == 3
    assert manifest["planned_block_counts"] == manifest["achieved_block_counts"]
    assert manifest["attempts"] == generated.attempts


def test_fully_labeled_statistics_recover_planted_matrix() -> None:
    spec = _spec(h=skew_compatibility(3, 8.0), seed=5)
    generated = generate_graph(spec)
    summaries = factorized_summaries(generated.graph, generated.labels, lmax=1)
    np.testing.assert_allclose(summaries.normalized[0], spec.h.entries, atol=1e-9)
