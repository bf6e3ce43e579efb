from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from compat_estimator.exceptions import InvalidCompatibilityError
from compat_estimator.services.compatibility import (
    center,
    centered_radius,
    clip_and_project,
    compatibility_from_json,
    extract_free_params,
    free_param_count,
    make_compatibility,
    matrix_power,
    parameter_basis,
    project_to_compatibility,
    read_compatibility,
    reconstruct_h,
    skew_compatibility,
    uniform_compatibility,
    write_compatibility,
)
from compat_estimator.types import CompatibilityMatrix, FreeParams

# ============================================================================
# Parameterization
# ============================================================================


@pytest.mark.parametrize("k, expected", [(1, 0), (2, 1), (3, 3), (4, 6), (7, 21)])
def test_free_param_count(k: int, expected: int) -> None:
    assert free_param_count(k) == expected


def test_reconstruct_k2() -> None:
    H = reconstruct_h(FreeParams(k=2, h=np.array([0.8])))
    np.testing.assert_allclose(H.entries, [[0.8, 0.2], [0.2, 0.8]])


def test_reconstruct_k3_uses_row_major_lower_triangle() -> None:
    H = reconstruct_h(FreeParams(k=3, h=np.array([0.2, 0.6, 0.2])))
    np.testing.assert_allclose(
        H.entries,
        [[0.2, 0.6, 0.2], [0.6, 0.2, 0.2], [0.2, 0.2, 0.6]],
    )


def test_reconstruct_k1_is_identity() -> None:
    H = reconstruct_h(FreeParams(k=1, h=np.array([])))
    np.testing.assert_array_equal(H.entries, [[1.0]])


def test_reconstruct_rejects_wrong_parameter_count() -> None:
    with pytest.raises(InvalidCompatibilityError):
        reconstruct_h(FreeParams(k=3, h=np.array([0.1, 0.2])))


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_reconstruct_is_symmetric_and_row_stochastic(k: int) -> None:
    rng = np.random.default_rng(k)
    H = reconstruct_h(FreeParams(k=k, h=rng.normal(size=free_param_count(k))))
    np.testing.assert_allclose(H.entries, H.entries.T)
    np.testing.assert_allclose(H.entries.sum(axis=1), np.ones(k))


def test_extract_inverts_reconstruct() -> None:
    H = skew_compatibility(4, 5.0)
    params = extract_free_params(H)
    np.testing.assert_allclose(reconstruct_h(params).entries, H.entries)


def test_parameter_basis_is_affine_map() -> None:
    offset, structure = parameter_basis(3)
    h = np.array([0.3, 0.1, 0.5])
    expected = reconstruct_h(FreeParams(k=3, h=h)).entries
    np.testing.assert_allclose(offset + np.tensordot(h, structure, axes=1), expected)
    assert not structure.flags.writeable


# ============================================================================
# Validation and construction
# ============================================================================


def test_make_compatibility_accepts_valid_matrix() -> None:
    H = make_compatibility(np.array([[0.3, 0.7], [0.7, 0.3]]))
    assert H.k == 2


@pytest.mark.parametrize(
    "entries, message",
    [
        ([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]], "square"),
        ([[0.6, 0.4], [0.3, 0.7]], "symmetric"),
        ([[0.6, 0.6], [0.6, 0.6]], "sum to 1"),
        ([[np.nan, 0.5], [0.5, 0.5]], "finite"),
    ],
)
def test_make_compatibility_rejects(entries: list[list[float]], message: str) -> None:
    with pytest.raises(InvalidCompatibilityError, match=message):
        make_compatibility(np.array(entries))


def test_uniform_compatibility() -> None:
    H = uniform_compatibility(4)
    np.testing.assert_allclose(H.entries, np.full((4, 4), 0.25))
    assert centered_radius(H) == pytest.approx(0.0, abs=1e-12)


def test_skew_compatibility_k3() -> None:
    H = skew_compatibility(3, 3.0)
    expected = np.array([[1, 3, 1], [3, 1, 1], [1, 1, 3]]) / 5.0
    np.testing.assert_allclose(H.entries, expected)


def test_skew_compatibility_even_k_pairs_classes() -> None:
    H = skew_compatibility(4, 8.0)
    assert H.entries[0, 1] == pytest.approx(8.0 / 11.0)
    assert H.entries[2, 3] == pytest.approx(8.0 / 11.0)
    assert H.entries[0, 0] == pytest.approx(1.0 / 11.0)


def test_centered_radius_of_skew() -> None:
    assert centered_radius(skew_compatibility(3, 3.0)) == pytest.approx(0.4)


def test_center_rows_sum_to_zero() -> None:
    centered = center(skew_compatibility(3, 3.0))
    np.testing.assert_allclose(centered.sum(axis=1), np.zeros(3), atol=1e-12)


def test_matrix_power() -> None:
    squared = matrix_power(skew_compatibility(3, 3.0), 2)
    assert squared.max() == pytest.approx(0.44)
    np.testing.assert_allclose(squared.sum(axis=1), np.ones(3))


def test_matrix_power_rejects_zero_length() -> None:
    with pytest.raises(InvalidCompatibilityError):
        matrix_power(uniform_compatibility(2), 0)


# ============================================================================
# Projection
# ============================================================================


def test_projection_keeps_valid_matrix() -> None:
    H = skew_compatibility(3, 3.0)
    np.testing.assert_allclose(project_to_compatibility(H.entries).entries, H.entries)


def test_projection_of_asymmetric_k2_matrix() -> None:
    H = project_to_compatibility(np.array([[0.6, 0.4], [0.2, 0.8]]))
    assert H.entries[0, 0] == pytest.approx(0.7)
    assert H.entries[1, 1] == pytest.approx(0.7)


def test_projection_ignores_masked_rows() -> None:
    M = np.array([[0.9, 0.1], [0.5, 0.5]])
    H = project_to_compatibility(M, row_mask=np.array([False, True]))
    assert H.entries[0, 0] == pytest.approx(0.9)


def test_clip_and_project_leaves_valid_matrix_untouched() -> None:
    H = skew_compatibility(3, 3.0)
    assert clip_and_project(H) is H


def test_clip_and_project_pulls_entries_back() -> None:
    H = CompatibilityMatrix(k=2, entries=np.array([[1.2, -0.2], [-0.2, 1.2]]))
    clipped = clip_and_project(H)
    np.testing.assert_allclose(clipped.entries, np.eye(2))


# ============================================================================
# JSON files
# ============================================================================


def test_json_round_trip(tmp_path: Path) -> None:
    H = skew_compatibility(3, 3.0)
    path = tmp_path / "h.json"
    write_compatibility(H, path)
    assert json.loads(path.read_text())["k"] == 3
    np.testing.assert_allclose(read_compatibility(path).entries, H.entries)


def test_json_rejects_mismatched_k() -> None:
    with pytest.raises(InvalidCompatibilityError, match="declared k=3"):
        compatibility_from_json({"k": 3, "H": [[0.5, 0.5], [0.5, 0.5]]})


def test_json_rejects_missing_keys() -> None:
    with pytest.raises(InvalidCompatibilityError):
        compatibility_from_json({"H": [[1.0]]})


def test_read_rejects_non_object(tmp_path: Path) -> None:
    path = tmp_path / "h.json"
    path.write_text("[1, 2]")
    with pytest.raises(InvalidCompatibilityError, match="JSON object"):
        read_compatibility(path)


def test_json_rejects_unknown_keys() -> None:
    with pytest.raises(InvalidCompatibilityError, match="comment: unknown key"):
        compatibility_from_json(
            {"k": 2, "H": [[0.5, 0.5], [0.5, 0.5]], "comment": "hand-made"}
        )


def test_json_rejects_ragged_rows() -> None:
    with pytest.raises(InvalidCompatibilityError, match="different lengths"):
        compatibility_from_json({"k": 2, "H": [[0.5, 0.5], [1.0]]})
