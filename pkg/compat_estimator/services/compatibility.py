from __future__ import annotations

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Final

import numpy as np
from pydantic import Field, ValidationError

from compat_estimator.exceptions import InvalidCompatibilityError
from compat_estimator.schemas import Document, validation_messages
from compat_estimator.types import (
    BoolArray,
    CompatibilityMatrix,
    FloatArray,
    FreeParams,
)

logger = logging.getLogger(__name__)

VALIDATION_TOL: Final[float] = 1e-6


def free_param_count(k: int) -> int:
    return k * (k - 1) // 2


def _lower_triangle_indices(k: int) -> tuple[list[int], list[int]]:
    rows: list[int] = []
    cols: list[int] = []
    for i in range(k - 1):
        for j in range(i + 1):
            rows.append(i)
            cols.append(j)
    return rows, cols


def reconstruct_h(p: FreeParams) -> CompatibilityMatrix:
    k = p.k
    h = np.asarray(p.h, dtype=np.float64)
    if h.shape != (free_param_count(k),):
        raise InvalidCompatibilityError(
            f"expected {free_param_count(k)} free parameters for k={k}, got {h.shape}"
        )
    entries = np.zeros((k, k), dtype=np.float64)
    if k == 1:
        entries[0, 0] = 1.0
        return CompatibilityMatrix(k=k, entries=entries)

    rows, cols = _lower_triangle_indices(k)
    block = np.zeros((k - 1, k - 1), dtype=np.float64)
    block[rows, cols] = h
    block = block + np.tril(block, -1).T
    entries[: k - 1, : k - 1] = block
    last_column = 1.0 - block.sum(axis=1)
    entries[: k - 1, k - 1] = last_column
    entries[k - 1, : k - 1] = last_column
    entries[k - 1, k - 1] = 2.0 - k + block.sum()
    return CompatibilityMatrix(k=k, entries=entries)


def extract_free_params(H: CompatibilityMatrix) -> FreeParams:
    validate_compatibility(H.entries)
    rows, cols = _lower_triangle_indices(H.k)
    return FreeParams(k=H.k, h=H.entries[rows, cols].astype(np.float64))


def validate_compatibility(entries: FloatArray, tol: float = VALIDATION_TOL) -> None:
    entries = np.asarray(entries, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise InvalidCompatibilityError(f"expected a square matrix, got {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise InvalidCompatibilityError("compatibility entries must be finite")
    if np.max(np.abs(entries - entries.T)) > tol:
        raise InvalidCompatibilityError("compatibility matrix is not symmetric")
    if np.max(np.abs(entries.sum(axis=1) - 1.0)) > tol:
        raise InvalidCompatibilityError("compatibility rows must sum to 1")


def make_compatibility(entries: FloatArray) -> CompatibilityMatrix:
    entries = np.array(entries, dtype=np.float64)
    validate_compatibility(entries)
    return CompatibilityMatrix(k=int(entries.shape[0]), entries=entries)


def uniform_compatibility(k: int) -> CompatibilityMatrix:
    return CompatibilityMatrix(k=k, entries=np.full((k, k), 1.0 / k))


def skew_compatibility(k: int, h: float) -> CompatibilityMatrix:
    """Entries 1 with one entry ``h`` per row on a symmetric class pairing.

    Classes are paired 0↔1, 2↔3, ...; an odd last class pairs with itself.
    The result is divided by ``k - 1 + h`` so rows sum to one.
    """
    entries = np.ones((k, k), dtype=np.float64)
    for c in range(0, k, 2):
        partner = c + 1 if c + 1 < k else c
        entries[c, partner] = h
        entries[partner, c] = h
    return CompatibilityMatrix(k=k, entries=entries / (k - 1 + h))


def center(H: CompatibilityMatrix) -> FloatArray:
    return H.entries - 1.0 / H.k


def matrix_power(H: CompatibilityMatrix, length: int) -> FloatArray:
    if length < 1:
        raise InvalidCompatibilityError(f"path length must be >= 1, got {length}")
    return np.linalg.matrix_power(H.entries, length)


def centered_radius(H: CompatibilityMatrix) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(center(H)))))


@lru_cache(maxsize=32)
def parameter_basis(k: int) -> tuple[FloatArray, FloatArray]:
    """Affine structure of the parameterization: H = offset + Σ_p h_p S^p.

    Returns ``(offset, structure)`` with ``structure`` of shape (k*, k, k).
    """
    count = free_param_count(k)
    offset = reconstruct_h(FreeParams(k=k, h=np.zeros(count))).entries
    structure = np.empty((count, k, k), dtype=np.float64)
    for p in range(count):
        unit = np.zeros(count)
        unit[p] = 1.0
        structure[p] = reconstruct_h(FreeParams(k=k, h=unit)).entries - offset
    offset.setflags(write=False)
    structure.setflags(write=False)
    return offset, structure


def minimize_quadratic(
    gram: FloatArray, target: FloatArray, constant: float
) -> tuple[FreeParams, float]:
    """Minimize c − 2⟨T, H⟩ + ⟨H, G H⟩ over the parameterized matrices.

    This is the shared normal-equation solve behind ||D(H − P)||² and
    ||E − N H||²; ``gram`` is G (k×k PSD) and ``target`` is T.
    """
    k = int(gram.shape[0])
    offset, structure = parameter_basis(k)
    gram_structure = np.einsum("ab,pbc->pac", gram, structure)
    system = np.einsum("pac,qac->pq", gram_structure, structure)
    residual_target = target - gram @ offset
    rhs = np.einsum("ac,pac->p", residual_target, structure)
    h, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    params = FreeParams(k=k, h=h)
    H = reconstruct_h(params).entries
    energy = constant - 2.0 * float(np.sum(target * H)) + float(np.sum(H * (gram @ H)))
    return params, max(energy, 0.0)


def project_to_compatibility(
    M: FloatArray, row_mask: BoolArray | None = None
) -> CompatibilityMatrix:
    """Frobenius-closest symmetric row-stochastic matrix to ``M``.

    Rows flagged in ``row_mask`` are excluded from the distance.
    """
    M = np.asarray(M, dtype=np.float64)
    k = int(M.shape[0])
    keep = np.ones(k) if row_mask is None else (~np.asarray(row_mask)).astype(float)
    weights = np.diag(keep)
    target = weights @ M
    params, _ = minimize_quadratic(weights, target, float(np.sum(target * M)))
    return reconstruct_h(params)


def clip_and_project(H: CompatibilityMatrix) -> CompatibilityMatrix:
    if np.all((H.entries >= 0.0) & (H.entries <= 1.0)):
        return H
    return project_to_compatibility(np.clip(H.entries, 0.0, 1.0))


class CompatibilityDocument(Document):
    k: int = Field(ge=1)
    H: list[list[float]]


def compatibility_to_json(H: CompatibilityMatrix) -> dict[str, object]:
    return {"k": H.k, "H": H.entries.tolist()}


def compatibility_from_json(data: dict[str, object]) -> CompatibilityMatrix:
    try:
        document = CompatibilityDocument.model_validate(data)
    except ValidationError as e:
        raise InvalidCompatibilityError("; ".join(validation_messages(e))) from e
    try:
        entries = np.array(document.H, dtype=np.float64)
    except ValueError as e:
        raise InvalidCompatibilityError(f"H: rows have different lengths ({e})") from e
    H = make_compatibility(entries)
    if H.k != document.k:
        raise InvalidCompatibilityError(
            f"declared k={document.k} but matrix is {H.k}x{H.k}"
        )
    return H


def write_compatibility(H: CompatibilityMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(compatibility_to_json(H), handle, indent=2)
        handle.write("\n")


def read_compatibility(path: str | Path) -> CompatibilityMatrix:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise InvalidCompatibilityError(f"{path}: expected a JSON object")
    return compatibility_from_json(data)
