from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Final

import numpy as np
from pydantic import Field, ValidationError, model_validator

from compat_estimator.exceptions import InvalidParameterError, SummarizationError
from compat_estimator.schemas import Document, validation_messages
from compat_estimator.services.graph_core import explicit_matrix
from compat_estimator.types import (
    BoolArray,
    FloatArray,
    GraphSummaries,
    LabelSet,
    NormalizationVariant,
    SparseGraph,
)

logger = logging.getLogger(__name__)

DEFAULT_DENSE_CAP: Final[int] = 2000


def nb_walk_counts_dense(
    g: SparseGraph, length: int, *, cap: int = DEFAULT_DENSE_CAP
) -> FloatArray:
    """Dense W_NB^(ℓ) via the three-term recurrence; small graphs only."""
    if length < 1:
        raise SummarizationError(f"path length must be >= 1, got {length}")
    if g.n > cap:
        raise SummarizationError(
            f"dense path counts limited to {cap} nodes, graph has {g.n}"
        )
    w = g.adjacency.toarray()
    degree_minus_one = np.diag(g.degrees - 1.0)
    previous = w
    if length == 1:
        return previous
    current = w @ w - np.diag(g.degrees)
    for _ in range(3, length + 1):
        previous, current = current, w @ current - degree_minus_one @ previous
    return current


def normalize_statistics(
    M: FloatArray, variant: NormalizationVariant | int
) -> tuple[FloatArray, BoolArray]:
    """Normalize raw counts; returns the matrix and the zero-row mask."""
    variant = NormalizationVariant(variant)
    M = np.asarray(M, dtype=np.float64)
    k = int(M.shape[0])
    row_sums = M.sum(axis=1)
    zero_rows = row_sums <= 0.0

    if variant is NormalizationVariant.SCALED:
        total = float(row_sums.sum())
        if total <= 0.0:
            return np.full((k, k), 1.0 / k), np.ones(k, dtype=bool)
        return k * M / total, zero_rows

    safe = np.where(zero_rows, 1.0, row_sums)
    if variant is NormalizationVariant.ROW_STOCHASTIC:
        normalized = M / safe[:, None]
    else:
        scale = 1.0 / np.sqrt(safe)
        normalized = scale[:, None] * M * scale[None, :]
    normalized[zero_rows] = 1.0 / k
    return normalized, zero_rows


def _require_seeds(seeds: LabelSet, lmax: int) -> None:
    if seeds.n_labeled == 0:
        raise SummarizationError("cannot summarize a graph without labeled nodes")
    if lmax < 1:
        raise SummarizationError(f"lmax must be >= 1, got {lmax}")


def _assemble(
    raw: list[FloatArray],
    k: int,
    variant: NormalizationVariant | int,
    non_backtracking: bool,
) -> GraphSummaries:
    variant = NormalizationVariant(variant)
    normalized = []
    masks = []
    for length, counts in enumerate(raw, start=1):
        matrix, mask = normalize_statistics(counts, variant)
        if mask.any():
            logger.debug(
                "Path length %d: classes %s have no labeled partners",
                length,
                np.flatnonzero(mask).tolist(),
            )
        normalized.append(matrix)
        masks.append(mask)
    return GraphSummaries(
        k=k,
        lmax=len(raw),
        raw=np.stack(raw),
        normalized=np.stack(normalized),
        variant=variant,
        zero_row_mask=np.stack(masks),
        non_backtracking=non_backtracking,
    )


def factorized_summaries(
    g: SparseGraph,
    seeds: LabelSet,
    lmax: int,
    variant: NormalizationVariant | int = NormalizationVariant.ROW_STOCHASTIC,
) -> GraphSummaries:
    """Non-backtracking statistics Eᵀ W_NB^(ℓ) E without any n×n product.

    Keeps two n×k iterates of the recurrence N^(ℓ) = W N^(ℓ−1) − (D − I) N^(ℓ−2).
    """
    _require_seeds(seeds, lmax)
    explicit = explicit_matrix(seeds, g.n)
    degrees = g.degrees[:, None]
    explicit_t = explicit.T

    previous = g.adjacency @ explicit
    raw = [explicit_t @ previous]
    if lmax >= 2:
        current = g.adjacency @ previous - degrees * explicit
        raw.append(explicit_t @ current)
        for _ in range(3, lmax + 1):
            previous, current = current, (
                g.adjacency @ current - (degrees - 1.0) * previous
            )
            raw.append(explicit_t @ current)
    return _assemble(raw, seeds.k, variant, non_backtracking=True)


def backtracking_summaries(
    g: SparseGraph,
    seeds: LabelSet,
    lmax: int,
    variant: NormalizationVariant | int = NormalizationVariant.ROW_STOCHASTIC,
) -> GraphSummaries:
    """Plain-walk statistics Eᵀ W^ℓ E, evaluated as Eᵀ(W(W(…E)))."""
    _require_seeds(seeds, lmax)
    explicit = explicit_matrix(seeds, g.n)
    current = explicit
    raw = []
    for _ in range(lmax):
        current = g.adjacency @ current
        raw.append(explicit.T @ current)
    return _assemble(raw, seeds.k, variant, non_backtracking=False)


def weight_vector(scaling: float, lmax: int) -> FloatArray:
    if scaling <= 0.0:
        raise InvalidParameterError(f"lambda must be positive, got {scaling}")
    return np.power(float(scaling), np.arange(lmax, dtype=np.float64))


def summaries_to_json(summaries: GraphSummaries) -> dict[str, object]:
    return {
        "k": summaries.k,
        "lmax": summaries.lmax,
        "variant": int(summaries.variant),
        "non_backtracking": summaries.non_backtracking,
        "raw": summaries.raw.tolist(),
        "normalized": summaries.normalized.tolist(),
        "zero_rows": [
            np.flatnonzero(mask).tolist() for mask in summaries.zero_row_mask
        ],
    }


class SummariesDocument(Document):
    k: int = Field(ge=1)
    lmax: int = Field(ge=1)
    variant: NormalizationVariant
    non_backtracking: bool = True
    raw: list[list[list[float]]]
    normalized: list[list[list[float]]]
    zero_rows: list[list[int]]

    @model_validator(mode="after")
    def _check_shapes(self) -> SummariesDocument:
        expected = (self.lmax, self.k, self.k)
        for name in ("raw", "normalized"):
            try:
                shape = np.array(getattr(self, name), dtype=np.float64).shape
            except ValueError:
                shape = ()
            if shape != expected:
                raise ValueError(f"{name} must have shape {expected}")
        if len(self.zero_rows) != self.lmax:
            raise ValueError("zero_rows must list one entry per path length")
        if any(not 0 <= c < self.k for classes in self.zero_rows for c in classes):
            raise ValueError(f"zero_rows entries must be classes in [0, {self.k})")
        return self


def summaries_from_json(data: dict[str, object]) -> GraphSummaries:
    try:
        document = SummariesDocument.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(validation_messages(e))
        raise SummarizationError(f"malformed summaries document: {problems}") from e
    mask = np.zeros((document.lmax, document.k), dtype=bool)
    for length, classes in enumerate(document.zero_rows):
        mask[length, classes] = True
    return GraphSummaries(
        k=document.k,
        lmax=document.lmax,
        raw=np.array(document.raw, dtype=np.float64),
        normalized=np.array(document.normalized, dtype=np.float64),
        variant=document.variant,
        zero_row_mask=mask,
        non_backtracking=document.non_backtracking,
    )


def write_summaries(summaries: GraphSummaries, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(summaries_to_json(summaries), handle)
        handle.write("\n")


def read_summaries(path: str | Path) -> GraphSummaries:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise SummarizationError(f"{path}: expected a JSON object")
    return summaries_from_json(data)
