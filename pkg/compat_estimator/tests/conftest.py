from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from compat_estimator.services.graph_core import build_graph, make_label_set
from compat_estimator.types import (
    CompatibilityMatrix,
    GraphSummaries,
    LabelSet,
    NormalizationVariant,
    SparseGraph,
)

SummariesFactory = Callable[..., GraphSummaries]


def make_two_cliques(size: int) -> tuple[SparseGraph, LabelSet]:
    """Two disjoint cliques of ``size`` nodes; clique c is class c."""
    sources, targets = [], []
    for offset in (0, size):
        for u in range(size):
            for v in range(u + 1, size):
                sources.append(offset + u)
                targets.append(offset + v)
    graph = build_graph(np.array(sources), np.array(targets))
    labels = make_label_set(
        np.arange(2 * size), np.repeat(np.arange(2), size), k=2
    )
    return graph, labels


def summaries_from_matrix(
    H: CompatibilityMatrix,
    lmax: int,
    variant: NormalizationVariant = NormalizationVariant.ROW_STOCHASTIC,
) -> GraphSummaries:
    """Summaries whose normalized statistics are exactly H^ℓ."""
    powers = np.stack([np.linalg.matrix_power(H.entries, ell) for ell in range(1, lmax + 1)])
    return GraphSummaries(
        k=H.k,
        lmax=lmax,
        raw=powers.copy(),
        normalized=powers,
        variant=variant,
        zero_row_mask=np.zeros((lmax, H.k), dtype=bool),
    )


@pytest.fixture
def triangle() -> SparseGraph:
    return build_graph(np.array([0, 1, 2]), np.array([1, 2, 0]))


@pytest.fixture
def path4() -> SparseGraph:
    return build_graph(np.array([0, 1, 2]), np.array([1, 2, 3]))


@pytest.fixture
def star() -> SparseGraph:
    return build_graph(np.zeros(4, dtype=np.int64), np.arange(1, 5))


@pytest.fixture
def two_cliques() -> tuple[SparseGraph, LabelSet]:
    return make_two_cliques(4)


@pytest.fixture
def exact_summaries() -> SummariesFactory:
    return summaries_from_matrix
