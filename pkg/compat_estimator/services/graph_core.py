from __future__ import annotations

import logging
from pathlib import Path
from typing import Final

import numpy as np
import scipy.sparse as sp

from compat_estimator.exceptions import (
    GraphFormatError,
    LabelFormatError,
    SpectralRadiusNotConvergedError,
)
from compat_estimator.types import FloatArray, IntArray, LabelSet, SparseGraph

logger = logging.getLogger(__name__)

MAX_NODE_ID: Final[int] = 2**31 - 1
DEFAULT_RADIUS_TOL: Final[float] = 1e-6
DEFAULT_RADIUS_MAX_ITER: Final[int] = 1000


def build_graph(
    sources: IntArray,
    targets: IntArray,
    weights: FloatArray | None = None,
    n: int | None = None,
) -> SparseGraph:
    """Build a symmetric graph from one entry per undirected edge.

    Repeated pairs (in either orientation) are merged by summing weights.
    """
    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if weights is None:
        weights = np.ones(sources.shape[0], dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(sources == targets):
        raise GraphFormatError("self-loops are not allowed")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise GraphFormatError("edge weights must be positive and finite")
    if n is None:
        n = int(max(sources.max(initial=-1), targets.max(initial=-1)) + 1)
    rows = np.concatenate([sources, targets])
    cols = np.concatenate([targets, sources])
    data = np.concatenate([weights, weights])
    adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n), dtype=np.float64)
    adjacency.sum_duplicates()
    adjacency.sort_indices()
    return graph_from_adjacency(adjacency)


def graph_from_adjacency(adjacency: sp.csr_matrix) -> SparseGraph:
    adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
    if adjacency.shape[0] != adjacency.shape[1]:
        raise GraphFormatError("adjacency must be square")
    if adjacency.diagonal().any():
        raise GraphFormatError("self-loops are not allowed")
    if (adjacency != adjacency.T).nnz != 0:
        raise GraphFormatError("adjacency must be symmetric")
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    return SparseGraph(adjacency=adjacency, degrees=degrees)


def load_edge_list(path: str | Path, n: int | None = None) -> SparseGraph:
    sources: list[int] = []
    targets: list[int] = []
    weights: list[float] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphFormatError(
                    f"expected 'u<TAB>v[<TAB>w]', got {line!r}", line_number
                )
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as e:
                raise GraphFormatError(f"cannot parse {line!r}", line_number) from e
            _check_node_id(u, n, line_number)
            _check_node_id(v, n, line_number)
            if u == v:
                raise GraphFormatError(f"self-loop on node {u}", line_number)
            if not w > 0 or not np.isfinite(w):
                raise GraphFormatError(f"weight must be positive, got {w}", line_number)
            sources.append(u)
            targets.append(v)
            weights.append(w)

    logger.debug("Loaded %d edge lines from %s", len(sources), path)
    return build_graph(
        np.array(sources, dtype=np.int64),
        np.array(targets, dtype=np.int64),
        np.array(weights, dtype=np.float64),
        n=n,
    )


def _check_node_id(node: int, n: int | None, line_number: int) -> None:
    if node < 0:
        raise GraphFormatError(f"negative node id {node}", line_number)
    if node > MAX_NODE_ID or (n is not None and node >= n):
        raise GraphFormatError(f"node id {node} out of range", line_number)


def write_edge_list(g: SparseGraph, path: str | Path) -> None:
    upper = sp.triu(g.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w", encoding="utf-8") as handle:
        for idx in order:
            u, v, w = int(upper.row[idx]), int(upper.col[idx]), float(upper.data[idx])
            if w == 1.0:
                handle.write(f"{u}\t{v}\n")
            else:
                handle.write(f"{u}\t{v}\t{w!r}\n")


def make_label_set(nodes: IntArray, classes: IntArray, k: int) -> LabelSet:
    nodes = np.asarray(nodes, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    if np.any((classes < 0) | (classes >= k)):
        raise LabelFormatError(f"class labels must lie in [0, {k})")
    order = np.argsort(nodes, kind="stable")
    nodes, classes = nodes[order], classes[order]
    if np.any(np.diff(nodes) == 0):
        raise LabelFormatError("duplicate node in label set")
    return LabelSet(k=k, nodes=nodes, classes=classes)


def load_labels(path: str | Path, k: int) -> LabelSet:
    assignments: dict[int, int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise LabelFormatError(
                    f"expected 'node<TAB>class', got {line!r}", line_number
                )
            try:
                node, label = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise LabelFormatError(f"cannot parse {line!r}", line_number) from e
            if node < 0:
                raise LabelFormatError(f"negative node id {node}", line_number)
            if not 0 <= label < k:
                raise LabelFormatError(
                    f"class {label} out of range for k={k}", line_number
                )
            previous = assignments.get(node)
            if previous is not None and previous != label:
                raise LabelFormatError(
                    f"conflicting labels {previous} and {label} for node {node}",
                    line_number,
                )
            assignments[node] = label

    nodes = np.fromiter(assignments.keys(), dtype=np.int64, count=len(assignments))
    classes = np.fromiter(
        assignments.values(), dtype=np.int64, count=len(assignments)
    )
    return make_label_set(nodes, classes, k)


def write_labels(labels: LabelSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for node, label in zip(labels.nodes, labels.classes):
            handle.write(f"{int(node)}\t{int(label)}\n")


def explicit_matrix(seeds: LabelSet, n: int) -> FloatArray:
    """Dense n×k one-hot seed matrix; unlabeled rows are zero."""
    if seeds.n_labeled and int(seeds.nodes.max()) >= n:
        raise LabelFormatError(f"labeled node id exceeds graph size {n}")
    explicit = np.zeros((n, seeds.k), dtype=np.float64)
    explicit[seeds.nodes, seeds.classes] = 1.0
    return explicit


def spectral_radius(
    g: SparseGraph,
    tol: float = DEFAULT_RADIUS_TOL,
    max_iter: int = DEFAULT_RADIUS_MAX_ITER,
    *,
    strict: bool = False,
) -> float:
    """Largest eigenvalue of the nonnegative symmetric adjacency.

    Power iteration on W + σI from the all-ones vector; the shift keeps the
    Perron eigenvalue strictly dominant on bipartite graphs.
    """
    if g.n == 0:
        raise GraphFormatError("spectral radius of an empty graph")
    if g.adjacency.nnz == 0:
        return 0.0

    shift = float(g.degrees.mean())
    x = np.ones(g.n, dtype=np.float64) / np.sqrt(g.n)
    estimate = 0.0
    previous_change: float | None = None
    for iteration in range(1, max_iter + 1):
        y = g.adjacency @ x + shift * x
        rayleigh = float(x @ y)
        x = y / np.linalg.norm(y)
        new_estimate = rayleigh - shift
        change = abs(new_estimate - estimate)
        estimate = new_estimate
        if iteration > 1 and previous_change is not None and previous_change > 0:
            ratio = min(change / previous_change, 0.999)
            if change / (1.0 - ratio) <= tol * abs(estimate):
                return estimate
        elif change == 0.0 and iteration > 1:
            return estimate
        previous_change = change

    if strict:
        raise SpectralRadiusNotConvergedError(estimate, max_iter)
    logger.warning(
        "Spectral radius did not converge in %d iterations, using %.6g",
        max_iter,
        estimate,
    )
    return estimate
