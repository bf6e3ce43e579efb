from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from compat_estimator.exceptions import (
    InvalidCompatibilityError,
    InvalidParameterError,
    PropagationDivergedError,
)
from compat_estimator.services.compatibility import centered_radius
from compat_estimator.services.graph_core import explicit_matrix, spectral_radius
from compat_estimator.types import (
    BeliefMatrix,
    CompatibilityMatrix,
    FloatArray,
    IntArray,
    LabelSet,
    PropagationConfig,
    SparseGraph,
)

logger = logging.getLogger(__name__)


def compute_epsilon(
    g: SparseGraph,
    H: CompatibilityMatrix,
    s: float,
    *,
    graph_radius: float | None = None,
) -> float:
    """Scale for H so that ρ(ε·Ĥ)·ρ(W) = s."""
    radius_w = graph_radius if graph_radius is not None else spectral_radius(g)
    if radius_w <= 0.0:
        logger.warning("Graph has no edges; using epsilon = s")
        return s
    radius_h = centered_radius(H)
    if radius_h <= 1e-12:
        logger.warning(
            "Centered compatibility matrix has zero spectral radius; "
            "using epsilon = s / rho(W)"
        )
        return s / radius_w
    return s / (radius_w * radius_h)


def effective_convergence(g: SparseGraph, H: CompatibilityMatrix, epsilon: float) -> float:
    """Convergence parameter ε·ρ(W)·ρ(H) of the uncentered iteration."""
    radius_h = float(np.max(np.abs(np.linalg.eigvalsh(H.entries))))
    return epsilon * spectral_radius(g) * radius_h


def _row_centered(values: FloatArray) -> FloatArray:
    return values - values.mean(axis=1, keepdims=True)


def iterate_linbp(
    adjacency: sp.csr_matrix,
    explicit: FloatArray,
    scaled_h: FloatArray,
    iterations: int,
    converge_tol: float | None = None,
) -> FloatArray:
    """Run B ← E + W B H′ from B = E, with H′ already scaled.

    H′ must be symmetric with constant row sums σ, as every scaled
    compatibility matrix is. B then splits into row-centered beliefs C and a
    per-row offset r that evolve apart: C ← Ê + W C H′ and r ← ē + σ W r.
    Only C decides labels and only C is bounded by ε, so the stopping rule
    and the divergence check look at C. B = C + r 1ᵀ is assembled at the end.
    """
    row_sum = float(scaled_h.sum(axis=1).mean())
    explicit_centered = _row_centered(explicit)
    explicit_offset = explicit.mean(axis=1)
    centered = explicit_centered.copy()
    offset = explicit_offset.copy()
    iteration = 0
    for iteration in range(1, iterations + 1):
        updated = explicit_centered + adjacency @ _row_centered(centered @ scaled_h)
        if not np.all(np.isfinite(updated)):
            raise PropagationDivergedError(
                f"beliefs became non-finite at iteration {iteration}"
            )
        offset = explicit_offset + row_sum * (adjacency @ offset)
        delta = float(np.linalg.norm(updated - centered))
        centered = updated
        if converge_tol is not None and delta < converge_tol:
            logger.debug("LinBP converged after %d iterations", iteration)
            break
    beliefs = centered + offset[:, np.newaxis]
    if not np.all(np.isfinite(beliefs)):
        raise PropagationDivergedError(
            f"row offsets became non-finite after {iteration} iterations"
        )
    return beliefs


def linbp_propagate(
    g: SparseGraph,
    seeds: LabelSet,
    H: CompatibilityMatrix,
    cfg: PropagationConfig,
    *,
    graph_radius: float | None = None,
) -> BeliefMatrix:
    if seeds.k != H.k:
        raise InvalidCompatibilityError(
            f"seed labels have k={seeds.k} but H is {H.k}x{H.k}"
        )
    epsilon = (
        cfg.epsilon_override
        if cfg.epsilon_override is not None
        else compute_epsilon(g, H, cfg.s, graph_radius=graph_radius)
    )
    explicit = explicit_matrix(seeds, g.n)
    beliefs = iterate_linbp(
        g.adjacency,
        explicit,
        epsilon * H.entries,
        cfg.iterations,
        cfg.converge_tol,
    )
    isolated = int(np.count_nonzero((g.degrees == 0) & (explicit.sum(axis=1) == 0)))
    if isolated:
        logger.info("%d unlabeled isolated nodes keep an all-zero belief row", isolated)
    return BeliefMatrix(values=beliefs)


def label_argmax(B: BeliefMatrix) -> IntArray:
    # np.argmax returns the first maximal index, which is the tie-break we want
    return np.argmax(B.values, axis=1).astype(np.int64)


def linbp_energy(
    B: BeliefMatrix,
    seeds: LabelSet,
    g: SparseGraph,
    H: CompatibilityMatrix,
    epsilon: float,
    *,
    row_centered: bool = False,
) -> float:
    """Squared Frobenius norm of B − E − W B (εH).

    With ``row_centered`` each residual row loses its mean first, which
    leaves the part of the residual that decides labels.
    """
    explicit = explicit_matrix(seeds, g.n)
    residual = B.values - explicit - g.adjacency @ (B.values @ (epsilon * H.entries))
    if row_centered:
        residual = _row_centered(residual)
    return float(np.sum(residual * residual))


def column_normalized(g: SparseGraph) -> sp.csr_matrix:
    inverse = np.zeros_like(g.degrees)
    nonzero = g.degrees > 0
    inverse[nonzero] = 1.0 / g.degrees[nonzero]
    return sp.csr_matrix(g.adjacency @ sp.diags(inverse))


def rwr_propagate(
    g: SparseGraph,
    seeds: LabelSet,
    alpha: float,
    iterations: int,
) -> BeliefMatrix:
    """k parallel random walks with restarts, one per class."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    teleport = explicit_matrix(seeds, g.n)
    counts = teleport.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        logger.warning("Classes without seeds in random walk: %s", empty.tolist())
    teleport[:, counts > 0] /= counts[counts > 0]

    transition = column_normalized(g)
    beliefs = teleport.copy()
    for _ in range(iterations):
        beliefs = (1.0 - alpha) * teleport + alpha * (transition @ beliefs)
    return BeliefMatrix(values=beliefs)


def write_beliefs_csv(B: BeliefMatrix, path: str | Path) -> None:
    k = int(B.values.shape[1])
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["node", *(f"score_{c}" for c in range(k))])
        for node, row in enumerate(B.values):
            writer.writerow([node, *(repr(float(v)) for v in row)])


def write_label_assignment(labels: IntArray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for node, label in enumerate(labels):
            handle.write(f"{node}\t{int(label)}\n")
