from __future__ import annotations

import itertools
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Final

import numpy as np
from scipy.optimize import minimize

from compat_estimator.exceptions import (
    EstimationError,
    InvalidCompatibilityError,
    PropagationDivergedError,
)
from compat_estimator.services.compatibility import (
    clip_and_project,
    compatibility_to_json,
    free_param_count,
    minimize_quadratic,
    parameter_basis,
    project_to_compatibility,
    reconstruct_h,
    uniform_compatibility,
)
from compat_estimator.services.graph_core import explicit_matrix, spectral_radius
from compat_estimator.services.propagation import label_argmax, linbp_propagate
from compat_estimator.services.sampling import class_averaged_accuracy, stratified_split
from compat_estimator.services.summarization import weight_vector
from compat_estimator.types import (
    BoolArray,
    CompatibilityMatrix,
    EstimationResult,
    EstimatorConfig,
    FloatArray,
    FreeParams,
    GraphSummaries,
    LabelSet,
    Method,
    PropagationConfig,
    SparseGraph,
)

logger = logging.getLogger(__name__)

ARMIJO_START_STEP: Final[float] = 1.0
ARMIJO_SHRINK: Final[float] = 0.5
ARMIJO_SUFFICIENT_DECREASE: Final[float] = 1e-4
ARMIJO_MIN_STEP: Final[float] = 1e-16

PatternRows = Sequence[Sequence[str]]


# ============================================================================
# Myopic and linear estimators (convex, closed form)
# ============================================================================


def mce_estimate(
    statistics: FloatArray, row_mask: BoolArray | None = None
) -> EstimationResult:
    """Closest symmetric doubly stochastic matrix to the ℓ=1 statistics."""
    start = time.monotonic()
    statistics = np.asarray(statistics, dtype=np.float64)
    k = int(statistics.shape[0])
    keep = np.ones(k) if row_mask is None else (~np.asarray(row_mask)).astype(float)
    if not keep.any():
        logger.warning("Every statistics row is masked; returning uniform H")
        return EstimationResult(
            h_hat=uniform_compatibility(k),
            energy=0.0,
            restarts_used=1,
            wall_time=time.monotonic() - start,
            method=Method.MCE,
        )
    weights = np.diag(keep)
    target = weights @ statistics
    params, energy = minimize_quadratic(
        weights, target, float(np.sum(target * statistics))
    )
    return EstimationResult(
        h_hat=reconstruct_h(params),
        energy=energy,
        restarts_used=1,
        wall_time=time.monotonic() - start,
        method=Method.MCE,
    )


def mce_from_summaries(summaries: GraphSummaries) -> EstimationResult:
    return mce_estimate(summaries.normalized[0], summaries.zero_row_mask[0])


def lce_estimate(g: SparseGraph, seeds: LabelSet) -> EstimationResult:
    """Minimize ||E − W E H||² from the k×k Gram statistics of N = W E."""
    start = time.monotonic()
    explicit = explicit_matrix(seeds, g.n)
    neighbor_counts = g.adjacency @ explicit
    gram = neighbor_counts.T @ neighbor_counts
    cross = neighbor_counts.T @ explicit
    if not np.any(gram):
        logger.warning("No labeled node has a labeled neighbor; returning uniform H")
        return EstimationResult(
            h_hat=uniform_compatibility(seeds.k),
            energy=float(seeds.n_labeled),
            restarts_used=1,
            wall_time=time.monotonic() - start,
            method=Method.LCE,
        )
    params, energy = minimize_quadratic(gram, cross, float(seeds.n_labeled))
    return EstimationResult(
        h_hat=reconstruct_h(params),
        energy=energy,
        restarts_used=1,
        wall_time=time.monotonic() - start,
        method=Method.LCE,
    )


# ============================================================================
# Distance-smoothed estimator
# ============================================================================


def _powers(H: FloatArray, top: int) -> list[FloatArray]:
    powers = [np.eye(H.shape[0])]
    for _ in range(top):
        powers.append(powers[-1] @ H)
    return powers


def _residuals(
    powers: list[FloatArray], summaries: GraphSummaries, lmax: int
) -> list[FloatArray]:
    keep = ~summaries.zero_row_mask
    return [
        keep[length - 1][:, None]
        * (powers[length] - summaries.normalized[length - 1])
        for length in range(1, lmax + 1)
    ]


def _check_weights(summaries: GraphSummaries, weights: FloatArray) -> int:
    lmax = int(weights.shape[0])
    if lmax > summaries.lmax:
        raise EstimationError(
            f"{lmax} weights but summaries only reach length {summaries.lmax}"
        )
    return lmax


def dce_energy(h: FreeParams, summaries: GraphSummaries, w: FloatArray) -> float:
    lmax = _check_weights(summaries, w)
    powers = _powers(reconstruct_h(h).entries, lmax)
    residuals = _residuals(powers, summaries, lmax)
    return float(sum(weight * np.sum(r * r) for weight, r in zip(w, residuals)))


def dce_gradient(h: FreeParams, summaries: GraphSummaries, w: FloatArray) -> FloatArray:
    """Chain rule through the parameterization: g_p = ⟨S^p, G⟩."""
    lmax = _check_weights(summaries, w)
    powers = _powers(reconstruct_h(h).entries, lmax)
    residuals = _residuals(powers, summaries, lmax)
    k = summaries.k
    full = np.zeros((k, k))
    for length, (weight, residual) in enumerate(zip(w, residuals), start=1):
        for r in range(length):
            full += (
                2.0 * weight * powers[r].T @ residual @ powers[length - 1 - r].T
            )
    _, structure = parameter_basis(k)
    return np.einsum("pab,ab->p", structure, full)


def _descend(
    h0: FloatArray,
    summaries: GraphSummaries,
    weights: FloatArray,
    cfg: EstimatorConfig,
) -> tuple[FloatArray, float, list[float]]:
    k = summaries.k

    def energy_at(x: FloatArray) -> float:
        return dce_energy(FreeParams(k=k, h=x), summaries, weights)

    h = np.array(h0, dtype=np.float64)
    energy = energy_at(h)
    if not np.isfinite(energy):
        raise EstimationError(f"non-finite energy {energy} at the initial point")
    trace = [energy]

    for iteration in range(cfg.max_gd_iters):
        gradient = dce_gradient(FreeParams(k=k, h=h), summaries, weights)
        squared_norm = float(gradient @ gradient)
        if not np.isfinite(squared_norm):
            raise EstimationError(f"non-finite gradient at iteration {iteration}")
        if np.sqrt(squared_norm) < cfg.grad_tol:
            break
        step = ARMIJO_START_STEP
        while True:
            candidate = h - step * gradient
            candidate_energy = energy_at(candidate)
            if (
                np.isfinite(candidate_energy)
                and candidate_energy
                <= energy - ARMIJO_SUFFICIENT_DECREASE * step * squared_norm
            ):
                break
            step *= ARMIJO_SHRINK
            if step < ARMIJO_MIN_STEP:
                logger.debug("Line search stalled at iteration %d", iteration)
                return h, energy, trace
        h, energy = candidate, candidate_energy
        trace.append(energy)
    return h, energy, trace


def dce_estimate(
    summaries: GraphSummaries,
    cfg: EstimatorConfig | None = None,
    initial: FreeParams | None = None,
) -> EstimationResult:
    cfg = cfg or EstimatorConfig()
    start = time.monotonic()
    k = summaries.k
    if initial is None:
        initial = FreeParams(k=k, h=np.full(free_param_count(k), 1.0 / k))
    weights = weight_vector(cfg.scaling, summaries.lmax)
    h, energy, trace = _descend(initial.h, summaries, weights, cfg)
    return EstimationResult(
        h_hat=reconstruct_h(FreeParams(k=k, h=h)),
        energy=energy,
        restarts_used=1,
        wall_time=time.monotonic() - start,
        method=Method.DCE,
        energy_trace=tuple(trace),
        hyperparameters=_dce_hyperparameters(summaries, cfg),
    )


def _dce_hyperparameters(
    summaries: GraphSummaries, cfg: EstimatorConfig
) -> dict[str, object]:
    return {
        "lmax": summaries.lmax,
        "lambda": cfg.scaling,
        "variant": int(summaries.variant),
        "grad_tol": cfg.grad_tol,
        "max_gd_iters": cfg.max_gd_iters,
    }


def restart_points(k: int, restarts: int, delta: float, seed: int) -> list[FloatArray]:
    """Uniform start plus hyper-quadrant starts 1/k ± δ.

    All 2^k* quadrants are used when they fit in the budget, otherwise a
    seeded sample of distinct quadrants.
    """
    count = free_param_count(k)
    center = np.full(count, 1.0 / k)
    points = [center]
    budget = restarts - 1
    if budget <= 0 or count == 0:
        return points
    if count < 63 and 2**count <= budget:
        signs = [np.array(bits) for bits in itertools.product((-1.0, 1.0), repeat=count)]
    else:
        rng = np.random.default_rng(seed)
        seen: set[tuple[int, ...]] = set()
        signs = []
        while len(signs) < budget:
            bits = tuple(int(b) for b in rng.integers(0, 2, size=count))
            if bits not in seen:
                seen.add(bits)
                signs.append(2.0 * np.array(bits, dtype=np.float64) - 1.0)
    points.extend(center + delta * sign for sign in signs)
    return points


def dcer_estimate(
    summaries: GraphSummaries,
    cfg: EstimatorConfig | None = None,
    seed: int = 0,
) -> EstimationResult:
    cfg = cfg or EstimatorConfig()
    k = summaries.k
    delta = cfg.delta_for(k)
    if delta >= 1.0 / k**2:
        raise EstimationError(f"restart perturbation {delta} must be below 1/k^2")
    start = time.monotonic()
    points = restart_points(k, cfg.restarts, delta, seed)

    def run(point: FloatArray) -> EstimationResult:
        return dce_estimate(summaries, cfg, FreeParams(k=k, h=point))

    if cfg.max_workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            results = list(pool.map(run, points))
    else:
        results = [run(point) for point in points]

    best_index, best = min(enumerate(results), key=lambda item: (item[1].energy, item[0]))
    logger.debug(
        "DCEr: best of %d restarts is #%d with energy %.3e",
        len(results),
        best_index,
        best.energy,
    )
    hyperparameters = _dce_hyperparameters(summaries, cfg)
    hyperparameters.update({"restarts": cfg.restarts, "delta": delta, "seed": seed})
    return EstimationResult(
        h_hat=best.h_hat,
        energy=best.energy,
        restarts_used=len(results),
        wall_time=time.monotonic() - start,
        method=Method.DCER,
        energy_trace=best.energy_trace,
        hyperparameters=hyperparameters,
    )


# ============================================================================
# Holdout baseline
# ============================================================================


def holdout_estimate(
    g: SparseGraph,
    seeds: LabelSet,
    cfg: EstimatorConfig | None = None,
    prop_cfg: PropagationConfig | None = None,
    seed: int = 0,
) -> EstimationResult:
    """Maximize summed holdout accuracy of LinBP with a simplex search."""
    cfg = cfg or EstimatorConfig()
    prop_cfg = prop_cfg or PropagationConfig()
    k = seeds.k
    if seeds.n_labeled < 2 * k:
        logger.warning(
            "Holdout with %d labeled nodes cannot place every class in both halves",
            seeds.n_labeled,
        )
    start = time.monotonic()
    rng = np.random.default_rng(seed)
    splits = [stratified_split(seeds, rng) for _ in range(cfg.holdout_splits)]
    graph_radius = spectral_radius(g)
    evaluations = 0

    def compound_accuracy(x: FloatArray) -> float:
        nonlocal evaluations
        evaluations += 1
        H = reconstruct_h(FreeParams(k=k, h=np.asarray(x, dtype=np.float64)))
        total = 0.0
        for seed_part, holdout_part in splits:
            if holdout_part.n_labeled == 0:
                continue
            try:
                beliefs = linbp_propagate(
                    g, seed_part, H, prop_cfg, graph_radius=graph_radius
                )
            except PropagationDivergedError:
                continue
            predicted = label_argmax(beliefs)[holdout_part.nodes]
            total += class_averaged_accuracy(predicted, holdout_part.classes, k)
        return total

    x0 = np.full(free_param_count(k), 1.0 / k)
    delta = cfg.delta_for(k)
    simplex = np.vstack([x0, x0 + delta * np.eye(x0.size)])
    result = minimize(
        lambda x: -compound_accuracy(x),
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "maxfev": cfg.holdout_max_evals,
            "adaptive": False,
        },
    )
    compound = -float(result.fun)
    h_hat = reconstruct_h(FreeParams(k=k, h=np.asarray(result.x, dtype=np.float64)))
    logger.debug("Holdout used %d evaluations, compound accuracy %.4f", evaluations, compound)
    return EstimationResult(
        h_hat=h_hat,
        energy=max(cfg.holdout_splits - compound, 0.0),
        restarts_used=1,
        wall_time=time.monotonic() - start,
        method=Method.HOLDOUT,
        hyperparameters={
            "splits": cfg.holdout_splits,
            "max_evals": cfg.holdout_max_evals,
            "evaluations": evaluations,
            "compound_accuracy": compound,
            "seed": seed,
        },
    )


# ============================================================================
# Two-value heuristic
# ============================================================================


def parse_pattern(text: str) -> list[list[str]]:
    """Parse ``"L,H,H;H,L,H;H,H,L"`` into rows of symbols."""
    return [
        [symbol.strip().upper() for symbol in row.split(",")]
        for row in text.split(";")
        if row.strip()
    ]


def heuristic_compatibility(positions: PatternRows, gap: float) -> CompatibilityMatrix:
    pattern = np.array([list(row) for row in positions], dtype=object)
    if pattern.ndim != 2 or pattern.shape[0] != pattern.shape[1]:
        raise InvalidCompatibilityError("pattern must be a square k x k grid")
    if not set(pattern.ravel().tolist()) <= {"H", "L"}:
        raise InvalidCompatibilityError("pattern entries must be 'H' or 'L'")
    if np.any(pattern != pattern.T):
        raise InvalidCompatibilityError("pattern must be symmetric")
    if gap < 0:
        raise InvalidCompatibilityError(f"gap must be non-negative, got {gap}")

    k = int(pattern.shape[0])
    high = pattern == "H"
    target = np.where(high, 1.0 / k + gap / 2.0, 1.0 / k - gap / 2.0)
    # the projection shifts entry (i, j) by a_i + a_j; for a symmetric pattern
    # |a_h - a_l| < gap, so every H entry stays above every L entry of its row
    return project_to_compatibility(target)


def clipped_result(result: EstimationResult, cfg: EstimatorConfig) -> EstimationResult:
    """Apply the optional final clipping to [0, 1] when ``cfg.clip`` is set."""
    if not cfg.clip:
        return result
    H = clip_and_project(result.h_hat)
    if H is not result.h_hat:
        logger.info("%s: clipped the estimate to [0, 1] and re-projected", result.method)
    return replace(
        result, h_hat=H, hyperparameters={**result.hyperparameters, "clip": True}
    )


def estimation_result_to_json(result: EstimationResult) -> dict[str, object]:
    return {
        "method": str(result.method),
        **compatibility_to_json(result.h_hat),
        "energy": result.energy,
        "restarts_used": result.restarts_used,
        "wall_time": result.wall_time,
        "energy_trace_length": len(result.energy_trace),
        "hyperparameters": result.hyperparameters,
    }
