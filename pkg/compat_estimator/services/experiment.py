from __future__ import annotations

import csv
import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Final, TypeVar

import numpy as np

from compat_estimator.exceptions import CompatEstimatorError, ExperimentConfigError
from compat_estimator.services.compatibility import matrix_power, project_to_compatibility
from compat_estimator.services.estimation import (
    clipped_result,
    dce_estimate,
    dcer_estimate,
    heuristic_compatibility,
    holdout_estimate,
    lce_estimate,
    mce_from_summaries,
)
from compat_estimator.services.experiment_config import SOURCE_ERROR
from compat_estimator.services.generator import generate_graph
from compat_estimator.services.graph_core import load_edge_list, load_labels, spectral_radius
from compat_estimator.services.numeric_utils import child_rng
from compat_estimator.services.propagation import (
    label_argmax,
    linbp_propagate,
    rwr_propagate,
)
from compat_estimator.services.sampling import macro_accuracy, sample_seeds
from compat_estimator.services.summarization import (
    backtracking_summaries,
    factorized_summaries,
)
from compat_estimator.types import (
    CompatibilityMatrix,
    ExperimentConfig,
    LabelSet,
    Method,
    NormalizationVariant,
    ResultRecord,
    SparseGraph,
    StatisticsRecord,
    SweepKind,
)

logger = logging.getLogger(__name__)

ACCURACY_HEADER: Final[tuple[str, ...]] = (
    "method",
    "f",
    "trial",
    "macro_accuracy",
    "l2_to_gs",
    "estimate_seconds",
    "propagate_seconds",
    "error",
)
STATISTICS_HEADER: Final[tuple[str, ...]] = (
    "path_kind",
    "length",
    "f",
    "trial",
    "max_entry",
    "mean_diagonal",
    "target_max_entry",
)

# named sub-streams of the experiment seed
_GRAPH_STREAM: Final[int] = 0
_SEED_STREAM: Final[int] = 1
_METHOD_STREAM: Final[int] = 2

_SEED_SPACE: Final[int] = 2**31 - 1

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class TrialData:
    graph: SparseGraph
    truth: LabelSet
    gold: CompatibilityMatrix
    graph_radius: float


# ============================================================================
# Gold standard and trial data
# ============================================================================


def gold_standard(g: SparseGraph, truth: LabelSet) -> CompatibilityMatrix:
    """Compatibilities measured on the fully labeled graph.

    Returns the Frobenius projection of the row-normalized neighbor-label
    statistic M onto the symmetric row-stochastic matrices, not M itself;
    measured M is generally not symmetric. Only ingested data goes through
    here. Generated trials use the planted H directly.
    """
    stats = factorized_summaries(g, truth, 1, NormalizationVariant.ROW_STOCHASTIC)
    return project_to_compatibility(stats.normalized[0], row_mask=stats.zero_row_mask[0])


def _sub_seed(seed: int, *keys: int) -> int:
    return int(child_rng(seed, *keys).integers(_SEED_SPACE))


def _load_trials(cfg: ExperimentConfig) -> list[TrialData]:
    if cfg.generator is not None:
        trials: list[TrialData] = []
        for trial in range(cfg.trials):
            spec = replace(cfg.generator, seed=_sub_seed(cfg.seed, _GRAPH_STREAM, trial))
            generated = generate_graph(spec)
            logger.info(
                "Trial %d: generated n=%d m=%d in %d attempt(s)",
                trial,
                generated.graph.n,
                generated.graph.m,
                generated.attempts,
            )
            trials.append(
                TrialData(
                    graph=generated.graph,
                    truth=generated.labels,
                    gold=spec.h,
                    graph_radius=spectral_radius(generated.graph),
                )
            )
        return trials

    assert cfg.edges_path is not None and cfg.labels_path is not None and cfg.k is not None
    graph = load_edge_list(cfg.edges_path)
    truth = load_labels(cfg.labels_path, cfg.k)
    if truth.nodes.size and int(truth.nodes.max()) >= graph.n:
        raise CompatEstimatorError(
            f"labels reference node {int(truth.nodes.max())} outside the graph"
        )
    data = TrialData(
        graph=graph,
        truth=truth,
        gold=gold_standard(graph, truth),
        graph_radius=spectral_radius(graph),
    )
    logger.info("Loaded n=%d m=%d with %d labeled nodes", graph.n, graph.m, truth.n_labeled)
    return [data] * cfg.trials


def _ordered_map(func: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _sample_all_seeds(
    cfg: ExperimentConfig, trials: list[TrialData]
) -> dict[tuple[int, int], LabelSet | CompatEstimatorError]:
    """Seed sample per (f, trial) cell, shared by every method.

    A failed draw is kept in place of the sample so its cells become error rows.
    """
    seeds: dict[tuple[int, int], LabelSet | CompatEstimatorError] = {}
    for f_index, f in enumerate(cfg.f_grid):
        for trial, data in enumerate(trials):
            rng = child_rng(cfg.seed, _SEED_STREAM, f_index, trial)
            try:
                seeds[(f_index, trial)] = sample_seeds(data.truth, f, rng)
            except CompatEstimatorError as e:
                seeds[(f_index, trial)] = e
    return seeds


# ============================================================================
# Accuracy sweep
# ============================================================================


def pattern_from_gold(gold: CompatibilityMatrix) -> list[list[str]]:
    return [
        ["H" if value > 1.0 / gold.k else "L" for value in row]
        for row in gold.entries
    ]


def estimate_compatibility(
    method: Method,
    cfg: ExperimentConfig,
    data: TrialData,
    seeds: LabelSet,
    method_seed: int,
) -> CompatibilityMatrix:
    """Estimation step of one method on one seed sample."""
    estimator = cfg.estimator
    if method is Method.GS:
        return data.gold
    if method is Method.HEURISTIC:
        return heuristic_compatibility(pattern_from_gold(data.gold), cfg.heuristic_gap)
    if method is Method.MCE:
        summaries = factorized_summaries(data.graph, seeds, 1, estimator.variant)
        result = mce_from_summaries(summaries)
    elif method is Method.LCE:
        result = lce_estimate(data.graph, seeds)
    elif method in (Method.DCE, Method.DCER):
        summaries = factorized_summaries(
            data.graph, seeds, estimator.lmax, estimator.variant
        )
        if method is Method.DCE:
            result = dce_estimate(summaries, estimator)
        else:
            result = dcer_estimate(summaries, estimator, seed=method_seed)
    elif method is Method.HOLDOUT:
        result = holdout_estimate(
            data.graph, seeds, estimator, cfg.propagation, seed=method_seed
        )
    else:
        raise CompatEstimatorError(f"{method} does not estimate a compatibility matrix")
    return clipped_result(result, estimator).h_hat


def _error_record(method: Method, f: float, trial: int, error: Exception) -> ResultRecord:
    logger.warning("Cell %s f=%s trial=%d failed: %s", method, f, trial, error)
    return ResultRecord(
        method=method,
        f=f,
        trial=trial,
        macro_accuracy=None,
        l2_to_gs=None,
        estimate_seconds=0.0,
        propagate_seconds=0.0,
        error=f"{type(error).__name__}: {error}",
    )


def _accuracy_cell(
    cfg: ExperimentConfig,
    method_index: int,
    f_index: int,
    trial: int,
    data: TrialData,
    seeds: LabelSet | CompatEstimatorError,
) -> ResultRecord:
    method = cfg.methods[method_index]
    f = cfg.f_grid[f_index]
    if isinstance(seeds, CompatEstimatorError):
        return _error_record(method, f, trial, seeds)
    method_seed = _sub_seed(cfg.seed, _METHOD_STREAM, f_index, trial, method_index)
    estimate_seconds = propagate_seconds = 0.0
    try:
        l2_to_gs: float | None = None
        start = time.monotonic()
        if method is Method.RWR:
            beliefs = rwr_propagate(
                data.graph, seeds, cfg.rwr_alpha, cfg.propagation.iterations
            )
            propagate_seconds = time.monotonic() - start
        else:
            H = estimate_compatibility(method, cfg, data, seeds, method_seed)
            estimate_seconds = time.monotonic() - start
            l2_to_gs = float(np.linalg.norm(H.entries - data.gold.entries))
            start = time.monotonic()
            beliefs = linbp_propagate(
                data.graph, seeds, H, cfg.propagation, graph_radius=data.graph_radius
            )
            propagate_seconds = time.monotonic() - start
        accuracy = macro_accuracy(label_argmax(beliefs), data.truth, seeds)
    except (CompatEstimatorError, np.linalg.LinAlgError) as e:
        return _error_record(method, f, trial, e)
    if not cfg.record_timing:
        estimate_seconds = propagate_seconds = 0.0
    return ResultRecord(
        method=method,
        f=f,
        trial=trial,
        macro_accuracy=accuracy,
        l2_to_gs=l2_to_gs,
        estimate_seconds=estimate_seconds,
        propagate_seconds=propagate_seconds,
    )


def run_accuracy_sweep(cfg: ExperimentConfig) -> list[ResultRecord]:
    trials = _load_trials(cfg)
    seeds = _sample_all_seeds(cfg, trials)
    cells = [
        (method_index, f_index, trial)
        for method_index in range(len(cfg.methods))
        for f_index in range(len(cfg.f_grid))
        for trial in range(cfg.trials)
    ]
    logger.info("Running %d cells with %d job(s)", len(cells), cfg.jobs)

    def run(cell: tuple[int, int, int]) -> ResultRecord:
        method_index, f_index, trial = cell
        return _accuracy_cell(
            cfg, method_index, f_index, trial, trials[trial], seeds[(f_index, trial)]
        )

    return _ordered_map(run, cells, cfg.jobs)


# ============================================================================
# Path statistics sweep
# ============================================================================


def _statistics_cell(
    cfg: ExperimentConfig,
    f_index: int,
    trial: int,
    data: TrialData,
    seeds: LabelSet,
) -> list[StatisticsRecord]:
    f = cfg.f_grid[f_index]
    lmax = cfg.estimator.lmax
    variant = cfg.estimator.variant
    records: list[StatisticsRecord] = []
    for path_kind, summarize in (
        ("nb", factorized_summaries),
        ("plain", backtracking_summaries),
    ):
        summaries = summarize(data.graph, seeds, lmax, variant)
        for length in range(1, lmax + 1):
            statistic = summaries.normalized[length - 1]
            records.append(
                StatisticsRecord(
                    path_kind=path_kind,
                    length=length,
                    f=f,
                    trial=trial,
                    max_entry=float(statistic.max()),
                    mean_diagonal=float(np.mean(np.diag(statistic))),
                    target_max_entry=float(matrix_power(data.gold, length).max()),
                )
            )
    return records


def run_statistics_sweep(cfg: ExperimentConfig) -> list[StatisticsRecord]:
    trials = _load_trials(cfg)
    seeds = _sample_all_seeds(cfg, trials)
    cells = [
        (f_index, trial)
        for f_index in range(len(cfg.f_grid))
        for trial in range(cfg.trials)
    ]

    def run(cell: tuple[int, int]) -> list[StatisticsRecord]:
        f_index, trial = cell
        sample = seeds[(f_index, trial)]
        if isinstance(sample, CompatEstimatorError):
            raise sample
        return _statistics_cell(cfg, f_index, trial, trials[trial], sample)

    return [record for batch in _ordered_map(run, cells, cfg.jobs) for record in batch]


def run_experiment(
    cfg: ExperimentConfig, out_path: str | Path | None = None
) -> list[ResultRecord] | list[StatisticsRecord]:
    """Run the configured sweep and optionally write its CSV."""
    problems = validate_experiment_config(cfg)
    if problems:
        raise ExperimentConfigError(problems)
    if cfg.kind is SweepKind.STATISTICS:
        statistics = run_statistics_sweep(cfg)
        if out_path is not None:
            write_statistics_csv(statistics, out_path)
        return statistics
    results = run_accuracy_sweep(cfg)
    if out_path is not None:
        write_results_csv(results, out_path)
    failures = sum(1 for record in results if record.error)
    if failures:
        logger.warning("%d of %d cells failed", failures, len(results))
    return results


# ============================================================================
# CSV output
# ============================================================================


def _number(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_results_csv(records: Sequence[ResultRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ACCURACY_HEADER)
        for record in records:
            writer.writerow(
                [
                    str(record.method),
                    repr(record.f),
                    record.trial,
                    _number(record.macro_accuracy),
                    _number(record.l2_to_gs),
                    _number(record.estimate_seconds),
                    _number(record.propagate_seconds),
                    record.error,
                ]
            )


def write_statistics_csv(records: Sequence[StatisticsRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(STATISTICS_HEADER)
        for record in records:
            writer.writerow(
                [
                    record.path_kind,
                    record.length,
                    repr(record.f),
                    record.trial,
                    _number(record.max_entry),
                    _number(record.mean_diagonal),
                    _number(record.target_max_entry),
                ]
            )


# ============================================================================
# Configuration checks
# ============================================================================


def validate_experiment_config(cfg: ExperimentConfig) -> list[str]:
    errors: list[str] = []
    if cfg.kind is SweepKind.ACCURACY and not cfg.methods:
        errors.append("methods: at least one method is required")
    if not cfg.f_grid:
        errors.append("f_grid: at least one label fraction is required")
    errors.extend(
        f"f_grid: {f} is outside (0, 1]" for f in cfg.f_grid if not 0.0 < f <= 1.0
    )
    if cfg.trials < 1:
        errors.append(f"trials: must be >= 1, got {cfg.trials}")
    if cfg.jobs < 1:
        errors.append(f"jobs: must be >= 1, got {cfg.jobs}")
    has_files = cfg.edges_path is not None or cfg.labels_path is not None
    if (cfg.generator is None) == (not has_files):
        errors.append(SOURCE_ERROR)
    if has_files and (cfg.edges_path is None or cfg.labels_path is None or cfg.k is None):
        errors.append("data: 'edges', 'labels' and 'k' are all required")
    if not 0.0 < cfg.rwr_alpha < 1.0:
        errors.append(f"rwr_alpha: must lie in (0, 1), got {cfg.rwr_alpha}")
    if cfg.heuristic_gap < 0.0:
        errors.append(f"heuristic_gap: must be non-negative, got {cfg.heuristic_gap}")
    return errors

