from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Final

import numpy as np

from compat_estimator.exceptions import GeneratorInfeasibleError, InvalidCompatibilityError
from compat_estimator.services.compatibility import compatibility_to_json, validate_compatibility
from compat_estimator.services.graph_core import build_graph, make_label_set
from compat_estimator.services.numeric_utils import child_rng, largest_remainder_round
from compat_estimator.types import (
    BoolArray,
    DegreeFamily,
    FloatArray,
    GeneratedGraph,
    GeneratorSpec,
    IntArray,
)

logger = logging.getLogger(__name__)

MAX_ATTEMPTS: Final[int] = 5
SWAP_BUDGET_PER_EDGE: Final[int] = 10
_ROUNDING_DECIMALS: Final[int] = 9


def validate_spec(spec: GeneratorSpec) -> None:
    alpha = np.asarray(spec.alpha, dtype=np.float64)
    if spec.n < 1 or spec.m < 1:
        raise GeneratorInfeasibleError("n and m must be positive")
    if alpha.shape != (spec.h.k,):
        raise GeneratorInfeasibleError(
            f"alpha has {alpha.size} entries but H is {spec.h.k}x{spec.h.k}"
        )
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-9:
        raise GeneratorInfeasibleError("alpha must be non-negative and sum to 1")
    if 2 * spec.m < spec.n:
        raise GeneratorInfeasibleError("average degree 2m/n must be at least 1")
    try:
        validate_compatibility(spec.h.entries)
    except InvalidCompatibilityError as e:
        raise GeneratorInfeasibleError(f"planted matrix is invalid: {e}") from e
    if np.any(spec.h.entries < 0):
        raise GeneratorInfeasibleError("planted matrix must be non-negative")


def class_sizes(spec: GeneratorSpec) -> IntArray:
    return largest_remainder_round(spec.n * np.asarray(spec.alpha), spec.n)


def plan_block_counts(spec: GeneratorSpec) -> IntArray:
    """Integer edge targets per class pair, summing exactly to m.

    Every class receives endpoint mass 2m/k, so the within-class target is
    (m/k)·H_cc and the cross-class target is (2m/k)·H_ce.
    """
    validate_spec(spec)
    k = spec.h.k
    rows, cols = np.triu_indices(k)
    scale = np.where(rows == cols, spec.m / k, 2.0 * spec.m / k)
    targets = np.round(scale * spec.h.entries[rows, cols], _ROUNDING_DECIMALS)
    counts = largest_remainder_round(targets, spec.m)

    blocks = np.zeros((k, k), dtype=np.int64)
    blocks[rows, cols] = counts
    blocks[cols, rows] = counts

    sizes = class_sizes(spec)
    for c, e in zip(rows, cols):
        capacity = sizes[c] * (sizes[c] - 1) // 2 if c == e else sizes[c] * sizes[e]
        if blocks[c, e] > capacity:
            raise GeneratorInfeasibleError(
                f"block ({c}, {e}) needs {blocks[c, e]} edges but only "
                f"{capacity} node pairs exist"
            )
    return blocks


def stub_totals(blocks: IntArray) -> IntArray:
    return blocks.sum(axis=1) + np.diag(blocks)


def sample_degrees(
    size: int,
    stubs: int,
    dist: DegreeFamily,
    coefficient: float,
    rng: np.random.Generator,
) -> IntArray:
    """Per-node degrees from the family, summing exactly to ``stubs``."""
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    if dist is DegreeFamily.POWERLAW:
        # inverse CDF of the rank-degree law d ∝ rank^(-coefficient)
        weights = np.power(1.0 - rng.random(size), -coefficient)
    else:
        weights = np.ones(size)
    raw = stubs * weights / weights.sum()
    if stubs >= size and raw.min() < 1.0:
        spare = stubs - size
        return 1 + largest_remainder_round(spare * weights / weights.sum(), spare)
    order = rng.permutation(size)
    degrees = np.empty(size, dtype=np.int64)
    # shuffle before rounding so remainder ties do not favour low node ids
    degrees[order] = largest_remainder_round(raw[order], stubs)
    return degrees


class _EdgeMultiset:
    def __init__(self, keys: IntArray) -> None:
        self._keys, self._counts = np.unique(keys, return_counts=True)
        self._delta: dict[int, int] = {}

    def count(self, key: int) -> int:
        position = int(np.searchsorted(self._keys, key))
        base = 0
        if position < self._keys.size and self._keys[position] == key:
            base = int(self._counts[position])
        return base + self._delta.get(key, 0)

    def add(self, key: int) -> None:
        self._delta[key] = self._delta.get(key, 0) + 1

    def remove(self, key: int) -> None:
        self._delta[key] = self._delta.get(key, 0) - 1


def _wire(
    node_classes: IntArray,
    degrees: IntArray,
    blocks: IntArray,
    rng: np.random.Generator,
) -> tuple[IntArray, IntArray, BoolArray]:
    """Pair shuffled stubs block by block; may leave loops and multi-edges."""
    k = int(blocks.shape[0])
    pools: list[list[IntArray]] = []
    for c in range(k):
        members = np.flatnonzero(node_classes == c)
        stubs = rng.permutation(np.repeat(members, degrees[members]))
        sizes = [2 * blocks[c, e] if e == c else blocks[c, e] for e in range(k)]
        cuts = np.cumsum(sizes)[:-1]
        pools.append(np.split(stubs, cuts))

    edges: list[IntArray] = []
    block_ids: list[IntArray] = []
    within: list[bool] = []
    for c in range(k):
        for e in range(c, k):
            if e == c:
                pairs = pools[c][c].reshape(-1, 2)
            else:
                pairs = np.column_stack([pools[c][e], pools[e][c]])
            edges.append(pairs)
            block_ids.append(np.full(pairs.shape[0], len(within), dtype=np.int64))
            within.append(e == c)
    return (
        np.concatenate(edges).astype(np.int64),
        np.concatenate(block_ids),
        np.array(within, dtype=bool),
    )


def _edge_key(u: int, v: int, n: int) -> int:
    return min(u, v) * n + max(u, v)


def _repair(
    edges: IntArray,
    block_ids: IntArray,
    within: BoolArray,
    n: int,
    rng: np.random.Generator,
    budget: int,
) -> bool:
    """Remove self-loops and multi-edges with same-block double-edge swaps."""
    low = np.minimum(edges[:, 0], edges[:, 1])
    high = np.maximum(edges[:, 0], edges[:, 1])
    keys = low * n + high
    multiset = _EdgeMultiset(keys)
    _, first = np.unique(keys, return_index=True)
    duplicate = np.ones(keys.size, dtype=bool)
    duplicate[first] = False
    pending = np.flatnonzero(duplicate | (edges[:, 0] == edges[:, 1])).tolist()
    if not pending:
        return True
    logger.debug("Repairing %d self-loops or multi-edges", len(pending))

    members = {int(b): np.flatnonzero(block_ids == b) for b in np.unique(block_ids)}
    swaps = 0
    while pending:
        idx = pending.pop()
        u, v = int(edges[idx, 0]), int(edges[idx, 1])
        if u != v and multiset.count(_edge_key(u, v, n)) == 1:
            continue
        swaps += 1
        if swaps > budget:
            return False
        candidates = members[int(block_ids[idx])]
        if candidates.size < 2:
            return False
        other = int(candidates[rng.integers(candidates.size)])
        if other == idx:
            pending.append(idx)
            continue
        x, y = int(edges[other, 0]), int(edges[other, 1])
        # cross-block edges are stored (class c side, class e side)
        first_edge, second_edge = (u, y), (x, v)
        if within[int(block_ids[idx])] and rng.integers(2):
            first_edge, second_edge = (u, x), (v, y)
        if first_edge[0] == first_edge[1] or second_edge[0] == second_edge[1]:
            pending.append(idx)
            continue
        new_first = _edge_key(*first_edge, n)
        new_second = _edge_key(*second_edge, n)
        if (
            new_first == new_second
            or multiset.count(new_first) > 0
            or multiset.count(new_second) > 0
        ):
            pending.append(idx)
            continue
        multiset.remove(_edge_key(u, v, n))
        multiset.remove(_edge_key(x, y, n))
        multiset.add(new_first)
        multiset.add(new_second)
        edges[idx] = first_edge
        edges[other] = second_edge
    return True


def generate_graph(spec: GeneratorSpec) -> GeneratedGraph:
    blocks = plan_block_counts(spec)
    k = spec.h.k
    sizes = class_sizes(spec)
    stubs = stub_totals(blocks)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        rng = child_rng(spec.seed, attempt)
        node_classes = rng.permutation(np.repeat(np.arange(k), sizes)).astype(np.int64)
        degrees = np.zeros(spec.n, dtype=np.int64)
        for c in range(k):
            members = np.flatnonzero(node_classes == c)
            degrees[members] = sample_degrees(
                members.size, int(stubs[c]), spec.dist, spec.powerlaw_coefficient, rng
            )
        edges, block_ids, within = _wire(node_classes, degrees, blocks, rng)
        budget = SWAP_BUDGET_PER_EDGE * spec.m
        if not _repair(edges, block_ids, within, spec.n, rng, budget):
            logger.info("Edge repair failed on attempt %d, reseeding", attempt)
            continue
        graph = build_graph(edges[:, 0], edges[:, 1], n=spec.n)
        labels = make_label_set(np.arange(spec.n), node_classes, k)
        return GeneratedGraph(
            graph=graph,
            labels=labels,
            block_counts=achieved_block_counts(edges, node_classes, k),
            attempts=attempt,
        )
    raise GeneratorInfeasibleError(
        f"could not wire a simple graph after {MAX_ATTEMPTS} attempts"
    )


def achieved_block_counts(edges: IntArray, node_classes: IntArray, k: int) -> IntArray:
    first = node_classes[edges[:, 0]]
    second = node_classes[edges[:, 1]]
    low, high = np.minimum(first, second), np.maximum(first, second)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (low, high), 1)
    return counts + np.triu(counts, 1).T


def write_manifest(spec: GeneratorSpec, generated: GeneratedGraph, path: str | Path) -> None:
    manifest = {
        "n": spec.n,
        "m": spec.m,
        "alpha": np.asarray(spec.alpha).tolist(),
        "compatibility": compatibility_to_json(spec.h),
        "dist": str(spec.dist),
        "powerlaw_coefficient": spec.powerlaw_coefficient,
        "seed": spec.seed,
        "planned_block_counts": plan_block_counts(spec).tolist(),
        "achieved_block_counts": generated.block_counts.tolist(),
        "attempts": generated.attempts,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")


def balanced_alpha(k: int) -> FloatArray:
    return np.full(k, 1.0 / k)
