from __future__ import annotations

import logging

import numpy as np

from compat_estimator.exceptions import CompatEstimatorError, InvalidParameterError
from compat_estimator.services.graph_core import make_label_set
from compat_estimator.services.numeric_utils import largest_remainder_round
from compat_estimator.types import IntArray, LabelSet

logger = logging.getLogger(__name__)

_MAX_SPLIT_ATTEMPTS = 10


def sample_seeds(full: LabelSet, f: float, seed: int | np.random.Generator) -> LabelSet:
    """Stratified sample of a fraction ``f`` of the labeled nodes."""
    if not 0.0 < f <= 1.0:
        raise InvalidParameterError(f"label fraction must lie in (0, 1], got {f}")
    total = int(round(f * full.n_labeled))
    if f * full.n_labeled < 1.0 or total < 1:
        raise CompatEstimatorError(
            f"fraction {f} of {full.n_labeled} labeled nodes selects no seeds"
        )
    if f == 1.0:
        return full

    rng = np.random.default_rng(seed)
    class_sizes = np.bincount(full.classes, minlength=full.k)
    targets = largest_remainder_round(f * class_sizes.astype(np.float64), total)
    chosen: list[IntArray] = []
    for c in range(full.k):
        members = full.nodes[full.classes == c]
        chosen.append(rng.choice(members, size=int(targets[c]), replace=False))
    if np.any(targets == 0):
        logger.info(
            "Seed sample of %d nodes has no seeds for classes %s",
            total,
            np.flatnonzero(targets == 0).tolist(),
        )
    nodes = np.concatenate(chosen).astype(np.int64)
    classes = np.concatenate(
        [np.full(int(targets[c]), c, dtype=np.int64) for c in range(full.k)]
    )
    return make_label_set(nodes, classes, full.k)


def class_averaged_accuracy(predicted: IntArray, actual: IntArray, k: int) -> float:
    """Mean over classes present in ``actual`` of the per-class accuracy."""
    if actual.size == 0:
        raise CompatEstimatorError("no nodes to score")
    scores = []
    for c in range(k):
        members = actual == c
        if members.any():
            scores.append(float(np.mean(predicted[members] == c)))
    return float(np.mean(scores))


def macro_accuracy(predicted: IntArray, truth: LabelSet, exclude: LabelSet) -> float:
    """Macro-averaged accuracy over the labeled nodes of ``truth`` not in ``exclude``."""
    scored = ~np.isin(truth.nodes, exclude.nodes)
    if not scored.any():
        raise CompatEstimatorError("every node is a seed; nothing to score")
    nodes = truth.nodes[scored]
    return class_averaged_accuracy(
        np.asarray(predicted)[nodes], truth.classes[scored], truth.k
    )


def stratified_split(
    labels: LabelSet, rng: np.random.Generator
) -> tuple[LabelSet, LabelSet]:
    """Split labeled nodes per class into two halves (seed, holdout).

    An odd class size sends its extra node to a random side. Splits that
    leave some class absent from one side are redrawn a few times.
    """
    present = set(np.unique(labels.classes).tolist())
    seed_part = holdout_part = labels
    for attempt in range(1, _MAX_SPLIT_ATTEMPTS + 1):
        seed_nodes: list[IntArray] = []
        holdout_nodes: list[IntArray] = []
        for c in range(labels.k):
            members = rng.permutation(labels.nodes[labels.classes == c])
            cut = members.size // 2 + int(members.size % 2 and rng.integers(2))
            seed_nodes.append(members[:cut])
            holdout_nodes.append(members[cut:])
        seed_part = _subset(labels, np.concatenate(seed_nodes))
        holdout_part = _subset(labels, np.concatenate(holdout_nodes))
        if set(seed_part.classes.tolist()) == present and set(
            holdout_part.classes.tolist()
        ) == present:
            return seed_part, holdout_part
        logger.debug("Split attempt %d misses a class, resampling", attempt)
    logger.warning(
        "Could not place every class in both halves after %d attempts",
        _MAX_SPLIT_ATTEMPTS,
    )
    return seed_part, holdout_part


def _subset(labels: LabelSet, nodes: IntArray) -> LabelSet:
    lookup = labels.as_dict()
    nodes = np.sort(nodes.astype(np.int64))
    classes = np.array([lookup[int(u)] for u in nodes], dtype=np.int64)
    return LabelSet(k=labels.k, nodes=nodes, classes=classes)
