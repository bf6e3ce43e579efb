from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__  # type: ignore[assignment]

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from compat_estimator.exceptions import InvalidParameterError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]
BoolArray = NDArray[np.bool_]


class NormalizationVariant(IntEnum):
    ROW_STOCHASTIC = 1
    SYMMETRIC = 2
    SCALED = 3


class DegreeFamily(StrEnum):
    UNIFORM = "uniform"
    POWERLAW = "powerlaw"


class Method(StrEnum):
    GS = "GS"
    MCE = "MCE"
    LCE = "LCE"
    DCE = "DCE"
    DCER = "DCEr"
    HOLDOUT = "Holdout"
    HEURISTIC = "Heuristic"
    RWR = "RWR"


class SweepKind(StrEnum):
    ACCURACY = "accuracy"
    STATISTICS = "statistics"


@dataclass(frozen=True)
class SparseGraph:
    adjacency: sp.csr_matrix
    degrees: FloatArray

    @property
    def n(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def m(self) -> int:
        return int(self.adjacency.nnz // 2)


@dataclass(frozen=True)
class LabelSet:
    k: int
    nodes: IntArray
    classes: IntArray

    @property
    def n_labeled(self) -> int:
        return int(self.nodes.shape[0])

    def as_dict(self) -> dict[int, int]:
        return {int(u): int(c) for u, c in zip(self.nodes, self.classes)}


@dataclass(frozen=True)
class BeliefMatrix:
    values: FloatArray


@dataclass(frozen=True)
class CompatibilityMatrix:
    k: int
    entries: FloatArray


@dataclass(frozen=True)
class FreeParams:
    k: int
    h: FloatArray


@dataclass(frozen=True)
class PropagationConfig:
    s: float = 0.5
    iterations: int = 10
    epsilon_override: float | None = None
    converge_tol: float | None = None

    def __post_init__(self) -> None:
        if not self.s > 0.0:
            raise InvalidParameterError(f"s must be positive, got {self.s}")
        if self.iterations < 1:
            raise InvalidParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.epsilon_override is not None and not self.epsilon_override > 0.0:
            raise InvalidParameterError(
                f"epsilon must be positive, got {self.epsilon_override}"
            )
        if self.converge_tol is not None and not self.converge_tol > 0.0:
            raise InvalidParameterError(
                f"converge_tol must be positive, got {self.converge_tol}"
            )


@dataclass(frozen=True)
class GraphSummaries:
    k: int
    lmax: int
    raw: FloatArray  # (lmax, k, k)
    normalized: FloatArray  # (lmax, k, k)
    variant: NormalizationVariant
    zero_row_mask: BoolArray  # (lmax, k), True where the raw row sum was 0
    non_backtracking: bool = True


@dataclass(frozen=True)
class EstimatorConfig:
    lmax: int = 5
    scaling: float = 10.0
    restarts: int = 10
    delta: float | None = None  # None means 0.7 / k**2
    max_gd_iters: int = 500
    grad_tol: float = 1e-6
    holdout_splits: int = 1
    holdout_max_evals: int = 200
    variant: NormalizationVariant = NormalizationVariant.ROW_STOCHASTIC
    max_workers: int = 1
    clip: bool = False  # clip the final estimate to [0, 1] and re-project

    def __post_init__(self) -> None:
        for name in (
            "lmax",
            "restarts",
            "max_gd_iters",
            "holdout_splits",
            "holdout_max_evals",
            "max_workers",
        ):
            value = getattr(self, name)
            if value < 1:
                raise InvalidParameterError(f"{name} must be >= 1, got {value}")
        if not self.scaling > 0.0:
            raise InvalidParameterError(f"lambda must be positive, got {self.scaling}")
        if not self.grad_tol > 0.0:
            raise InvalidParameterError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.delta is not None and not self.delta > 0.0:
            raise InvalidParameterError(f"delta must be positive, got {self.delta}")

    def delta_for(self, k: int) -> float:
        return self.delta if self.delta is not None else 0.7 / k**2


@dataclass(frozen=True)
class EstimationResult:
    h_hat: CompatibilityMatrix
    energy: float
    restarts_used: int
    wall_time: float
    method: Method
    energy_trace: tuple[float, ...] = ()
    hyperparameters: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    m: int
    alpha: FloatArray
    h: CompatibilityMatrix
    dist: DegreeFamily = DegreeFamily.UNIFORM
    powerlaw_coefficient: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class GeneratedGraph:
    graph: SparseGraph
    labels: LabelSet
    block_counts: IntArray
    attempts: int


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[Method, ...]
    f_grid: tuple[float, ...]
    trials: int = 1
    seed: int = 0
    kind: SweepKind = SweepKind.ACCURACY
    generator: GeneratorSpec | None = None
    edges_path: str | None = None
    labels_path: str | None = None
    k: int | None = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    rwr_alpha: float = 0.85
    heuristic_gap: float = 0.1
    record_timing: bool = True
    jobs: int = 1


@dataclass(frozen=True)
class ResultRecord:
    method: Method
    f: float
    trial: int
    macro_accuracy: float | None  # None on error rows
    l2_to_gs: float | None  # None for RWR and error rows
    estimate_seconds: float
    propagate_seconds: float
    error: str = ""


@dataclass(frozen=True)
class StatisticsRecord:
    path_kind: str  # "nb" or "plain"
    length: int
    f: float
    trial: int
    max_entry: float
    mean_diagonal: float
    target_max_entry: float
