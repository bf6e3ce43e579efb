from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Annotated, Final

import numpy as np
from pydantic import Field, ValidationError, field_validator, model_validator

from compat_estimator.exceptions import CompatEstimatorError, ExperimentConfigError
from compat_estimator.schemas import Document, validation_messages
from compat_estimator.services.compatibility import make_compatibility, skew_compatibility
from compat_estimator.services.generator import balanced_alpha
from compat_estimator.types import (
    CompatibilityMatrix,
    DegreeFamily,
    EstimatorConfig,
    ExperimentConfig,
    GeneratorSpec,
    Method,
    NormalizationVariant,
    PropagationConfig,
    SweepKind,
)

logger = logging.getLogger(__name__)

SOURCE_ERROR: Final[str] = "exactly one of 'generator' or 'data' must be given"

LabelFraction = Annotated[float, Field(gt=0.0, le=1.0)]


class GeneratorSection(Document):
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    k: int | None = Field(default=None, ge=2)
    h_skew: float | None = Field(default=None, gt=0.0)
    h: list[list[float]] | None = None
    alpha: list[float] | None = None
    dist: DegreeFamily = DegreeFamily.UNIFORM
    powerlaw_coefficient: float = Field(default=0.3, gt=0.0)

    @model_validator(mode="after")
    def _check_compatibility(self) -> GeneratorSection:
        if (self.h_skew is None) == (self.h is None):
            raise ValueError("give exactly one of 'h_skew' or 'h'")
        H = self.compatibility()
        if self.k is not None and H.k != self.k:
            raise ValueError(f"k={self.k} but 'h' is {H.k}x{H.k}")
        if self.alpha is not None and (
            len(self.alpha) != H.k or abs(sum(self.alpha) - 1.0) > 1e-9
        ):
            raise ValueError(f"alpha: expected {H.k} fractions summing to 1")
        return self

    def compatibility(self) -> CompatibilityMatrix:
        if self.h_skew is not None:
            if self.k is None:
                raise ValueError("'k' is required with 'h_skew'")
            return skew_compatibility(self.k, self.h_skew)
        try:
            return make_compatibility(np.array(self.h, dtype=np.float64))
        except CompatEstimatorError as e:
            raise ValueError(f"h: {e}") from e

    def to_spec(self) -> GeneratorSpec:
        H = self.compatibility()
        alpha = balanced_alpha(H.k) if self.alpha is None else np.array(self.alpha)
        return GeneratorSpec(
            n=self.n,
            m=self.m,
            alpha=alpha,
            h=H,
            dist=self.dist,
            powerlaw_coefficient=self.powerlaw_coefficient,
        )


class DataSection(Document):
    edges: str
    labels: str
    k: int = Field(ge=2)


class EstimatorSection(Document):
    lmax: int = Field(default=5, ge=1)
    scaling: float = Field(default=10.0, gt=0.0, alias="lambda")
    restarts: int = Field(default=10, ge=1)
    delta: float | None = Field(default=None, gt=0.0)
    max_gd_iters: int = Field(default=500, ge=1)
    grad_tol: float = Field(default=1e-6, gt=0.0)
    holdout_splits: int = Field(default=1, ge=1)
    holdout_max_evals: int = Field(default=200, ge=1)
    variant: NormalizationVariant = NormalizationVariant.ROW_STOCHASTIC
    max_workers: int = Field(default=1, ge=1)
    clip: bool = False

    def to_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            lmax=self.lmax,
            scaling=self.scaling,
            restarts=self.restarts,
            delta=self.delta,
            max_gd_iters=self.max_gd_iters,
            grad_tol=self.grad_tol,
            holdout_splits=self.holdout_splits,
            holdout_max_evals=self.holdout_max_evals,
            variant=self.variant,
            max_workers=self.max_workers,
            clip=self.clip,
        )


class PropagationSection(Document):
    s: float = Field(default=0.5, gt=0.0)
    iterations: int = Field(default=10, ge=1)
    epsilon: float | None = Field(default=None, gt=0.0)
    converge_tol: float | None = Field(default=None, gt=0.0)

    def to_config(self) -> PropagationConfig:
        return PropagationConfig(
            s=self.s,
            iterations=self.iterations,
            epsilon_override=self.epsilon,
            converge_tol=self.converge_tol,
        )


class ExperimentDocument(Document):
    kind: SweepKind = SweepKind.ACCURACY
    methods: list[Method] = Field(default_factory=list)
    f_grid: list[LabelFraction] = Field(min_length=1)
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    generator: GeneratorSection | None = None
    data: DataSection | None = None
    estimator: EstimatorSection = Field(default_factory=EstimatorSection)
    propagation: PropagationSection = Field(default_factory=PropagationSection)
    rwr_alpha: float = Field(default=0.85, gt=0.0, lt=1.0)
    heuristic_gap: float = Field(default=0.1, ge=0.0)
    record_timing: bool = True
    jobs: int = Field(default=1, ge=1)

    @field_validator("methods", mode="before")
    @classmethod
    def _method_names(cls, value: object) -> object:
        if not isinstance(value, list):
            return value
        lookup = {method.value.lower(): method for method in Method}
        unknown = [name for name in value if str(name).lower() not in lookup]
        if unknown:
            choices = ", ".join(method.value for method in Method)
            names = ", ".join(f"unknown method {name!r}" for name in unknown)
            raise ValueError(f"{names} (choose from {choices})")
        return [lookup[str(name).lower()] for name in value]

    @model_validator(mode="after")
    def _check_sources(self) -> ExperimentDocument:
        if (self.generator is None) == (self.data is None):
            raise ValueError(SOURCE_ERROR)
        if self.kind is SweepKind.ACCURACY and not self.methods:
            raise ValueError("methods: an accuracy sweep needs at least one method")
        return self

    def to_config(self, base_dir: str | Path) -> ExperimentConfig:
        data = self.data
        return ExperimentConfig(
            methods=tuple(self.methods),
            f_grid=tuple(self.f_grid),
            trials=self.trials,
            seed=self.seed,
            kind=self.kind,
            generator=self.generator.to_spec() if self.generator is not None else None,
            edges_path=str(Path(base_dir) / data.edges) if data is not None else None,
            labels_path=str(Path(base_dir) / data.labels) if data is not None else None,
            k=data.k if data is not None else None,
            estimator=self.estimator.to_config(),
            propagation=self.propagation.to_config(),
            rwr_alpha=self.rwr_alpha,
            heuristic_gap=self.heuristic_gap,
            record_timing=self.record_timing,
            jobs=self.jobs,
        )


def experiment_config_from_json(
    data: dict[str, object], base_dir: str | Path = "."
) -> ExperimentConfig:
    """Build and validate a config, reporting every problem at once.

    Relative data paths resolve against ``base_dir``.
    """
    try:
        document = ExperimentDocument.model_validate(data)
    except ValidationError as e:
        raise ExperimentConfigError(validation_messages(e)) from e
    return document.to_config(base_dir)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as e:
        raise ExperimentConfigError([f"{path}: file not found"]) from e
    except json.JSONDecodeError as e:
        raise ExperimentConfigError([f"{path}: invalid JSON ({e})"]) from e
    if not isinstance(data, dict):
        raise ExperimentConfigError([f"{path}: expected a JSON object"])
    logger.debug("Loaded experiment config %s", path)
    return experiment_config_from_json(data, base_dir=path.parent)
