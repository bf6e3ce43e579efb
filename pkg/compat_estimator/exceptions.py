from __future__ import annotations


class CompatEstimatorError(Exception):
    pass


class GraphFormatError(CompatEstimatorError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line_number = line_number


class LabelFormatError(CompatEstimatorError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line_number = line_number


class InvalidCompatibilityError(CompatEstimatorError):
    pass


class SpectralRadiusNotConvergedError(CompatEstimatorError):
    def __init__(self, estimate: float, iterations: int) -> None:
        super().__init__(
            f"Power iteration did not converge after {iterations} iterations "
            f"(best estimate {estimate:.6g})"
        )
        self.estimate = estimate
        self.iterations = iterations


class PropagationDivergedError(CompatEstimatorError):
    pass


class SummarizationError(CompatEstimatorError):
    pass


class EstimationError(CompatEstimatorError):
    pass


class GeneratorInfeasibleError(CompatEstimatorError):
    pass


class ExperimentConfigError(CompatEstimatorError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class InvalidParameterError(CompatEstimatorError):
    """A numeric setting lies outside its allowed range."""
