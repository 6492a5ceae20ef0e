from typing import TYPE_CHECKING, Sequence

import numpy as np

from app.constant import ExitCode

if TYPE_CHECKING:
    from app.identifiability import IdentifiabilityReport


class NetEnsembleError(Exception):
    exit_code: ExitCode = ExitCode.UNEXPECTED


class StructuralError(NetEnsembleError):
    exit_code = ExitCode.STRUCTURAL


class ConfigurationError(NetEnsembleError):
    exit_code = ExitCode.CONFIGURATION


class SchemaError(NetEnsembleError):
    exit_code = ExitCode.SCHEMA
    line_number: int | None

    def __init__(self, message: str, line_number: int | None = None) -> None:
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)
        self.line_number = line_number


class EnumerationCapError(NetEnsembleError):
    exit_code = ExitCode.ENUMERATION_CAP
    dyad_count: int
    cap: int

    def __init__(self, dyad_count: int, cap: int) -> None:
        super().__init__(
            f"{dyad_count} dyads to enumerate exceeds the enumeration cap of {cap}; use MCMC"
        )
        self.dyad_count = dyad_count
        self.cap = cap


class NonconvergenceError(NetEnsembleError):
    exit_code = ExitCode.NONCONVERGENCE
    last_iterate: np.ndarray
    iterations: int

    def __init__(self, message: str, last_iterate: np.ndarray, iterations: int) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class InfiniteMLEError(NetEnsembleError):
    exit_code = ExitCode.INFINITE_MLE
    coordinates: list[tuple[str, str]]

    def __init__(self, coordinates: Sequence[tuple[str, str]]) -> None:
        described = ", ".join(f"{name} ({direction})" for name, direction in coordinates)
        super().__init__(
            f"Observed statistic lies on the boundary of its support; the MLE is infinite along: {described}"
        )
        self.coordinates = list(coordinates)


class NonidentifiableError(NetEnsembleError):
    exit_code = ExitCode.NONIDENTIFIABLE
    report: "IdentifiabilityReport"

    def __init__(self, message: str, report: "IdentifiabilityReport") -> None:
        super().__init__(message)
        self.report = report


class SingularDesignError(NetEnsembleError):
    exit_code = ExitCode.SINGULAR_DESIGN
    names: list[str]

    def __init__(self, message: str, names: Sequence[str] = ()) -> None:
        if names:
            message = f"{message}: {', '.join(names)}"
        super().__init__(message)
        self.names = list(names)


class UnsupportedStatisticError(NetEnsembleError):
    exit_code = ExitCode.UNSUPPORTED_STATISTIC


class EstimatorError(NetEnsembleError):
    exit_code = ExitCode.ESTIMATOR
