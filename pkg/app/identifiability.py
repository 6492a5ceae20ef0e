from dataclasses import dataclass
from typing import Any

import numpy as np

from app.constant import DEFAULT_SINGULAR_TOL, Identifiability, InformationMode
from app.ensemble import Ensemble, ParamMatrix
from app.moments import MomentProvider, derive_seed, ensemble_information


@dataclass(frozen=True)
class NullDirection:
    """A near-null eigenvector, scaled so that its largest loading is +1."""

    eigenvalue: float
    loadings: dict[str, float]

    def describe(self) -> str:
        terms = ", ".join(f"{label}={value:+.3f}" for label, value in self.loadings.items())
        return f"eigenvalue {self.eigenvalue:.3e}: {terms}"


@dataclass(frozen=True)
class IdentifiabilityReport:
    labels: list[str]
    classification: Identifiability
    complete_information: np.ndarray
    fisher_information: np.ndarray
    complete_eigenvalues: np.ndarray
    fisher_eigenvalues: np.ndarray
    complete_null: list[NullDirection]
    fisher_null: list[NullDirection]
    tolerance: float

    @property
    def identifiable(self) -> bool:
        return self.classification == Identifiability.IDENTIFIABLE

    @property
    def complete_det(self) -> float:
        return float(np.linalg.det(self.complete_information))

    @property
    def fisher_det(self) -> float:
        return float(np.linalg.det(self.fisher_information))

    @property
    def null_directions(self) -> list[NullDirection]:
        """The directions behind the classification."""
        if self.classification == Identifiability.COMPLETE_DATA_SINGULAR:
            return self.complete_null
        return self.fisher_null

    def describe(self) -> str:
        lines = [f"Model is {self.classification}"]
        for direction in self.null_directions:
            lines.append(f"  near-null direction, {direction.describe()}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "classification": str(self.classification),
            "labels": self.labels,
            "complete_det": self.complete_det,
            "fisher_det": self.fisher_det,
            "complete_eigenvalues": self.complete_eigenvalues.tolist(),
            "fisher_eigenvalues": self.fisher_eigenvalues.tolist(),
            "null_directions": [
                {"eigenvalue": d.eigenvalue, "loadings": d.loadings} for d in self.null_directions
            ],
            "tolerance": self.tolerance,
        }


def near_null_directions(
    matrix: np.ndarray, labels: list[str], tol: float = DEFAULT_SINGULAR_TOL
) -> tuple[np.ndarray, list[NullDirection]]:
    """Eigenvalues of a symmetric matrix and its directions with eigenvalue < tol * lambda_max."""
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2)
    largest = float(eigenvalues.max(initial=0.0))
    directions = []
    for index, value in enumerate(eigenvalues):
        if largest > 0 and value >= tol * largest:
            continue
        vector = eigenvectors[:, index]
        magnitudes = np.abs(vector)
        anchor = int(np.flatnonzero(magnitudes >= magnitudes.max() - 1e-9)[0])
        vector = vector / vector[anchor]
        directions.append(
            NullDirection(
                eigenvalue=float(value),
                loadings={label: float(v) for label, v in zip(labels, vector) if abs(v) > 1e-10},
            )
        )
    return eigenvalues, directions


def complete_information(
    ens: Ensemble, B: ParamMatrix, provider: MomentProvider, seed: int = 0
) -> np.ndarray:
    """sum_s Z_s^T Sigma_s(theta) Z_s, the information if every network were fully observed."""
    moments = provider.moments_all(ens.thetas(B), False, seed, "complete-information")
    return ens.sum_lifted_matrices(B, [m.sigma for m in moments])


def check_identifiability(
    ens: Ensemble,
    B: ParamMatrix,
    provider: MomentProvider | None = None,
    tol: float = DEFAULT_SINGULAR_TOL,
    seed: int = 0,
) -> IdentifiabilityReport:
    """
    Classifies the model at B. A near-null direction of the complete-data information means
    the statistics are affinely dependent whatever is observed; one that appears only in the
    partially observed Fisher information is caused by the missing dyads.
    """
    provider = provider or MomentProvider(ens)
    labels = B.labels()
    complete = complete_information(ens, B, provider, seed)
    fisher = ensemble_information(
        ens, B, InformationMode.FISHER, provider, derive_seed(seed, "identifiability")
    )
    complete_eigenvalues, complete_null = near_null_directions(complete, labels, tol)
    fisher_eigenvalues, fisher_null = near_null_directions(fisher, labels, tol)
    if complete_null:
        classification = Identifiability.COMPLETE_DATA_SINGULAR
    elif fisher_null:
        classification = Identifiability.MISSINGNESS_INDUCED
    else:
        classification = Identifiability.IDENTIFIABLE
    return IdentifiabilityReport(
        labels=labels,
        classification=classification,
        complete_information=complete,
        fisher_information=fisher,
        complete_eigenvalues=complete_eigenvalues,
        fisher_eigenvalues=fisher_eigenvalues,
        complete_null=complete_null,
        fisher_null=fisher_null,
        tolerance=tol,
    )
