import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from app.constant import INTERCEPT
from app.exception import ConfigurationError
from app.network import Network
from app.statistic import StatisticSpec

TAG_PREFIX = "tag:"


def covariate_value(
    name: str,
    net: Network,
    net_covariates: Mapping[str, float],
    tags: Sequence[str],
    size_reference: float = 1.0,
) -> float:
    """
    Resolves one named network covariate. Size transforms are centred on size_reference, so
    log(n) is log(n / size_reference) and log2(n) is its square.
    """
    if name == INTERCEPT:
        return 1.0
    if name == "n":
        return float(net.n)
    if name == "log(n)":
        return math.log(net.n / size_reference)
    if name == "log2(n)":
        return math.log(net.n / size_reference) ** 2
    if name.startswith(TAG_PREFIX):
        return 1.0 if name[len(TAG_PREFIX) :] in tags else 0.0
    if name in net_covariates:
        return float(net_covariates[name])
    raise ConfigurationError(f"Network '{net.net_id}' has no covariate '{name}'")


@dataclass(frozen=True)
class NetworkCovariates:
    """The covariate row x_s of one network."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError(f"Covariate names must be unique: {list(self.names)}")
        if self.values.shape != (len(self.names),):
            raise ConfigurationError(
                f"Covariate row of shape {self.values.shape} does not match names {list(self.names)}"
            )

    @property
    def q(self) -> int:
        return len(self.names)

    @classmethod
    def resolve(
        cls,
        names: Sequence[str],
        net: Network,
        net_covariates: Mapping[str, float] | None = None,
        tags: Sequence[str] = (),
        size_reference: float = 1.0,
    ) -> "NetworkCovariates":
        values = [
            covariate_value(name, net, net_covariates or {}, tags, size_reference) for name in names
        ]
        return cls(names=tuple(names), values=np.array(values, dtype=np.float64))


class ParamMatrix:
    """
    The q x p coefficient matrix B with a sparsity mask and a fixed offset.

    The estimated parameter vector is vec(B) (column-major, so entry l*q + k is B[k, l])
    restricted to the free entries of the mask. Masked-out entries of B are held at exactly 0;
    the offset is added to B when resolving network parameters and is never estimated.
    """

    coef: np.ndarray
    mask: np.ndarray
    offset: np.ndarray
    covariate_names: tuple[str, ...]
    term_names: tuple[str, ...]

    def __init__(
        self,
        coef: np.ndarray,
        mask: np.ndarray | None = None,
        offset: np.ndarray | None = None,
        covariate_names: Sequence[str] | None = None,
        term_names: Sequence[str] | None = None,
    ) -> None:
        coef = np.array(coef, dtype=np.float64, ndmin=2)
        q, p = coef.shape
        mask = np.ones((q, p), dtype=bool) if mask is None else np.array(mask, dtype=bool)
        offset = np.zeros((q, p)) if offset is None else np.array(offset, dtype=np.float64)
        if mask.shape != (q, p) or offset.shape != (q, p):
            raise ConfigurationError(
                f"Coefficient {coef.shape}, mask {mask.shape} and offset {offset.shape} shapes differ"
            )
        self.coef = np.where(mask, coef, 0.0)
        self.mask = mask
        self.offset = offset
        self.covariate_names = tuple(covariate_names or [f"x{k}" for k in range(q)])
        self.term_names = tuple(term_names or [f"g{j}" for j in range(p)])
        if len(self.covariate_names) != q or len(self.term_names) != p:
            raise ConfigurationError("Coefficient labels do not match the matrix shape")

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(q={self.q}, p={self.p}, k={self.k})"

    @classmethod
    def zeros_like(cls, other: "ParamMatrix") -> "ParamMatrix":
        return cls(
            np.zeros_like(other.coef),
            other.mask,
            other.offset,
            other.covariate_names,
            other.term_names,
        )

    @property
    def q(self) -> int:
        return int(self.coef.shape[0])

    @property
    def p(self) -> int:
        return int(self.coef.shape[1])

    @property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask.flatten(order="F"))

    @property
    def k(self) -> int:
        return int(self.mask.sum())

    @property
    def effective(self) -> np.ndarray:
        """B with masked entries at 0 and the offset added."""
        return self.coef + self.offset

    def labels(self) -> list[str]:
        """Names of the free entries, as term:covariate, in parameter-vector order."""
        return [
            f"{self.term_names[index // self.q]}:{self.covariate_names[index % self.q]}"
            for index in self.free_indices
        ]

    def vec_free(self) -> np.ndarray:
        return self.coef.flatten(order="F")[self.free_indices]

    def with_free(self, values: np.ndarray) -> "ParamMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.k,):
            raise ConfigurationError(f"Expected {self.k} free coefficients, got {values.shape}")
        vec = np.zeros(self.q * self.p)
        vec[self.free_indices] = values
        coef = vec.reshape((self.q, self.p), order="F")
        return ParamMatrix(coef, self.mask, self.offset, self.covariate_names, self.term_names)


def theta_for(B: ParamMatrix, x_s: NetworkCovariates | np.ndarray) -> np.ndarray:
    """Network parameters theta_s = (x_s B)^T, offsets included."""
    values = x_s.values if isinstance(x_s, NetworkCovariates) else np.asarray(x_s, dtype=np.float64)
    if values.shape != (B.q,):
        raise ConfigurationError(
            f"Covariate row of length {values.shape} does not match {B.q} coefficient rows"
        )
    return values @ B.effective


def design_matrix(
    x_s: NetworkCovariates | np.ndarray, p: int, free_indices: np.ndarray | None = None
) -> np.ndarray:
    """Z_s = I_p kron x_s, optionally reduced to the columns of free entries."""
    values = x_s.values if isinstance(x_s, NetworkCovariates) else np.asarray(x_s, dtype=np.float64)
    Z = np.kron(np.eye(p), values.reshape(1, -1))
    return Z if free_indices is None else Z[:, free_indices]


@dataclass
class Ensemble:
    """
    An ordered sample of networks, with one covariate row and one set of tags per network.

    net_covariates keeps the raw per-record covariates so that an ensemble can be written back
    out as it was read.
    """

    networks: list[Network]
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    spec: StatisticSpec
    tags: list[tuple[str, ...]] = field(default_factory=list)
    net_covariates: list[dict[str, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        S = len(self.networks)
        if S < 1:
            raise ConfigurationError("An ensemble needs at least one network")
        self.covariates = np.array(self.covariates, dtype=np.float64, ndmin=2)
        if not self.tags:
            self.tags = [() for _ in range(S)]
        if not self.net_covariates:
            self.net_covariates = [{} for _ in range(S)]
        if (
            self.covariates.shape != (S, len(self.covariate_names))
            or len(self.tags) != S
            or len(self.net_covariates) != S
        ):
            raise ConfigurationError(
                f"Ensemble of {S} networks has covariates {self.covariates.shape}, "
                f"{len(self.tags)} tag sets and {len(self.net_covariates)} covariate records"
            )
        if len(set(self.covariate_names)) != len(self.covariate_names):
            raise ConfigurationError(f"Covariate names must be unique: {list(self.covariate_names)}")
        for net in self.networks:
            self.spec.check(net)

    def __len__(self) -> int:
        return len(self.networks)

    @property
    def S(self) -> int:
        return len(self.networks)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def q(self) -> int:
        return len(self.covariate_names)

    @classmethod
    def build(
        cls,
        networks: Sequence[Network],
        spec: StatisticSpec,
        covariate_names: Sequence[str] = (INTERCEPT,),
        net_covariates: Sequence[Mapping[str, float]] | None = None,
        tags: Sequence[Sequence[str]] | None = None,
        size_reference: float = 1.0,
    ) -> "Ensemble":
        """Builds an ensemble, resolving named covariates (including size transforms) once."""
        records = [dict(c) for c in net_covariates] if net_covariates else [{} for _ in networks]
        labels = [tuple(t) for t in tags] if tags else [() for _ in networks]
        rows = [
            NetworkCovariates.resolve(covariate_names, net, record, label, size_reference).values
            for net, record, label in zip(networks, records, labels)
        ]
        return cls(
            networks=list(networks),
            covariates=np.array(rows).reshape(len(rows), len(covariate_names)),
            covariate_names=tuple(covariate_names),
            spec=spec,
            tags=labels,
            net_covariates=records,
        )

    def row(self, s: int) -> NetworkCovariates:
        return NetworkCovariates(names=self.covariate_names, values=self.covariates[s])

    def theta(self, B: ParamMatrix, s: int) -> np.ndarray:
        return theta_for(B, self.covariates[s])

    def thetas(self, B: ParamMatrix) -> np.ndarray:
        return np.stack([self.theta(B, s) for s in range(self.S)])

    def design(self, B: ParamMatrix, s: int) -> np.ndarray:
        return design_matrix(self.covariates[s], self.p, B.free_indices)

    def lift_vector(self, B: ParamMatrix, s: int, g: np.ndarray) -> np.ndarray:
        """Z_s^T g in reduced coordinates."""
        return np.kron(g, self.covariates[s])[B.free_indices]

    def lift_matrix(self, B: ParamMatrix, s: int, M: np.ndarray) -> np.ndarray:
        """Z_s^T M Z_s in reduced coordinates."""
        x = self.covariates[s]
        free = B.free_indices
        return np.kron(M, np.outer(x, x))[np.ix_(free, free)]

    def sum_lifted_vectors(self, B: ParamMatrix, vectors: Sequence[np.ndarray]) -> np.ndarray:
        total = np.zeros(B.k)
        for s, g in enumerate(vectors):
            total += self.lift_vector(B, s, g)
        return total

    def sum_lifted_matrices(self, B: ParamMatrix, matrices: Sequence[np.ndarray]) -> np.ndarray:
        total = np.zeros((B.k, B.k))
        for s, M in enumerate(matrices):
            total += self.lift_matrix(B, s, M)
        return (total + total.T) / 2

    def has_tag(self, s: int, tag: str) -> bool:
        return tag in self.tags[s]

    def group_label(self, s: int, group_tags: Sequence[str]) -> str:
        """The subset of group_tags carried by network s, joined with '+', or 'none'."""
        labels = [tag for tag in group_tags if tag in self.tags[s]]
        return "+".join(labels) if labels else "none"

    def observed_dyad_count(self) -> int:
        return sum(net.dyad_count - net.free_count for net in self.networks)

    def with_networks(self, networks: Sequence[Network]) -> "Ensemble":
        """Same covariates and tags, different network realisations."""
        return Ensemble(
            networks=list(networks),
            covariates=self.covariates,
            covariate_names=self.covariate_names,
            spec=self.spec,
            tags=list(self.tags),
            net_covariates=list(self.net_covariates),
        )

    def subset(self, indices: Sequence[int]) -> "Ensemble":
        return Ensemble(
            networks=[self.networks[s] for s in indices],
            covariates=self.covariates[list(indices)],
            covariate_names=self.covariate_names,
            spec=self.spec,
            tags=[self.tags[s] for s in indices],
            net_covariates=[self.net_covariates[s] for s in indices],
        )


def aggregate_suffstat(
    ens: Ensemble, nets: Sequence[Network], mask: np.ndarray | None = None
) -> np.ndarray:
    """
    sum_s Z_s^T g_s(y_s, x_s) over the given imputed networks, restricted to the free entries
    of the q x p mask (all entries when no mask is given).
    """
    if len(nets) != ens.S:
        raise ConfigurationError(f"Expected {ens.S} networks, got {len(nets)}")
    total = sum(
        (np.kron(ens.spec.eval_stats(net), ens.covariates[s]) for s, net in enumerate(nets)),
        np.zeros(ens.q * ens.p),
    )
    if mask is None:
        return total
    return total[np.flatnonzero(np.asarray(mask, dtype=bool).flatten(order="F"))]
