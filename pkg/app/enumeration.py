import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from app.constant import DEFAULT_ENUM_CAP
from app.exception import EnumerationCapError
from app.network import Network, bits_to_states
from app.statistic import StatisticSpec


@dataclass(frozen=True)
class MomentEstimates:
    """Mean and covariance of the statistic, exact or simulated."""

    mu: np.ndarray
    sigma: np.ndarray
    conditional: bool
    mcse: np.ndarray
    log_normaliser: float | None = None
    exact: bool = True
    draws: int = 0

    @classmethod
    def from_draws(
        cls, stats: np.ndarray, conditional: bool, mcse: np.ndarray
    ) -> "MomentEstimates":
        stats = np.asarray(stats, dtype=np.float64)
        p = stats.shape[1]
        sigma = np.cov(stats, rowvar=False, ddof=1) if len(stats) > 1 else np.zeros((p, p))
        return cls(
            mu=stats.mean(axis=0),
            sigma=np.atleast_2d(sigma),
            conditional=conditional,
            mcse=mcse,
            exact=False,
            draws=len(stats),
        )


@dataclass(frozen=True)
class ObservationGroups:
    """The complete-network distribution grouped by the values of the observed dyads."""

    observed_bits: np.ndarray
    probabilities: np.ndarray
    means: np.ndarray
    mu: np.ndarray


@dataclass(frozen=True)
class EnumerationTable:
    """
    Every state of a network's enumerated dyads with its exact statistic vector.

    Unconditional tables range over all dyads; conditional tables hold the observed dyads at
    their observed values and range over the missing ones.
    """

    n: int
    dyads: tuple[int, ...]
    states: np.ndarray
    bits: np.ndarray
    edge_counts: np.ndarray
    stats: np.ndarray
    conditional: bool
    names: tuple[str, ...] = field(default=())

    @property
    def state_count(self) -> int:
        return len(self.bits)

    def probabilities(self, theta: np.ndarray) -> tuple[np.ndarray, float]:
        log_weights = self.stats @ np.asarray(theta, dtype=np.float64)
        log_normaliser = float(logsumexp(log_weights))
        return np.exp(log_weights - log_normaliser), log_normaliser

    def moments(self, theta: np.ndarray) -> MomentEstimates:
        probs, log_normaliser = self.probabilities(theta)
        stats = self.stats.astype(np.float64)
        mu = probs @ stats
        centred = stats - mu
        sigma = (centred * probs[:, None]).T @ centred
        return MomentEstimates(
            mu=mu,
            sigma=(sigma + sigma.T) / 2,
            conditional=self.conditional,
            mcse=np.zeros_like(mu),
            log_normaliser=log_normaliser,
        )

    def ordered(self) -> np.ndarray:
        """State indices sorted by edge count, then by dyad bitset."""
        order = sorted(range(self.state_count), key=lambda k: (self.edge_counts[k], self.bits[k]))
        return np.array(order, dtype=np.intp)

    def observed_bits(self, missing_bits: int) -> np.ndarray:
        """Each state's bitset with the given dyads cleared."""
        return np.array([bits & ~missing_bits for bits in self.bits], dtype=self.bits.dtype)


def _state_matrix(dyads: int, free: list[int], base_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Every assignment of the free dyads over base_bits: (state matrix, dyad bitsets)."""
    m = 1 << len(free)
    codes = np.arange(m, dtype=np.int64)
    combos = (codes[:, None] >> np.arange(len(free), dtype=np.int64)) & 1
    states = np.tile(bits_to_states(base_bits, dyads), (m, 1))
    states[:, free] = combos.astype(bool)
    if dyads < 63:
        weights = np.array([1 << d for d in free], dtype=np.int64)
        return states, combos @ weights + np.int64(base_bits)
    # past dyad 62 the bitsets no longer fit in int64
    bits = [base_bits + sum(1 << d for d, v in zip(free, row) if v) for row in combos.tolist()]
    return states, np.array(bits, dtype=object)


class Enumerator:
    """
    Exact likelihood computations by direct summation over enumerated states.

    Tables depend only on the network's signature (and, when conditional, its mask and
    observed values), so they are built once and shared by every network that matches.
    """

    spec: StatisticSpec
    cap: int
    _tables: dict[tuple, EnumerationTable]
    _lock: threading.Lock

    def __init__(self, spec: StatisticSpec, cap: int = DEFAULT_ENUM_CAP) -> None:
        self.spec = spec
        self.cap = cap
        self._tables = {}
        self._lock = threading.Lock()

    @staticmethod
    def enumerated_dyads(net: Network, conditional: bool) -> int:
        return net.free_count if conditional else net.dyad_count

    def can_enumerate(self, net: Network, conditional: bool = False) -> bool:
        return self.enumerated_dyads(net, conditional) <= self.cap

    def table(self, net: Network, conditional: bool) -> EnumerationTable:
        count = self.enumerated_dyads(net, conditional)
        if count > self.cap:
            raise EnumerationCapError(count, self.cap)
        if conditional:
            key: tuple = (net.signature, True, net.missing_bits, net.observed_bits())
        else:
            key = (net.signature, False)
        table = self._tables.get(key)
        if table is None:
            table = self._build(net, conditional)
            with self._lock:
                self._tables.setdefault(key, table)
        return table

    def _build(self, net: Network, conditional: bool) -> EnumerationTable:
        if conditional:
            free = net.free_dyad_indices()
            base = net.observed_bits()
        else:
            free = list(range(net.dyad_count))
            base = 0
        states, bits = _state_matrix(net.dyad_count, free, base)
        return EnumerationTable(
            n=net.n,
            dyads=tuple(free),
            states=states,
            bits=bits,
            edge_counts=states.sum(axis=1),
            stats=self.spec.evaluate_batch(net, states),
            conditional=conditional,
            names=self.spec.names,
        )

    def moments(self, net: Network, theta: np.ndarray, conditional: bool) -> MomentEstimates:
        return self.table(net, conditional).moments(theta)

    def loglik(self, net: Network, theta: np.ndarray) -> float:
        """log P(observed dyads) = log kappa(theta | y_obs) - log kappa(theta)."""
        _, conditional = self.table(net, conditional=True).probabilities(theta)
        _, full = self.table(net, conditional=False).probabilities(theta)
        return conditional - full

    def observation_groups(self, net: Network, theta: np.ndarray) -> ObservationGroups:
        table = self.table(net, conditional=False)
        probs, _ = table.probabilities(theta)
        observed = table.observed_bits(net.missing_bits)
        keys, inverse = np.unique(observed, return_inverse=True)
        totals = np.bincount(inverse, weights=probs, minlength=len(keys))
        stats = table.stats.astype(np.float64)
        sums = np.stack(
            [
                np.bincount(inverse, weights=probs * stats[:, j], minlength=len(keys))
                for j in range(stats.shape[1])
            ],
            axis=1,
        )
        means = np.divide(
            sums, totals[:, None], out=np.zeros_like(sums), where=totals[:, None] > 0
        )
        return ObservationGroups(
            observed_bits=keys, probabilities=totals, means=means, mu=probs @ stats
        )

    def fisher_matrix(self, net: Network, theta: np.ndarray) -> np.ndarray:
        """Var over observations of the conditional mean statistic, mu(theta | obs(Y))."""
        groups = self.observation_groups(net, theta)
        centred = groups.means - groups.mu
        matrix = (centred * groups.probabilities[:, None]).T @ centred
        return (matrix + matrix.T) / 2

    def observed_matrix(self, net: Network, theta: np.ndarray) -> np.ndarray:
        """Sigma(theta) - Sigma(theta | y_obs)."""
        full = self.moments(net, theta, conditional=False)
        if net.is_fully_observed:
            return full.sigma
        return full.sigma - self.moments(net, theta, conditional=True).sigma

    def draw(
        self,
        net: Network,
        theta: np.ndarray,
        conditional: bool,
        size: int,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Independent exact draws: (dyad bitsets, statistic vectors)."""
        table = self.table(net, conditional)
        probs, _ = table.probabilities(theta)
        picks = rng.choice(table.state_count, size=size, p=probs)
        return table.bits[picks], table.stats[picks].astype(np.float64)


def enumerate_moments(
    net: Network,
    spec: StatisticSpec,
    theta: np.ndarray,
    conditional: bool,
    cap: int = DEFAULT_ENUM_CAP,
) -> MomentEstimates:
    return Enumerator(spec, cap).moments(net, np.asarray(theta, dtype=np.float64), conditional)
