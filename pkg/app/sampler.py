import math
from dataclasses import dataclass

import numpy as np

from app.constant import DEFAULT_BURNIN_FACTOR, DEFAULT_INTERVAL_FACTOR
from app.exception import StructuralError
from app.log import logger
from app.network import Network, dyad_pairs
from app.statistic import StatisticSpec


@dataclass(frozen=True)
class SampleDraws:
    stats: np.ndarray
    bits: list[int]
    acceptance_rate: float


class MetropolisSampler:
    """
    Single-dyad toggle Metropolis chain on a private copy of a network.

    Each step proposes toggling one dyad chosen uniformly from the free dyads (the missing
    dyads when conditional, every dyad otherwise) and accepts with probability
    min(1, exp(theta . delta)), where delta is the change statistic of the toggle. After a
    burn-in of burnin_factor * D steps one draw is kept every interval_factor * D steps, D being
    the number of free dyads.
    """

    spec: StatisticSpec
    theta: np.ndarray
    conditional: bool
    rng: np.random.Generator
    burnin: int
    interval: int
    _net: Network
    _free: list[tuple[int, int]]
    _stats: np.ndarray
    _digest: str

    def __init__(
        self,
        net: Network,
        spec: StatisticSpec,
        theta: np.ndarray,
        conditional: bool,
        rng: np.random.Generator,
        burnin_factor: int = DEFAULT_BURNIN_FACTOR,
        interval_factor: int = DEFAULT_INTERVAL_FACTOR,
    ) -> None:
        self.spec = spec
        self.theta = np.asarray(theta, dtype=np.float64)
        self.conditional = conditional
        self.rng = rng
        self._net = net.copy()
        pairs = dyad_pairs(net.n)
        if conditional:
            self._free = [pairs[d] for d in net.free_dyad_indices()]
        else:
            self._free = list(pairs)
        free_count = len(self._free)
        self.burnin = burnin_factor * free_count
        self.interval = max(1, interval_factor * free_count)
        self._stats = spec.eval_stats(self._net)
        self._digest = self._net.fixed_digest()

    def step(self) -> bool:
        i, j = self._free[int(self.rng.integers(len(self._free)))]
        delta = self.spec.change_stats(self._net, i, j)
        log_ratio = float(self.theta @ delta)
        if log_ratio >= 0 or self.rng.random() < math.exp(log_ratio):
            self._net.toggle(i, j)
            self._stats = self._stats + delta
            return True
        return False

    def run(self, R: int) -> SampleDraws:
        if R < 1:
            raise ValueError(f"Draw count must be at least 1, got {R}")
        stats = np.empty((R, self.spec.p))
        bits: list[int] = []
        if not self._free:
            stats[:] = self._stats
            return SampleDraws(stats=stats, bits=[self._net.edge_bits] * R, acceptance_rate=0.0)
        accepted = 0
        for _ in range(self.burnin):
            accepted += self.step()
        for r in range(R):
            for _ in range(self.interval):
                accepted += self.step()
            stats[r] = self._stats
            bits.append(self._net.edge_bits)
        if self.conditional and self._net.fixed_digest() != self._digest:
            raise StructuralError(f"Conditional chain on '{self._net.net_id}' altered observed dyads")
        steps = self.burnin + R * self.interval
        rate = accepted / steps if steps else 0.0
        logger.debug(
            f"Chain on '{self._net.net_id}' ({len(self._free)} free dyads): {R} draws, acceptance {rate:.3f}"
        )
        return SampleDraws(stats=stats, bits=bits, acceptance_rate=rate)


def mcmc_sample(
    net: Network,
    spec: StatisticSpec,
    theta: np.ndarray,
    conditional: bool,
    R: int,
    seed: int,
    burnin_factor: int = DEFAULT_BURNIN_FACTOR,
    interval_factor: int = DEFAULT_INTERVAL_FACTOR,
) -> np.ndarray:
    """R statistic vectors drawn from ERGM(theta), restricted to Y(y_obs) when conditional."""
    sampler = MetropolisSampler(
        net,
        spec,
        theta,
        conditional,
        np.random.default_rng(seed),
        burnin_factor=burnin_factor,
        interval_factor=interval_factor,
    )
    return sampler.run(R).stats


def batch_means_mcse(draws: np.ndarray) -> np.ndarray:
    """Monte Carlo standard error of the column means by non-overlapping batch means."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 1:
        draws = draws[:, None]
    R = len(draws)
    if R < 2:
        return np.zeros(draws.shape[1])
    batches = max(2, int(math.sqrt(R)))
    size = R // batches
    if size < 2:
        return draws.std(axis=0, ddof=1) / math.sqrt(R)
    means = draws[: batches * size].reshape(batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(batches)
