import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from app.constant import (
    DEFAULT_BURNIN_FACTOR,
    DEFAULT_ENUM_CAP,
    DEFAULT_FISHER_INNER,
    DEFAULT_FISHER_OUTER,
    DEFAULT_INTERVAL_FACTOR,
    DEFAULT_MCMC_SAMPLE_SIZE,
    InformationMode,
)
from app.ensemble import Ensemble, ParamMatrix
from app.enumeration import Enumerator, MomentEstimates
from app.log import logger
from app.network import Network
from app.parallel import ordered_map
from app.sampler import MetropolisSampler, SampleDraws, batch_means_mcse

T = TypeVar("T")
SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, *keys: str) -> int:
    """A 64-bit stream seed: seed XOR a keyed hash (network id, purpose, iteration...)."""
    digest = hashlib.blake2b("\x1f".join(keys).encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & SEED_MASK


@dataclass(frozen=True)
class SamplingOptions:
    enum_cap: int = DEFAULT_ENUM_CAP
    force_mcmc: bool = False
    mcmc_sample_size: int = DEFAULT_MCMC_SAMPLE_SIZE
    burnin_factor: int = DEFAULT_BURNIN_FACTOR
    interval_factor: int = DEFAULT_INTERVAL_FACTOR
    fisher_outer: int = DEFAULT_FISHER_OUTER
    fisher_inner: int = DEFAULT_FISHER_INNER
    threads: int = 1


class MomentProvider:
    """
    Per-network moments, draws and information matrices for an ensemble, computed exactly by
    enumeration when a network is under the cap and by simulation otherwise.

    Networks that share a signature, mask, observed values and parameter vector are
    exchangeable, so they share one computation; its seed is derived from the first such
    network in ensemble order.
    """

    ens: Ensemble
    options: SamplingOptions
    enumerator: Enumerator

    def __init__(self, ens: Ensemble, options: SamplingOptions | None = None) -> None:
        self.ens = ens
        self.options = options or SamplingOptions()
        self.enumerator = Enumerator(ens.spec, self.options.enum_cap)

    def is_exact(self, net: Network, conditional: bool = False) -> bool:
        return not self.options.force_mcmc and self.enumerator.can_enumerate(net, conditional)

    def all_exact(self) -> bool:
        return all(self.is_exact(net) for net in self.ens.networks)

    @staticmethod
    def _group_key(net: Network, theta: np.ndarray, conditional: bool) -> tuple:
        if conditional and not net.is_fully_observed:
            return (net.signature, True, net.missing_bits, net.observed_bits(), theta.tobytes())
        if conditional:
            return (net.signature, True, 0, net.edge_bits, theta.tobytes())
        return (net.signature, False, theta.tobytes())

    def draw(
        self,
        net: Network,
        theta: np.ndarray,
        conditional: bool,
        R: int,
        rng: np.random.Generator,
    ) -> SampleDraws:
        """R draws from ERGM(theta), exact when enumerable, otherwise by Metropolis."""
        if self.is_exact(net, conditional):
            bits, stats = self.enumerator.draw(net, theta, conditional, R, rng)
            return SampleDraws(stats=stats, bits=[int(b) for b in bits], acceptance_rate=1.0)
        sampler = MetropolisSampler(
            net,
            self.ens.spec,
            theta,
            conditional,
            rng,
            burnin_factor=self.options.burnin_factor,
            interval_factor=self.options.interval_factor,
        )
        return sampler.run(R)

    def _run_grouped(self, keys: Sequence[tuple], job: Callable[[int], T]) -> list[T]:
        """Runs job once per distinct key (on its first network) and fans results back out."""
        groups: dict[tuple, int] = {}
        owners = [groups.setdefault(key, s) for s, key in enumerate(keys)]
        leaders = sorted(set(owners))
        results = dict(zip(leaders, ordered_map(job, leaders, self.options.threads)))
        return [results[owner] for owner in owners]

    def draw_all(
        self, thetas: np.ndarray, conditional: bool, R: int, seed: int, purpose: str
    ) -> list[SampleDraws]:
        """Draws for every network, one shared computation per exchangeable group."""
        networks = self.ens.networks

        def job(s: int) -> SampleDraws:
            rng = np.random.default_rng(derive_seed(seed, networks[s].net_id, purpose))
            return self.draw(networks[s], thetas[s], conditional, R, rng)

        keys = [self._group_key(net, thetas[s], conditional) for s, net in enumerate(networks)]
        return self._run_grouped(keys, job)

    def moments(
        self,
        net: Network,
        theta: np.ndarray,
        conditional: bool,
        seed: int,
        purpose: str = "moments",
    ) -> MomentEstimates:
        if self.is_exact(net, conditional):
            return self.enumerator.moments(net, theta, conditional)
        if conditional and net.is_fully_observed:
            stats = self.ens.spec.eval_stats(net)
            p = len(stats)
            return MomentEstimates(stats, np.zeros((p, p)), True, np.zeros(p))
        rng = np.random.default_rng(derive_seed(seed, net.net_id, purpose))
        draws = self.draw(net, theta, conditional, self.options.mcmc_sample_size, rng)
        return MomentEstimates.from_draws(draws.stats, conditional, batch_means_mcse(draws.stats))

    def moments_all(
        self, thetas: np.ndarray, conditional: bool, seed: int, purpose: str = "moments"
    ) -> list[MomentEstimates]:
        networks = self.ens.networks
        keys = [self._group_key(net, thetas[s], conditional) for s, net in enumerate(networks)]
        return self._run_grouped(
            keys, lambda s: self.moments(networks[s], thetas[s], conditional, seed, purpose)
        )

    def nested_fisher(self, net: Network, theta: np.ndarray, seed: int) -> np.ndarray:
        """
        Var[mu(theta | obs(Y))] by nested simulation: complete networks are drawn from the model,
        masked like net, and their conditional moments computed exactly when the missing dyads
        are enumerable or by inner chains otherwise. With simulated inner moments the law of
        total variance estimator is used (pooled covariance minus mean within covariance).
        """
        if net.is_fully_observed:
            return self.moments(net, theta, False, seed, "fisher").sigma
        rng = np.random.default_rng(derive_seed(seed, net.net_id, "fisher"))
        outer = self.draw(net, theta, False, self.options.fisher_outer, rng)
        means: list[np.ndarray] = []
        covariances: list[np.ndarray] = []
        pooled: list[np.ndarray] = []
        exact_inner = self.is_exact(net, conditional=True)
        for bits in outer.bits:
            imputed = net.with_edge_bits(bits)
            if exact_inner:
                inner = self.enumerator.moments(imputed, theta, conditional=True)
                means.append(inner.mu)
                continue
            draws = self.draw(imputed, theta, True, self.options.fisher_inner, rng)
            covariances.append(np.atleast_2d(np.cov(draws.stats, rowvar=False, ddof=1)))
            pooled.append(draws.stats)
        if exact_inner:
            return np.atleast_2d(np.cov(np.array(means), rowvar=False, ddof=1))
        total = np.atleast_2d(np.cov(np.vstack(pooled), rowvar=False, ddof=1))
        return total - np.mean(covariances, axis=0)

    def network_matrix(
        self, net: Network, theta: np.ndarray, mode: InformationMode, seed: int
    ) -> np.ndarray:
        """Per-network information matrix M_s for the chosen mode."""
        if self.is_exact(net):
            if mode == InformationMode.FISHER:
                return self.enumerator.fisher_matrix(net, theta)
            return self.enumerator.observed_matrix(net, theta)
        if mode == InformationMode.FISHER:
            return self.nested_fisher(net, theta, seed)
        full = self.moments(net, theta, False, seed, "observed")
        conditional = self.moments(net, theta, True, seed, "observed-conditional")
        return full.sigma - conditional.sigma

    def network_matrices(
        self, B: ParamMatrix, mode: InformationMode, seed: int
    ) -> list[np.ndarray]:
        thetas = self.ens.thetas(B)
        networks = self.ens.networks
        keys = [
            (self._group_key(net, thetas[s], True), self._group_key(net, thetas[s], False))
            for s, net in enumerate(networks)
        ]
        return self._run_grouped(
            keys, lambda s: self.network_matrix(networks[s], thetas[s], mode, seed)
        )


def ensemble_information(
    ens: Ensemble,
    B: ParamMatrix,
    mode: InformationMode,
    provider: MomentProvider | None = None,
    seed: int = 0,
) -> np.ndarray:
    """sum_s Z_s^T M_s Z_s in reduced coordinates, summed in network order."""
    provider = provider or MomentProvider(ens)
    matrices = provider.network_matrices(B, mode, seed)
    info = ens.sum_lifted_matrices(B, matrices)
    logger.debug(f"Information ({mode}) assembled over {ens.S} networks, k={B.k}")
    return info

