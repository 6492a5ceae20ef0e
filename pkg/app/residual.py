import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from app.constant import (
    DEFAULT_R1,
    DEFAULT_R2,
    DEGENERATE_VARIANCE_TOL,
    TargetScope,
    VarianceEstimator,
)
from app.ensemble import Ensemble, ParamMatrix
from app.enumeration import EnumerationTable
from app.exception import EstimatorError
from app.log import logger
from app.moments import MomentProvider, derive_seed
from app.network import Network, bits_to_states
from app.parallel import ordered_map
from app.term import Edges, Term

CUMULATIVE_ID = "(all)"


@dataclass(frozen=True)
class TargetStatistic:
    """
    A network feature t(y) whose observed value (or best predictor) is compared with its model
    expectation. per_dyad divides the term by the dyad count, so Edges gives density.
    """

    name: str
    term: Term
    scope: TargetScope = TargetScope.PER_NETWORK
    per_dyad: bool = False

    @classmethod
    def density(cls, scope: TargetScope = TargetScope.PER_NETWORK) -> "TargetStatistic":
        return cls(name="density", term=Edges(), scope=scope, per_dyad=True)

    def _scale(self, net: Network) -> float:
        return 1.0 / net.dyad_count if self.per_dyad and net.dyad_count else 1.0

    def evaluate(self, net: Network) -> float:
        return self.term.evaluate(net) * self._scale(net)

    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        return self.term.evaluate_batch(net, states).astype(np.float64) * self._scale(net)

    def evaluate_bits(self, net: Network, bits: Sequence[int]) -> np.ndarray:
        states = np.stack([bits_to_states(b, net.dyad_count) for b in bits])
        return self.evaluate_batch(net, states)


@dataclass(frozen=True)
class NestedSimPlan:
    """
    Nested simulation settings: R1 complete networks are drawn from the fitted model and, for
    each, R2 conditional draws given its masked version. When the missing dyads of a network
    are enumerable the inner moments are exact and R2 is not used, unless exact_inner is off.
    """

    R1: int = DEFAULT_R1
    R2: int = DEFAULT_R2
    estimator: VarianceEstimator = VarianceEstimator.TOTAL_VARIANCE
    seed: int = 0
    exact_inner: bool = True

    def validate(self) -> None:
        if self.R1 < 2:
            raise EstimatorError(f"Nested simulation needs R1 >= 2, got {self.R1}")
        if self.estimator != VarianceEstimator.DIRECT and self.R2 < 2:
            raise EstimatorError(f"The {self.estimator} estimator needs R2 >= 2, got {self.R2}")


@dataclass(frozen=True)
class NestedDraws:
    """
    Target values from nested simulation, one row per outer replicate. With exact inner moments
    there is one column holding the exact conditional expectation.
    """

    values: np.ndarray
    exact_inner: bool = False

    @property
    def R1(self) -> int:
        return int(self.values.shape[0])

    @property
    def R2(self) -> int:
        return int(self.values.shape[1])

    @property
    def inner_means(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @property
    def inner_variances(self) -> np.ndarray:
        if self.exact_inner or self.R2 < 2:
            return np.zeros(self.R1)
        return self.values.var(axis=1, ddof=1)


def _check_draws(draws: NestedDraws) -> None:
    if draws.R1 < 2:
        raise EstimatorError(f"Variance estimation needs at least 2 outer replicates, got {draws.R1}")


def variance_direct(plan: NestedSimPlan, draws: NestedDraws) -> float:
    """Sample variance over outer replicates of the inner means."""
    _check_draws(draws)
    return float(np.var(draws.inner_means, ddof=1))


def variance_direct_adjusted(plan: NestedSimPlan, draws: NestedDraws) -> float:
    """The direct estimator less (1/R2) times the mean inner variance."""
    _check_draws(draws)
    if draws.exact_inner:
        return variance_direct(plan, draws)
    return variance_direct(plan, draws) - float(draws.inner_variances.mean()) / draws.R2


def variance_total(plan: NestedSimPlan, draws: NestedDraws) -> float:
    """Pooled variance of all draws less the mean inner variance."""
    _check_draws(draws)
    if draws.exact_inner:
        return variance_direct(plan, draws)
    pooled = float(np.var(draws.values.reshape(-1), ddof=1))
    return pooled - float(draws.inner_variances.mean())


VARIANCE_ESTIMATORS = {
    VarianceEstimator.DIRECT: variance_direct,
    VarianceEstimator.DIRECT_ADJUSTED: variance_direct_adjusted,
    VarianceEstimator.TOTAL_VARIANCE: variance_total,
}


@dataclass(frozen=True)
class ResidualRecord:
    net_id: str
    target: str
    point: float
    expectation: float
    variance: float
    residual: float
    degenerate: bool
    n: int
    exact: bool
    tags: tuple[str, ...] = field(default=())

    @property
    def scale_location(self) -> float:
        return math.sqrt(abs(self.residual)) if np.isfinite(self.residual) else math.nan

    def to_row(self) -> dict[str, Any]:
        return {
            "net_id": self.net_id,
            "target": self.target,
            "n": self.n,
            "point": self.point,
            "expectation": self.expectation,
            "variance": self.variance,
            "residual": self.residual,
            "sqrt_abs_residual": self.scale_location,
            "degenerate": self.degenerate,
            "exact": self.exact,
            "tags": ";".join(self.tags),
        }


def is_degenerate(variance: float, expectation: float) -> bool:
    return not variance > DEGENERATE_VARIANCE_TOL * max(1.0, expectation * expectation)


def make_record(
    net_id: str,
    target: str,
    point: float,
    expectation: float,
    variance: float,
    n: int,
    exact: bool,
    tags: tuple[str, ...] = (),
) -> ResidualRecord:
    degenerate = is_degenerate(variance, expectation)
    if degenerate:
        logger.warning(
            f"Degenerate variance {variance:.3e} for target '{target}' on '{net_id}'; residual undefined"
        )
    residual = math.nan if degenerate else (point - expectation) / math.sqrt(variance)
    return ResidualRecord(
        net_id=net_id,
        target=target,
        point=point,
        expectation=expectation,
        variance=variance,
        residual=residual,
        degenerate=degenerate,
        n=n,
        exact=exact,
        tags=tags,
    )


@dataclass(frozen=True)
class _NetworkComponents:
    point: float
    expectation: float
    variance: float
    exact: bool


class ResidualCalculator:
    """Computes Pearson residual components for one target over an ensemble."""

    ens: Ensemble
    B: ParamMatrix
    target: TargetStatistic
    plan: NestedSimPlan
    provider: MomentProvider

    def __init__(
        self,
        ens: Ensemble,
        B: ParamMatrix,
        target: TargetStatistic,
        plan: NestedSimPlan,
        provider: MomentProvider,
    ) -> None:
        plan.validate()
        self.ens = ens
        self.B = B
        self.target = target
        self.plan = plan
        self.provider = provider
        self._thetas = ens.thetas(B)

    def _table_values(self, net: Network, table: EnumerationTable) -> np.ndarray:
        return self.target.evaluate_batch(net, table.states)

    def _exact_mean(
        self, net: Network, theta: np.ndarray, conditional: bool
    ) -> tuple[float, float]:
        """Exact mean and variance of the target, unconditionally or given net's observed dyads."""
        table = self.provider.enumerator.table(net, conditional)
        probs, _ = table.probabilities(theta)
        values = self._table_values(net, table)
        mean = float(probs @ values)
        return mean, float(probs @ (values - mean) ** 2)

    def _exact_predictor_variance(self, net: Network, theta: np.ndarray) -> float:
        """Var over observations of E[t | obs(Y)], by grouping the full enumeration."""
        enumerator = self.provider.enumerator
        table = enumerator.table(net, conditional=False)
        probs, _ = table.probabilities(theta)
        values = self._table_values(net, table)
        observed = table.observed_bits(net.missing_bits)
        _, inverse = np.unique(observed, return_inverse=True)
        totals = np.bincount(inverse, weights=probs)
        sums = np.bincount(inverse, weights=probs * values)
        means = np.divide(sums, totals, out=np.zeros_like(sums), where=totals > 0)
        mean = float(probs @ values)
        return float(totals @ (means - mean) ** 2)

    def best_predictor(self, net: Network, theta: np.ndarray, seed: int) -> tuple[float, bool]:
        """t(y) when fully observed, otherwise E[t | y_obs]."""
        if net.is_fully_observed:
            return self.target.evaluate(net), True
        if self.provider.is_exact(net, conditional=True):
            return self._exact_mean(net, theta, conditional=True)[0], True
        rng = np.random.default_rng(derive_seed(seed, net.net_id, "predictor"))
        draws = self.provider.draw(net, theta, True, self.provider.options.mcmc_sample_size, rng)
        return float(self.target.evaluate_bits(net, draws.bits).mean()), False

    def expectation(self, net: Network, theta: np.ndarray, seed: int) -> float:
        """tau(B), the model expectation of the target."""
        if self.provider.is_exact(net):
            return self._exact_mean(net, theta, conditional=False)[0]
        rng = np.random.default_rng(derive_seed(seed, net.net_id, "expectation"))
        draws = self.provider.draw(net, theta, False, self.provider.options.mcmc_sample_size, rng)
        return float(self.target.evaluate_bits(net, draws.bits).mean())

    def prediction_error(self, s: int) -> float:
        """Best predictor minus model expectation for network s."""
        net, theta = self.ens.networks[s], self._thetas[s]
        seed = derive_seed(self.plan.seed, "prediction", self.target.name)
        return self.best_predictor(net, theta, seed)[0] - self.expectation(net, theta, seed)

    def nested_draws(self, net: Network, theta: np.ndarray, seed: int) -> tuple[NestedDraws, float]:
        """Nested simulation for one network, with the mean target value over outer draws."""
        rng = np.random.default_rng(derive_seed(seed, net.net_id, "nested", self.target.name))
        outer = self.provider.draw(net, theta, False, self.plan.R1, rng)
        outer_values = self.target.evaluate_bits(net, outer.bits)
        if net.is_fully_observed:
            return NestedDraws(outer_values[:, None], exact_inner=True), float(outer_values.mean())
        exact_inner = self.plan.exact_inner and self.provider.is_exact(net, conditional=True)
        rows = []
        for bits in outer.bits:
            imputed = net.with_edge_bits(bits)
            if exact_inner:
                rows.append([self._exact_mean(imputed, theta, conditional=True)[0]])
                continue
            inner = self.provider.draw(imputed, theta, True, self.plan.R2, rng)
            rows.append(self.target.evaluate_bits(imputed, inner.bits))
        return NestedDraws(np.array(rows), exact_inner=exact_inner), float(outer_values.mean())

    def components(self, s: int) -> _NetworkComponents:
        net, theta = self.ens.networks[s], self._thetas[s]
        seed = derive_seed(self.plan.seed, "residual", self.target.name)
        point, point_exact = self.best_predictor(net, theta, seed)
        if self.provider.is_exact(net):
            expectation, variance = self._exact_mean(net, theta, conditional=False)
            if not net.is_fully_observed:
                variance = self._exact_predictor_variance(net, theta)
            return _NetworkComponents(point, expectation, variance, point_exact)
        draws, expectation = self.nested_draws(net, theta, seed)
        variance = VARIANCE_ESTIMATORS[self.plan.estimator](self.plan, draws)
        return _NetworkComponents(point, expectation, variance, False)

    def records(self) -> list[ResidualRecord]:
        parts = ordered_map(self.components, list(range(self.ens.S)), self.provider.options.threads)
        name = self.target.name
        if self.target.scope == TargetScope.CUMULATIVE:
            return [
                make_record(
                    CUMULATIVE_ID,
                    name,
                    point=sum(c.point for c in parts),
                    expectation=sum(c.expectation for c in parts),
                    variance=sum(c.variance for c in parts),
                    n=sum(net.n for net in self.ens.networks),
                    exact=all(c.exact for c in parts),
                )
            ]
        return [
            make_record(
                net.net_id,
                name,
                point=c.point,
                expectation=c.expectation,
                variance=c.variance,
                n=net.n,
                exact=c.exact,
                tags=self.ens.tags[s],
            )
            for s, (net, c) in enumerate(zip(self.ens.networks, parts))
        ]


def pearson_residual(
    ens: Ensemble,
    B: ParamMatrix,
    target: TargetStatistic,
    plan: NestedSimPlan,
    provider: MomentProvider | None = None,
) -> list[ResidualRecord]:
    """
    Standardised residuals (point - tau(B)) / sqrt(Psi(B)) for a target. point is t(y) for a
    fully observed network and the empirical best predictor E[t | y_obs] otherwise; Psi is
    Var[t] or Var[E[t | obs(Y)]] respectively, exact under enumeration and otherwise estimated
    by nested simulation with the plan's estimator.
    """
    provider = provider or MomentProvider(ens)
    return ResidualCalculator(ens, B, target, plan, provider).records()
