import abc
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import norm

from app.constant import (
    DEFAULT_MAX_HALVINGS,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MAX_STEP,
    DEFAULT_MC_TOLERANCE_SE,
    DEFAULT_PATH_STEPS,
    DEFAULT_TOLERANCE,
    SIGNIFICANCE_LEVELS,
    InformationMode,
)
from app.ensemble import Ensemble, ParamMatrix
from app.enumeration import EnumerationTable
from app.exception import InfiniteMLEError, NonconvergenceError
from app.log import logger
from app.moments import MomentProvider, SamplingOptions, derive_seed, ensemble_information
from app.network import Network
from app.sampler import batch_means_mcse

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    mc_tolerance_se: float = DEFAULT_MC_TOLERANCE_SE
    max_step: float = DEFAULT_MAX_STEP
    max_halvings: int = DEFAULT_MAX_HALVINGS
    path_steps: int = DEFAULT_PATH_STEPS
    information: InformationMode = InformationMode.FISHER
    check_boundary: bool = True
    seed: int = 0
    sampling: SamplingOptions = field(default_factory=SamplingOptions)


@dataclass(frozen=True)
class CoefficientRow:
    label: str
    estimate: float
    se: float
    z: float
    p_value: float
    stars: str


def significance_stars(p_value: float) -> str:
    for level, stars in SIGNIFICANCE_LEVELS:
        if p_value <= level:
            return stars
    return ""


@dataclass
class FitResult:
    """
    A fitted coefficient matrix with its information matrix, standard errors and
    log-likelihood. loglik_mcse is 0 when the log-likelihood was computed exactly.
    """

    B: ParamMatrix
    info: np.ndarray
    se: np.ndarray
    loglik: float
    loglik_mcse: float
    iterations: int
    converged: bool
    seed: int
    exact: bool
    information_mode: InformationMode
    observed_dyads: int
    score: np.ndarray

    @property
    def vec_B_hat(self) -> np.ndarray:
        return self.B.vec_free()

    @property
    def k(self) -> int:
        return self.B.k

    @property
    def aic(self) -> float:
        return -2 * self.loglik + 2 * self.k

    @property
    def bic(self) -> float:
        return -2 * self.loglik + self.k * math.log(max(self.observed_dyads, 1))

    @property
    def criterion_mcse(self) -> float:
        """Monte Carlo standard error shared by AIC and BIC."""
        return 2 * self.loglik_mcse

    def coefficient_table(self) -> list[CoefficientRow]:
        rows = []
        for label, estimate, se in zip(self.B.labels(), self.vec_B_hat, self.se):
            z = estimate / se if se > 0 and np.isfinite(se) else math.nan
            p_value = float(2 * norm.sf(abs(z))) if np.isfinite(z) else math.nan
            stars = significance_stars(p_value) if np.isfinite(p_value) else ""
            rows.append(CoefficientRow(label, float(estimate), float(se), z, p_value, stars))
        return rows

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": self.B.labels(),
            "estimate": self.vec_B_hat.tolist(),
            "se": [None if not np.isfinite(v) else float(v) for v in self.se],
            "coef": self.B.coef.tolist(),
            "mask": self.B.mask.tolist(),
            "offset": self.B.offset.tolist(),
            "covariate_names": list(self.B.covariate_names),
            "term_names": list(self.B.term_names),
            "info": self.info.tolist(),
            "information_mode": str(self.information_mode),
            "loglik": self.loglik,
            "loglik_mcse": self.loglik_mcse,
            "aic": self.aic,
            "bic": self.bic,
            "criterion_mcse": self.criterion_mcse,
            "observed_dyads": self.observed_dyads,
            "iterations": self.iterations,
            "converged": self.converged,
            "exact": self.exact,
            "seed": self.seed,
            "score": self.score.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitResult":
        B = ParamMatrix(
            np.array(data["coef"]),
            np.array(data["mask"], dtype=bool),
            np.array(data["offset"]),
            data["covariate_names"],
            data["term_names"],
        )
        return cls(
            B=B,
            info=np.array(data["info"], dtype=np.float64).reshape(B.k, B.k),
            se=np.array([math.nan if v is None else v for v in data["se"]], dtype=np.float64),
            loglik=float(data["loglik"]),
            loglik_mcse=float(data["loglik_mcse"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            seed=int(data["seed"]),
            exact=bool(data["exact"]),
            information_mode=InformationMode(data["information_mode"]),
            observed_dyads=int(data["observed_dyads"]),
            score=np.array(data["score"], dtype=np.float64),
        )


# Per-network likelihood pieces. Each network contributes a conditional part (the observed
# dyads held fixed) and an unconditional part; either may be exact or simulated.


class _Component(abc.ABC):
    mu: np.ndarray
    sigma: np.ndarray
    mean_var: np.ndarray

    @abc.abstractmethod
    def log_ratio(self, delta: np.ndarray) -> float:
        """log kappa(theta + delta) - log kappa(theta) over this component's state space."""
        raise NotImplementedError


class _ExactComponent(_Component):
    def __init__(self, table: EnumerationTable, theta: np.ndarray) -> None:
        self.table = table
        self.theta = theta
        moments = table.moments(theta)
        self.mu, self.sigma = moments.mu, moments.sigma
        self.mean_var = np.zeros_like(self.mu)
        self._base = float(moments.log_normaliser)  # type: ignore[arg-type]

    def log_ratio(self, delta: np.ndarray) -> float:
        _, log_normaliser = self.table.probabilities(self.theta + delta)
        return log_normaliser - self._base


class _ObservedComponent(_Component):
    """A fully observed network: the conditional state space is a single graph."""

    def __init__(self, stats: np.ndarray) -> None:
        self.mu = stats
        self.sigma = np.zeros((len(stats), len(stats)))
        self.mean_var = np.zeros_like(stats)

    def log_ratio(self, delta: np.ndarray) -> float:
        return float(delta @ self.mu)


class _SampledComponent(_Component):
    """Importance-sampling estimates from draws at theta."""

    def __init__(self, stats: np.ndarray) -> None:
        self.stats = stats
        self.mu = stats.mean(axis=0)
        self.sigma = np.atleast_2d(np.cov(stats, rowvar=False, ddof=1))
        self.mean_var = batch_means_mcse(stats) ** 2

    def log_ratio(self, delta: np.ndarray) -> float:
        return float(logsumexp(self.stats @ delta) - math.log(len(self.stats)))


@dataclass
class _NetworkTerms:
    conditional: _Component
    unconditional: _Component

    @property
    def exact(self) -> bool:
        return not isinstance(self.conditional, _SampledComponent) and not isinstance(
            self.unconditional, _SampledComponent
        )

    @property
    def score(self) -> np.ndarray:
        return self.conditional.mu - self.unconditional.mu

    @property
    def information(self) -> np.ndarray:
        return self.unconditional.sigma - self.conditional.sigma

    @property
    def score_var(self) -> np.ndarray:
        return self.conditional.mean_var + self.unconditional.mean_var

    def log_ratio(self, delta: np.ndarray) -> float:
        return self.conditional.log_ratio(delta) - self.unconditional.log_ratio(delta)


class _LikelihoodSurface:
    """The ensemble log-likelihood around a base point, from per-network pieces."""

    def __init__(
        self, ens: Ensemble, B: ParamMatrix, provider: MomentProvider, seed: int, iteration: int
    ) -> None:
        self.ens = ens
        self.B = B
        self.thetas = ens.thetas(B)
        self.networks = self._network_terms(provider, seed, iteration)
        self.exact = all(terms.exact for terms in self.networks)
        self.score = ens.sum_lifted_vectors(B, [terms.score for terms in self.networks])
        self.information = ens.sum_lifted_matrices(
            B, [terms.information for terms in self.networks]
        )
        self.score_se = np.sqrt(
            sum(
                np.kron(terms.score_var, ens.covariates[s] ** 2)[B.free_indices]
                for s, terms in enumerate(self.networks)
            )
        )

    def _network_terms(
        self, provider: MomentProvider, seed: int, iteration: int
    ) -> list[_NetworkTerms]:
        ens, thetas = self.ens, self.thetas
        R = provider.options.mcmc_sample_size
        purpose = f"fit-{iteration}"
        sampled_full = [not provider.is_exact(net) for net in ens.networks]
        sampled_conditional = [
            not net.is_fully_observed and not provider.is_exact(net, conditional=True)
            for net in ens.networks
        ]
        full_draws = (
            provider.draw_all(thetas, False, R, seed, purpose) if any(sampled_full) else None
        )
        conditional_draws = (
            provider.draw_all(thetas, True, R, seed, purpose + "-conditional")
            if any(sampled_conditional)
            else None
        )
        result = []
        for s, net in enumerate(ens.networks):
            unconditional: _Component
            conditional: _Component
            if full_draws is not None and sampled_full[s]:
                unconditional = _SampledComponent(full_draws[s].stats)
            else:
                unconditional = _ExactComponent(provider.enumerator.table(net, False), thetas[s])
            if net.is_fully_observed:
                conditional = _ObservedComponent(ens.spec.eval_stats(net))
            elif conditional_draws is not None and sampled_conditional[s]:
                conditional = _SampledComponent(conditional_draws[s].stats)
            else:
                conditional = _ExactComponent(provider.enumerator.table(net, True), thetas[s])
            result.append(_NetworkTerms(conditional=conditional, unconditional=unconditional))
        return result

    def log_ratio(self, step: np.ndarray) -> float:
        """Estimated l(B + step) - l(B)."""
        return sum(
            terms.log_ratio(self.ens.design(self.B, s) @ step)
            for s, terms in enumerate(self.networks)
        )


def _newton_direction(information: np.ndarray, score: np.ndarray) -> np.ndarray:
    """Solves I d = score, damping I towards positive definiteness when needed."""
    scale = max(float(np.abs(np.diag(information)).max(initial=0.0)), 1.0)
    damping = 0.0
    for _ in range(30):
        try:
            factor = np.linalg.cholesky(information + damping * np.eye(len(score)))
            return np.linalg.solve(factor.T, np.linalg.solve(factor, score))
        except np.linalg.LinAlgError:
            damping = scale * 1e-8 if damping == 0 else damping * 10
    return score / scale


def boundary_coordinates(ens: Ensemble, B: ParamMatrix, tol: float = 1e-9) -> list[tuple[str, str]]:
    """
    Free coordinates whose observed aggregate statistic lies on the boundary of its support.

    Every statistic in the term vocabulary is nondecreasing in the adjacency, so per network the
    extremes over all graphs are attained by the empty and complete graphs, and the extremes
    over Y(y_obs) by filling every missing dyad absent or present. The aggregate coordinate
    sum_s x_sk g_sl is on its upper boundary when every consistent imputation attains its
    maximum over all graphs, and likewise for the lower boundary.
    """
    spec = ens.spec
    full_low, full_high, obs_low, obs_high = [], [], [], []
    for net in ens.networks:
        complete = (1 << net.dyad_count) - 1
        observed = net.observed_bits()
        full_low.append(spec.eval_stats(net.with_edge_bits(0)))
        full_high.append(spec.eval_stats(net.with_edge_bits(complete)))
        obs_low.append(spec.eval_stats(net.with_edge_bits(observed)))
        obs_high.append(spec.eval_stats(net.with_edge_bits(observed | net.missing_bits)))

    def extreme(low: list[np.ndarray], high: list[np.ndarray], pick: Any) -> np.ndarray:
        total = np.zeros(B.k)
        for s in range(ens.S):
            a = ens.lift_vector(B, s, low[s])
            b = ens.lift_vector(B, s, high[s])
            total += pick(a, b)
        return total

    support_max = extreme(full_low, full_high, np.maximum)
    support_min = extreme(full_low, full_high, np.minimum)
    imputed_min = extreme(obs_low, obs_high, np.minimum)
    imputed_max = extreme(obs_low, obs_high, np.maximum)
    found = []
    for j, label in enumerate(B.labels()):
        if support_max[j] - support_min[j] <= tol:
            continue
        if imputed_min[j] >= support_max[j] - tol:
            found.append((label, "+inf"))
        elif imputed_max[j] <= support_min[j] + tol:
            found.append((label, "-inf"))
    return found


def mple(ens: Ensemble, B0: ParamMatrix) -> ParamMatrix:
    """
    Maximum pseudo-likelihood start for the dyad-independent coefficients: a logistic fit of
    the observed dyads on their change statistics. Other coefficients start at 0.
    """
    independent = ens.spec.dyad_independent
    free = B0.free_indices
    chosen = np.array([independent[index // B0.q] for index in free], dtype=bool)
    start = np.zeros(B0.k)
    if not chosen.any():
        return B0.with_free(start)
    offset_theta = ens.covariates @ B0.offset
    rows, offsets, responses = [], [], []
    for s, net in enumerate(ens.networks):
        weights = np.zeros((net.dyad_count, ens.p))
        weights[:, independent] = ens.spec.dyad_weights(net)
        observed = np.array([not net.missing_bits >> d & 1 for d in range(net.dyad_count)])
        if not observed.any():
            continue
        present = net.state_vector()[observed].astype(np.float64)
        features = np.stack(
            [np.kron(w, ens.covariates[s])[free][chosen] for w in weights[observed]]
        )
        rows.append(features)
        offsets.append(weights[observed][:, independent] @ offset_theta[s][independent])
        responses.append(present)
    if not rows:
        return B0.with_free(start)
    X, offset, y = np.vstack(rows), np.concatenate(offsets), np.concatenate(responses)
    # Collapse identical covariate patterns to binomial counts
    patterns, inverse = np.unique(np.column_stack([X, offset]), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    trials = np.bincount(inverse, minlength=len(patterns)).astype(np.float64)
    successes = np.bincount(inverse, weights=y, minlength=len(patterns))
    X, offset = patterns[:, :-1], patterns[:, -1]

    def objective(beta: np.ndarray) -> tuple[float, np.ndarray]:
        eta = X @ beta + offset
        loss = float(np.sum(trials * np.logaddexp(0.0, eta) - successes * eta))
        fitted = trials / (1.0 + np.exp(-eta))
        return loss, X.T @ (fitted - successes)

    result = minimize(
        objective,
        np.zeros(X.shape[1]),
        jac=True,
        method="L-BFGS-B",
        bounds=[(-30.0, 30.0)] * X.shape[1],
    )
    start[chosen] = result.x
    logger.debug(f"Pseudo-likelihood start: {dict(zip(np.array(B0.labels())[chosen], result.x))}")
    return B0.with_free(start)


def loglik_at(
    ens: Ensemble,
    B: ParamMatrix,
    provider: MomentProvider | None = None,
    path_steps: int = DEFAULT_PATH_STEPS,
    seed: int = 0,
) -> tuple[float, float]:
    """
    The ensemble log-likelihood at B with its Monte Carlo standard error.

    Networks under the enumeration cap are summed exactly. For the others the log-likelihood
    is bridged from the uniform model by path sampling:
    l(theta) = l(0) + int_0^1 theta . (mu(t theta | y_obs) - mu(t theta)) dt,
    integrated with the trapezoid rule over path_steps intervals.
    """
    provider = provider or MomentProvider(ens)
    thetas = ens.thetas(B)
    total, variance = 0.0, 0.0
    sampled = []
    for s, net in enumerate(ens.networks):
        if provider.is_exact(net):
            total += provider.enumerator.loglik(net, thetas[s])
        else:
            sampled.append(s)
    if not sampled:
        return total, 0.0
    grid = np.linspace(0.0, 1.0, path_steps + 1)
    weights = np.full(path_steps + 1, 1.0 / path_steps)
    weights[[0, -1]] /= 2
    R = provider.options.mcmc_sample_size
    for s in sampled:
        net, theta = ens.networks[s], thetas[s]
        total += -(net.dyad_count - net.free_count) * LOG2
        for t, w in zip(grid, weights):
            value, var = _path_integrand(provider, net, theta, t, R, seed)
            total += w * value
            variance += w * w * var
    return total, math.sqrt(variance)


def _path_integrand(
    provider: MomentProvider, net: Network, theta: np.ndarray, t: float, R: int, seed: int
) -> tuple[float, float]:
    """theta . (mu(t theta | y_obs) - mu(t theta)) and the variance of its estimate."""
    purpose = f"path-{t:.6f}"
    value, variance = 0.0, 0.0
    for conditional, sign in ((True, 1.0), (False, -1.0)):
        if conditional and net.is_fully_observed:
            value += sign * float(theta @ provider.ens.spec.eval_stats(net))
            continue
        if provider.is_exact(net, conditional):
            moments = provider.enumerator.moments(net, t * theta, conditional)
            value += sign * float(theta @ moments.mu)
            continue
        rng = np.random.default_rng(derive_seed(seed, net.net_id, purpose, str(conditional)))
        draws = provider.draw(net, t * theta, conditional, R, rng)
        series = draws.stats @ theta
        value += sign * float(series.mean())
        variance += float(batch_means_mcse(series)[0] ** 2)
    return value, variance


def fit_mle(
    ens: Ensemble,
    B0: ParamMatrix,
    opts: FitOptions | None = None,
    provider: MomentProvider | None = None,
) -> FitResult:
    """
    Maximum likelihood estimate of the free entries of B.

    Exact Newton iterations are used when every network is under the enumeration cap (the
    score and observed information are exact), otherwise Monte Carlo Newton: draws at the
    current point give the score, the information and importance-sampling estimates of the
    log-likelihood ratio; steps are held to a trust region of radius max_step and halved
    until the estimated ratio does not decrease. The Monte Carlo path converges when every
    score coordinate is within mc_tolerance_se Monte Carlo standard errors of 0.
    """
    opts = opts or FitOptions()
    provider = provider or MomentProvider(ens, opts.sampling)
    if opts.check_boundary:
        boundary = boundary_coordinates(ens, B0)
        if boundary:
            raise InfiniteMLEError(boundary)
    B = mple(ens, B0)
    beta = B.vec_free()
    converged = False
    surface = None
    iteration = 0
    for iteration in range(1, opts.max_iterations + 1):
        surface = _LikelihoodSurface(ens, B, provider, opts.seed, iteration)
        score = surface.score
        if surface.exact:
            done = bool(np.max(np.abs(score), initial=0.0) <= opts.tolerance)
        else:
            bound = np.maximum(opts.mc_tolerance_se * surface.score_se, opts.tolerance)
            done = bool(np.all(np.abs(score) <= bound))
        logger.debug(
            f"Iteration {iteration}: |score|={np.max(np.abs(score), initial=0.0):.3e} ({'exact' if surface.exact else 'monte carlo'})"
        )
        if done:
            converged = True
            break
        step = _newton_direction(surface.information, score)
        if not surface.exact:
            norm_step = float(np.linalg.norm(step))
            if norm_step > opts.max_step:
                step *= opts.max_step / norm_step
        for _ in range(opts.max_halvings + 1):
            if surface.log_ratio(step) >= -1e-12:
                break
            step = step / 2
        else:
            logger.warning(f"Step-halving exhausted at iteration {iteration}; taking smallest step")
        beta = beta + step
        B = B.with_free(beta)
    if not converged:
        raise NonconvergenceError(
            f"No convergence after {opts.max_iterations} iterations", beta, opts.max_iterations
        )
    assert surface is not None
    info = ensemble_information(
        ens, B, opts.information, provider, derive_seed(opts.seed, "information")
    )
    se = standard_errors(info)
    loglik, loglik_mcse = loglik_at(ens, B, provider, opts.path_steps, opts.seed)
    logger.info(
        f"Converged after {iteration} iteration(s); log-likelihood {loglik:.4f} (MCSE {loglik_mcse:.4f})"
    )
    return FitResult(
        B=B,
        info=info,
        se=se,
        loglik=loglik,
        loglik_mcse=loglik_mcse,
        iterations=iteration,
        converged=converged,
        seed=opts.seed,
        exact=surface.exact,
        information_mode=opts.information,
        observed_dyads=ens.observed_dyad_count(),
        score=surface.score,
    )


def standard_errors(info: np.ndarray) -> np.ndarray:
    """sqrt of the diagonal of the inverse information; NaN when it is singular."""
    try:
        eigenvalues = np.linalg.eigvalsh(info)
        if eigenvalues.size and eigenvalues.min() <= 1e-12 * max(eigenvalues.max(), 1e-300):
            raise np.linalg.LinAlgError("singular information")
        covariance = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        logger.warning("Information matrix is singular; standard errors are undefined")
        return np.full(len(info), math.nan)
    return np.sqrt(np.clip(np.diag(covariance), 0.0, None))
