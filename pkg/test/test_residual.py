import math

import numpy as np
import pytest

from app.constant import TargetScope, VarianceEstimator
from app.ensemble import Ensemble, ParamMatrix
from app.exception import EstimatorError
from app.moments import MomentProvider, SamplingOptions
from app.network import Network, dyad_pairs
from app.residual import (
    CUMULATIVE_ID,
    NestedDraws,
    NestedSimPlan,
    ResidualCalculator,
    TargetStatistic,
    is_degenerate,
    pearson_residual,
    variance_direct,
    variance_direct_adjusted,
    variance_total,
)
from app.statistic import StatisticSpec
from app.term import Edges, Triangles

EDGES = TargetStatistic(name="edges", term=Edges())


def zero_params(ens):
    return ParamMatrix(np.zeros((ens.q, ens.p)), term_names=ens.spec.names)


def test_fully_observed_residuals(triad_spec):
    networks = [Network(3, edges=list(dyad_pairs(3))[:k], net_id=f"k{k}") for k in range(4)]
    ens = Ensemble.build(networks, triad_spec)
    records = pearson_residual(ens, zero_params(ens), EDGES, NestedSimPlan())
    residuals = [record.residual for record in records]
    root3 = math.sqrt(3)
    assert residuals == pytest.approx([-root3, -1 / root3, 1 / root3, root3])
    assert all(record.exact and not record.degenerate for record in records)
    assert [record.expectation for record in records] == pytest.approx([1.5] * 4)
    assert [record.variance for record in records] == pytest.approx([0.75] * 4)


def test_best_predictor_with_missing_dyad(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    [record] = pearson_residual(ens, zero_params(ens), EDGES, NestedSimPlan())
    assert record.point == pytest.approx(2.5)
    assert record.expectation == pytest.approx(1.5)
    # variance over observations of the conditional mean
    assert record.variance == pytest.approx(0.5)
    assert record.residual == pytest.approx(math.sqrt(2))
    assert record.scale_location == pytest.approx(2**0.25)


def test_density_target(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    [record] = pearson_residual(ens, zero_params(ens), TargetStatistic.density(), NestedSimPlan())
    assert record.target == "density"
    assert record.point == pytest.approx(2.5 / 3)
    assert record.variance == pytest.approx(0.5 / 9)
    assert record.residual == pytest.approx(math.sqrt(2))


def test_cumulative_target(triad_spec, three_node_missing):
    full = Network(3, edges=list(dyad_pairs(3)), net_id="full")
    ens = Ensemble.build([full, three_node_missing], triad_spec)
    target = TargetStatistic(name="edges", term=Edges(), scope=TargetScope.CUMULATIVE)
    [record] = pearson_residual(ens, zero_params(ens), target, NestedSimPlan())
    assert record.net_id == CUMULATIVE_ID
    assert record.point == pytest.approx(5.5)
    assert record.expectation == pytest.approx(3.0)
    assert record.variance == pytest.approx(1.25)
    assert record.residual == pytest.approx(math.sqrt(5))
    assert record.n == 6


def test_prediction_error(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    calculator = ResidualCalculator(
        ens, zero_params(ens), EDGES, NestedSimPlan(), MomentProvider(ens)
    )
    assert calculator.prediction_error(0) == pytest.approx(1.0)


def test_degenerate_target(triad_spec):
    ens = Ensemble.build([Network(2, edges=[(0, 1)], net_id="pair")], triad_spec)
    target = TargetStatistic(name="triangles", term=Triangles())
    [record] = pearson_residual(ens, zero_params(ens), target, NestedSimPlan())
    assert record.degenerate
    assert math.isnan(record.residual)
    assert math.isnan(record.scale_location)
    assert record.to_row()["degenerate"] is True


def test_is_degenerate():
    assert is_degenerate(0.0, 0.0)
    assert is_degenerate(1e-13, 0.5)
    assert not is_degenerate(1e-6, 0.5)
    assert is_degenerate(1e-9, 1e3)


def test_variance_estimators():
    plan = NestedSimPlan(R1=2, R2=2)
    draws = NestedDraws(np.array([[1.0, 3.0], [2.0, 6.0]]))
    assert variance_direct(plan, draws) == pytest.approx(2.0)
    assert variance_direct_adjusted(plan, draws) == pytest.approx(2.0 - 5.0 / 2)
    assert variance_total(plan, draws) == pytest.approx(14 / 3 - 5.0)


def test_variance_estimators_agree_with_exact_inner_moments():
    plan = NestedSimPlan(R1=3, R2=2)
    draws = NestedDraws(np.array([[1.0], [2.0], [4.0]]), exact_inner=True)
    expected = np.var([1.0, 2.0, 4.0], ddof=1)
    for estimator in (variance_direct, variance_direct_adjusted, variance_total):
        assert estimator(plan, draws) == pytest.approx(expected)


def test_plan_validation():
    with pytest.raises(EstimatorError) as e_info:
        NestedSimPlan(R1=1).validate()
    assert str(e_info.value) == "Nested simulation needs R1 >= 2, got 1"
    with pytest.raises(EstimatorError):
        NestedSimPlan(R2=1).validate()
    NestedSimPlan(R2=1, estimator=VarianceEstimator.DIRECT).validate()
    with pytest.raises(EstimatorError):
        variance_direct(NestedSimPlan(), NestedDraws(np.ones((1, 3))))


def test_exact_inner_moments_with_simulated_outer_draws(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    provider = MomentProvider(ens, SamplingOptions(enum_cap=2, mcmc_sample_size=4000))
    plan = NestedSimPlan(R1=2000, seed=3)
    [record] = pearson_residual(ens, zero_params(ens), EDGES, plan, provider)
    assert not record.exact
    assert record.point == pytest.approx(2.5)
    assert record.expectation == pytest.approx(1.5, abs=0.1)
    assert record.variance == pytest.approx(0.5, abs=0.1)


@pytest.mark.parametrize("estimator", list(VarianceEstimator))
def test_nested_simulation_agrees_with_exact(triad_spec, three_node_missing, estimator):
    ens = Ensemble.build([three_node_missing], triad_spec)
    provider = MomentProvider(ens, SamplingOptions(force_mcmc=True, mcmc_sample_size=2000))
    plan = NestedSimPlan(R1=600, R2=20, estimator=estimator, seed=5)
    [record] = pearson_residual(ens, zero_params(ens), EDGES, plan, provider)
    assert record.point == pytest.approx(2.5, abs=0.1)
    assert record.expectation == pytest.approx(1.5, abs=0.15)
    assert record.variance == pytest.approx(0.5, abs=0.2)


def test_best_predictor_beyond_dyad_62():
    pairs = dyad_pairs(12)
    net = Network(12, edges=[pairs[10], pairs[64], pairs[65]], missing=[pairs[0]], net_id="big")
    ens = Ensemble.build([net], StatisticSpec([Edges()]))
    calculator = ResidualCalculator(
        ens, zero_params(ens), EDGES, NestedSimPlan(), MomentProvider(ens)
    )
    assert calculator.best_predictor(net, np.zeros(1), seed=0) == (pytest.approx(3.5), True)


@pytest.mark.slow
def test_variance_estimators_over_meta_replicates(triad_spec):
    net = Network(4, edges=[(0, 2), (1, 2), (1, 3)], missing=[(0, 1), (2, 3)], net_id="m")
    ens = Ensemble.build([net], triad_spec)
    plan = NestedSimPlan(R1=200, R2=10, exact_inner=False)
    calculator = ResidualCalculator(ens, zero_params(ens), EDGES, plan, MomentProvider(ens))
    theta = np.zeros(3)
    truth = calculator._exact_predictor_variance(net, theta)
    # law of total variance: E[Var(t | obs)] = Var(t) - Var(E[t | obs])
    inner = calculator._exact_mean(net, theta, conditional=False)[1] - truth
    estimates = {estimator: [] for estimator in VarianceEstimator}
    for m in range(200):
        draws, _ = calculator.nested_draws(net, theta, seed=m)
        assert draws.values.shape == (200, 10)
        estimates[VarianceEstimator.DIRECT].append(variance_direct(plan, draws))
        estimates[VarianceEstimator.DIRECT_ADJUSTED].append(variance_direct_adjusted(plan, draws))
        estimates[VarianceEstimator.TOTAL_VARIANCE].append(variance_total(plan, draws))

    def within_three_se(values, expected):
        values = np.asarray(values)
        return abs(values.mean() - expected) < 3 * values.std(ddof=1) / np.sqrt(len(values))

    assert within_three_se(estimates[VarianceEstimator.TOTAL_VARIANCE], truth)
    assert within_three_se(estimates[VarianceEstimator.DIRECT_ADJUSTED], truth)
    assert within_three_se(estimates[VarianceEstimator.DIRECT], truth + inner / plan.R2)
    assert np.mean(estimates[VarianceEstimator.DIRECT]) > truth
