import numpy as np
import pytest
from scipy import stats

from app.ensemble import Ensemble, ParamMatrix
from app.exception import ConfigurationError, SingularDesignError, UnsupportedStatisticError
from app.moments import MomentProvider
from app.network import Network
from app.residual import TargetStatistic
from app.score_test import (
    DatasetStatistic,
    quantile_p_value,
    score_test_dataset,
    score_test_omnibus,
)
from app.term import Edges, Triangles, TwoStars

NETWORKS = [
    [(0, 1), (1, 2), (0, 2)],
    [(0, 1), (2, 3)],
    [(0, 1), (1, 2), (2, 3), (0, 3)],
    [(1, 3), (0, 2)],
]


def ensemble(spec, tags=None, missing=None):
    networks = [
        Network(4, edges=edges, missing=(missing or {}).get(s, []), net_id=f"h{s}")
        for s, edges in enumerate(NETWORKS)
    ]
    return Ensemble.build(networks, spec, tags=tags)


def params(ens, value=0.0):
    return ParamMatrix(np.full((ens.q, ens.p), value), term_names=ens.spec.names)


def test_quantile_p_value():
    simulated = np.arange(1.0, 100.0)
    assert quantile_p_value(simulated, 50.0) == (pytest.approx(0.5), pytest.approx(1.0))
    assert quantile_p_value(simulated, 500.0) == (1.0, 0.0)
    q, p = quantile_p_value(simulated, 10.0)
    assert q == pytest.approx(9.5 / 99)
    assert p == pytest.approx(19 / 99)
    assert quantile_p_value(np.ones(10), 1.0) == (0.5, 1.0)


def test_dataset_statistic(edges_spec):
    ens = ensemble(edges_spec, tags=[["a"], ["a"], [], []])
    triangles = DatasetStatistic(TargetStatistic("triangles", Triangles()), tag="a")
    assert triangles.name == "triangles[a]"
    assert triangles.indices(ens) == [0, 1]
    assert triangles.observed(ens) == 1.0
    density = DatasetStatistic(TargetStatistic.density())
    assert density.observed(ens) == pytest.approx(11 / 24)


def test_statistic_errors(edges_spec):
    ens = ensemble(edges_spec, tags=[["a"], [], [], []], missing={1: [(0, 3)]})
    with pytest.raises(ConfigurationError) as e_info:
        DatasetStatistic(TargetStatistic.density(), tag="b").indices(ens)
    assert str(e_info.value) == "No networks carry tag 'b' for statistic density[b]"
    with pytest.raises(UnsupportedStatisticError) as e_info:
        DatasetStatistic(TargetStatistic.density()).indices(ens)
    assert "h1" in str(e_info.value)
    assert DatasetStatistic(TargetStatistic.density(), tag="a").indices(ens) == [0]


def test_score_test_is_seeded(edges_spec):
    ens = ensemble(edges_spec)
    statistic = DatasetStatistic(TargetStatistic("triangles", Triangles()))
    first = score_test_dataset(ens, params(ens), statistic, R=200, seed=4)
    second = score_test_dataset(ens, params(ens), statistic, R=200, seed=4)
    assert first == second
    assert 0.0 <= first.p_value <= 1.0
    assert first.observed == 1.0
    assert first.to_row()["candidate"] == "plain"
    projected = score_test_dataset(ens, params(ens), statistic, R=200, seed=4, project=True)
    assert projected.to_row()["candidate"] == "projected"


def test_model_statistic_is_uninformative_after_projection(edges_spec):
    ens = ensemble(edges_spec)
    statistic = DatasetStatistic(TargetStatistic("edges", Edges()))
    report = score_test_dataset(
        ens, params(ens, -0.5), statistic, R=100, seed=1, project=True
    )
    assert report.p_value == pytest.approx(1.0)


def test_extreme_statistic_is_rejected(edges_spec):
    ens = ensemble(edges_spec)
    statistic = DatasetStatistic(TargetStatistic("edges", Edges()))
    # at theta = -4 simulated edge counts are near 0, far below the observed 11
    report = score_test_dataset(ens, params(ens, -4.0), statistic, R=200, project=False)
    assert report.quantile == 1.0
    assert report.p_value == 0.0


def test_score_test_with_partially_observed_networks(edges_spec):
    ens = ensemble(edges_spec, tags=[["full"], ["full"], [], []], missing={3: [(0, 1)]})
    statistic = DatasetStatistic(TargetStatistic("triangles", Triangles()), tag="full")
    report = score_test_dataset(ens, params(ens), statistic, R=50, provider=MomentProvider(ens))
    assert report.R == 50


def test_score_test_needs_two_draws(edges_spec):
    ens = ensemble(edges_spec)
    with pytest.raises(ConfigurationError):
        score_test_dataset(ens, params(ens), DatasetStatistic(TargetStatistic.density()), R=1)


def test_omnibus(edges_spec):
    ens = ensemble(edges_spec, tags=[["a"], ["a"], ["b"], ["b"]])
    statistics = [
        DatasetStatistic(TargetStatistic("triangles", Triangles()), tag="a"),
        DatasetStatistic(TargetStatistic("triangles", Triangles()), tag="b"),
    ]
    report = score_test_omnibus(ens, params(ens), statistics, R=300, seed=2)
    assert report.df == 2
    assert report.names == ["triangles[a]", "triangles[b]"]
    assert report.chi2 >= 0
    assert 0 <= report.p_value <= 1
    assert report.to_row()["target"] == "triangles[a]+triangles[b]"


def test_omnibus_rejects_collinear_statistics(edges_spec):
    ens = ensemble(edges_spec)
    statistics = [
        DatasetStatistic(TargetStatistic("triangles", Triangles())),
        DatasetStatistic(TargetStatistic("triangles-per-dyad", Triangles(), per_dyad=True)),
    ]
    with pytest.raises(SingularDesignError) as e_info:
        score_test_omnibus(ens, params(ens), statistics, R=100, project=False)
    assert e_info.value.names == ["triangles", "triangles-per-dyad"]
    with pytest.raises(ConfigurationError):
        score_test_omnibus(ens, params(ens), [], R=100)


def test_p_value_is_invariant_to_rescaling_the_statistic(edges_spec):
    ens = ensemble(edges_spec)
    count = DatasetStatistic(TargetStatistic("triangles", Triangles()))
    # four networks of 6 dyads: the pooled rate is the count over 24
    rate = DatasetStatistic(TargetStatistic("triangles-per-dyad", Triangles(), per_dyad=True))
    first = score_test_dataset(ens, params(ens), count, R=300, seed=8)
    second = score_test_dataset(ens, params(ens), rate, R=300, seed=8)
    assert second.observed == pytest.approx(first.observed / 24)
    assert (second.quantile, second.p_value) == (
        pytest.approx(first.quantile),
        pytest.approx(first.p_value),
    )


def bernoulli_ensemble(rng, spec, S, n=6, p=0.4, tags=None):
    networks = []
    for s in range(S):
        net = Network(n, net_id=f"h{s}")
        bits = sum(1 << d for d in range(net.dyad_count) if rng.random() < p)
        networks.append(net.with_edge_bits(bits))
    return Ensemble.build(networks, spec, tags=tags)


@pytest.mark.slow
def test_quantile_p_values_are_uniform_under_the_model(edges_spec):
    rng = np.random.default_rng(0)
    theta = np.log(0.4 / 0.6)
    statistic = DatasetStatistic(TargetStatistic("twostars", TwoStars()))
    p_values = []
    for r in range(200):
        ens = bernoulli_ensemble(rng, edges_spec, S=20)
        report = score_test_dataset(ens, params(ens, theta), statistic, R=200, seed=r)
        p_values.append(report.p_value)
    assert stats.kstest(p_values, "uniform").statistic < 0.12


@pytest.mark.slow
def test_omnibus_rejection_rate_under_the_model(edges_spec):
    rng = np.random.default_rng(1)
    theta = np.log(0.4 / 0.6)
    tags = [["a"] if s < 10 else ["b"] for s in range(20)]
    statistics = [
        DatasetStatistic(TargetStatistic("twostars", TwoStars()), tag="a"),
        DatasetStatistic(TargetStatistic("twostars", TwoStars()), tag="b"),
    ]
    rejections = 0
    for r in range(400):
        ens = bernoulli_ensemble(rng, edges_spec, S=20, tags=tags)
        report = score_test_omnibus(ens, params(ens, theta), statistics, R=200, seed=r)
        rejections += report.p_value < 0.05
    assert 0.02 <= rejections / 400 <= 0.09
