import math

import numpy as np
import pytest

from app.constant import InformationMode
from app.ensemble import Ensemble, ParamMatrix
from app.enumeration import Enumerator
from app.estimation import (
    FitOptions,
    FitResult,
    boundary_coordinates,
    fit_mle,
    loglik_at,
    mple,
    significance_stars,
    standard_errors,
)
from app.exception import InfiniteMLEError, NonconvergenceError
from app.moments import MomentProvider, SamplingOptions
from app.network import Network

TRIAD_NETWORKS = [
    [(0, 1), (1, 2), (0, 2)],
    [(0, 1), (2, 3)],
    [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)],
    [(1, 3)],
]


def zero_params(ens):
    return ParamMatrix(
        np.zeros((ens.q, ens.p)), covariate_names=ens.covariate_names, term_names=ens.spec.names
    )


def triad_ensemble(spec):
    networks = [Network(4, edges=edges, net_id=f"h{s}") for s, edges in enumerate(TRIAD_NETWORKS)]
    return Ensemble.build(networks, spec)


def bernoulli_ensemble(spec):
    networks = [
        Network(4, edges=[(0, 1), (2, 3)], net_id="a"),
        Network(4, edges=[(0, 1), (1, 2), (2, 3)], net_id="b"),
        Network(4, edges=[(0, 3)], net_id="c"),
    ]
    return Ensemble.build(networks, spec)


def test_bernoulli_mle(edges_spec):
    ens = bernoulli_ensemble(edges_spec)
    result = fit_mle(ens, zero_params(ens))
    assert result.converged and result.exact
    assert result.vec_B_hat[0] == pytest.approx(-math.log(2), abs=1e-7)
    # 18 dyads at p = 1/3
    assert result.info[0, 0] == pytest.approx(4.0)
    assert result.se[0] == pytest.approx(0.5)
    assert result.loglik == pytest.approx(6 * math.log(1 / 3) + 12 * math.log(2 / 3))
    assert result.aic == pytest.approx(-2 * result.loglik + 2)
    assert result.bic == pytest.approx(-2 * result.loglik + math.log(18))
    assert result.loglik_mcse == 0.0


def test_bernoulli_mple_is_the_mle(edges_spec):
    ens = bernoulli_ensemble(edges_spec)
    start = mple(ens, zero_params(ens))
    assert start.vec_free()[0] == pytest.approx(-math.log(2), abs=1e-4)


def test_missing_dyads_are_ignored_by_bernoulli_mle(edges_spec):
    net = Network(4, edges=[(0, 1), (0, 2), (1, 3)], missing=[(1, 3)], net_id="ego")
    ens = Ensemble.build([net], edges_spec)
    result = fit_mle(ens, zero_params(ens))
    assert result.vec_B_hat[0] == pytest.approx(math.log(2 / 3), abs=1e-7)
    assert result.observed_dyads == 5


def test_mle_matches_moments(triad_spec):
    ens = triad_ensemble(triad_spec)
    result = fit_mle(ens, zero_params(ens))
    thetas = ens.thetas(result.B)
    enumerator = Enumerator(triad_spec)
    expected = sum(
        enumerator.moments(net, thetas[s], False).mu for s, net in enumerate(ens.networks)
    )
    observed = sum(triad_spec.eval_stats(net) for net in ens.networks)
    np.testing.assert_allclose(expected, observed, atol=1e-6)
    assert np.all(np.isfinite(result.se))
    assert result.iterations >= 1


def test_coefficient_table(triad_spec):
    ens = triad_ensemble(triad_spec)
    result = fit_mle(ens, zero_params(ens))
    rows = result.coefficient_table()
    assert [row.label for row in rows] == ["edges:1", "twostars:1", "triangles:1"]
    for row in rows:
        assert row.z == pytest.approx(row.estimate / row.se)
        assert 0 <= row.p_value <= 1


def test_boundary_is_rejected(edges_spec):
    ens = Ensemble.build([Network(4, net_id="empty")], edges_spec)
    assert boundary_coordinates(ens, zero_params(ens)) == [("edges:1", "-inf")]
    with pytest.raises(InfiniteMLEError) as e_info:
        fit_mle(ens, zero_params(ens))
    assert e_info.value.coordinates == [("edges:1", "-inf")]
    assert "edges:1 (-inf)" in str(e_info.value)


def test_boundary_with_missing_dyads(triad_spec):
    complete = [(i, j) for i in range(4) for j in range(i + 1, 4) if (i, j) != (2, 3)]
    net = Network(4, edges=complete, missing=[(2, 3)])
    ens = Ensemble.build([net], triad_spec)
    # the missing dyad could still be absent, so nothing is pinned at the maximum
    assert boundary_coordinates(ens, zero_params(ens)) == []
    net = Network(4, missing=[(2, 3)])
    ens = Ensemble.build([net], triad_spec)
    # filling the missing dyad gives one edge but no 2-star or triangle
    assert boundary_coordinates(ens, zero_params(ens)) == [
        ("twostars:1", "-inf"),
        ("triangles:1", "-inf"),
    ]


def test_nonconvergence(triad_spec):
    ens = triad_ensemble(triad_spec)
    with pytest.raises(NonconvergenceError) as e_info:
        fit_mle(ens, zero_params(ens), FitOptions(max_iterations=1))
    assert e_info.value.iterations == 1
    assert e_info.value.last_iterate.shape == (3,)


def test_loglik_at_zero(triad_spec, three_node_missing):
    ens = Ensemble.build([Network(4, edges=[(0, 1)])], triad_spec)
    assert loglik_at(ens, zero_params(ens)) == (pytest.approx(-6 * math.log(2)), 0.0)
    ens = Ensemble.build([three_node_missing], triad_spec)
    assert loglik_at(ens, zero_params(ens))[0] == pytest.approx(-2 * math.log(2))


def test_simulated_loglik_at_zero(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    options = SamplingOptions(force_mcmc=True, mcmc_sample_size=200)
    loglik, mcse = loglik_at(ens, zero_params(ens), MomentProvider(ens, options))
    assert loglik == pytest.approx(-2 * math.log(2))
    assert mcse == 0.0


def test_result_round_trip(edges_spec):
    ens = bernoulli_ensemble(edges_spec)
    result = fit_mle(ens, zero_params(ens), FitOptions(information=InformationMode.OBSERVED))
    restored = FitResult.from_dict(result.to_dict())
    np.testing.assert_allclose(restored.vec_B_hat, result.vec_B_hat)
    assert restored.information_mode == InformationMode.OBSERVED
    assert restored.aic == pytest.approx(result.aic)
    assert restored.B.labels() == ["edges:1"]


def test_standard_errors():
    np.testing.assert_allclose(standard_errors(np.diag([4.0, 0.25])), [0.5, 2.0])
    assert np.isnan(standard_errors(np.ones((2, 2)))).all()


def test_significance_stars():
    assert significance_stars(0.0005) == "***"
    assert significance_stars(0.01) == "**"
    assert significance_stars(0.03) == "*"
    assert significance_stars(0.2) == ""


@pytest.mark.slow
def test_monte_carlo_fit_agrees_with_exact(triad_spec):
    ens = triad_ensemble(triad_spec)
    exact = fit_mle(ens, zero_params(ens))
    sampling = SamplingOptions(force_mcmc=True, mcmc_sample_size=4000, fisher_outer=200)
    simulated = fit_mle(ens, zero_params(ens), FitOptions(sampling=sampling, seed=17))
    assert not simulated.exact
    assert np.all(np.abs(simulated.vec_B_hat - exact.vec_B_hat) <= exact.se)
    assert simulated.loglik == pytest.approx(exact.loglik, abs=4 * simulated.loglik_mcse + 0.05)
