import numpy as np
import pytest

from app.enumeration import enumerate_moments
from app.network import Network
from app.sampler import MetropolisSampler, batch_means_mcse, mcmc_sample

THETA = np.array([-0.5, 0.1, 0.2])


def assert_close_to_exact(draws, mu):
    mcse = batch_means_mcse(draws)
    assert np.all(np.abs(draws.mean(axis=0) - mu) <= 4 * mcse + 1e-9)


def test_unconditional_chain_matches_enumeration(triad_spec):
    net = Network(4, edges=[(0, 1)])
    draws = mcmc_sample(net, triad_spec, THETA, conditional=False, R=4000, seed=11)
    exact = enumerate_moments(net, triad_spec, THETA, conditional=False)
    assert_close_to_exact(draws, exact.mu)


def test_conditional_chain_matches_enumeration(triad_spec):
    net = Network(4, edges=[(0, 1), (2, 3)], missing=[(0, 2), (1, 3), (1, 2)])
    draws = mcmc_sample(net, triad_spec, THETA, conditional=True, R=3000, seed=12)
    exact = enumerate_moments(net, triad_spec, THETA, conditional=True)
    assert_close_to_exact(draws, exact.mu)


def test_conditional_chain_leaves_observed_dyads(triad_spec):
    net = Network(4, edges=[(0, 1)], missing=[(2, 3), (0, 3)])
    sampler = MetropolisSampler(net, triad_spec, THETA, True, np.random.default_rng(1))
    draws = sampler.run(200)
    observed = net.observed_bits()
    assert all(bits & ~net.missing_bits == observed for bits in draws.bits)
    assert 0 < draws.acceptance_rate <= 1
    assert net.edge_count == 1


def test_chain_is_seeded(triad_spec):
    net = Network(4)
    first = mcmc_sample(net, triad_spec, THETA, conditional=False, R=50, seed=99)
    second = mcmc_sample(net, triad_spec, THETA, conditional=False, R=50, seed=99)
    np.testing.assert_array_equal(first, second)


def test_no_free_dyads(triad_spec):
    net = Network(3, edges=[(0, 1), (1, 2)])
    draws = mcmc_sample(net, triad_spec, THETA, conditional=True, R=5, seed=0)
    np.testing.assert_array_equal(draws, np.tile([2, 1, 0], (5, 1)))


def test_draw_count_must_be_positive(triad_spec):
    sampler = MetropolisSampler(Network(3), triad_spec, THETA, False, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sampler.run(0)


def test_batch_means_mcse():
    rng = np.random.default_rng(0)
    draws = rng.normal(size=(10_000, 2))
    np.testing.assert_allclose(batch_means_mcse(draws), [0.01, 0.01], rtol=0.3)
    assert list(batch_means_mcse(np.ones((1, 3)))) == [0, 0, 0]
