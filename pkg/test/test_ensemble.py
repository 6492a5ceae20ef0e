import math

import numpy as np
import pytest

from app.ensemble import (
    Ensemble,
    NetworkCovariates,
    ParamMatrix,
    aggregate_suffstat,
    covariate_value,
    design_matrix,
    theta_for,
)
from app.exception import ConfigurationError
from app.network import Network
from app.statistic import StatisticSpec
from app.term import Mixing


def test_theta_for():
    B = ParamMatrix([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]])
    np.testing.assert_allclose(theta_for(B, np.array([1.0, 2.0])), [2.0, 0.0, 3.0])
    with pytest.raises(ConfigurationError):
        theta_for(B, np.array([1.0]))


def test_offset_is_added_and_mask_zeroes():
    B = ParamMatrix(
        [[1.0, 2.0], [3.0, 4.0]],
        mask=[[True, False], [True, True]],
        offset=[[0.0, -7.0], [0.0, 0.0]],
    )
    assert B.coef[0, 1] == 0.0
    np.testing.assert_allclose(theta_for(B, np.array([1.0, 1.0])), [4.0, -3.0])
    assert B.k == 3
    assert list(B.free_indices) == [0, 1, 3]


def test_vec_is_column_major():
    B = ParamMatrix(
        [[1.0, 2.0], [3.0, 4.0]], covariate_names=["1", "z"], term_names=["edges", "triangles"]
    )
    assert list(B.vec_free()) == [1.0, 3.0, 2.0, 4.0]
    assert B.labels() == ["edges:1", "edges:z", "triangles:1", "triangles:z"]
    np.testing.assert_array_equal(B.with_free(B.vec_free()).coef, B.coef)
    with pytest.raises(ConfigurationError):
        B.with_free(np.zeros(3))


def test_design_matrix_is_kronecker_lift():
    x = np.array([1.0, 2.5])
    B = ParamMatrix(np.arange(6.0).reshape(2, 3))
    Z = design_matrix(x, 3)
    assert Z.shape == (3, 6)
    np.testing.assert_allclose(Z @ B.coef.flatten(order="F"), theta_for(B, x))


def test_covariate_values():
    net = Network(8)
    assert covariate_value("1", net, {}, ()) == 1.0
    assert covariate_value("n", net, {}, ()) == 8.0
    assert covariate_value("log(n)", net, {}, (), size_reference=4) == pytest.approx(math.log(2))
    log2 = covariate_value("log2(n)", net, {}, (), size_reference=4)
    assert log2 == pytest.approx(math.log(2) ** 2)
    assert covariate_value("tag:rural", net, {}, ("rural",)) == 1.0
    assert covariate_value("tag:rural", net, {}, ("urban",)) == 0.0
    assert covariate_value("income", net, {"income": 3}, ()) == 3.0
    with pytest.raises(ConfigurationError) as e_info:
        covariate_value("income", Network(3, net_id="h1"), {}, ())
    assert str(e_info.value) == "Network 'h1' has no covariate 'income'"


def test_network_covariates_must_be_unique():
    with pytest.raises(ConfigurationError):
        NetworkCovariates(names=("1", "1"), values=np.ones(2))


def test_build_resolves_covariates(edges_spec):
    networks = [Network(3, net_id="a"), Network(5, net_id="b")]
    ens = Ensemble.build(
        networks,
        edges_spec,
        covariate_names=["1", "n", "tag:x"],
        tags=[["x"], []],
    )
    np.testing.assert_allclose(ens.covariates, [[1, 3, 1], [1, 5, 0]])
    assert (ens.S, ens.p, ens.q) == (2, 1, 3)
    assert ens.has_tag(0, "x")
    assert ens.group_label(1, ["x"]) == "none"


def test_lift_matches_design(triad_spec):
    networks = [Network(3, edges=[(0, 1)]), Network(4, edges=[(0, 1), (1, 2)])]
    ens = Ensemble.build(networks, triad_spec, covariate_names=["1", "n"])
    B = ParamMatrix(np.zeros((2, 3)), mask=[[True, True, True], [True, False, True]])
    M = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 1.0]])
    for s in range(ens.S):
        Z = ens.design(B, s)
        g = ens.spec.eval_stats(networks[s])
        np.testing.assert_allclose(ens.lift_vector(B, s, g), Z.T @ g)
        np.testing.assert_allclose(ens.lift_matrix(B, s, M), Z.T @ M @ Z)
    total = aggregate_suffstat(ens, networks, B.mask)
    assert total.shape == (5,)
    np.testing.assert_allclose(total[:2], [1 + 2, 3 * 1 + 4 * 2])
    full = aggregate_suffstat(ens, networks)
    assert full.shape == (6,)
    np.testing.assert_allclose(full[B.free_indices], total)


def test_group_label(edges_spec):
    ens = Ensemble.build(
        [Network(3), Network(3), Network(3)],
        edges_spec,
        tags=[["urban", "large"], ["large"], []],
    )
    assert ens.group_label(0, ["urban", "large"]) == "urban+large"
    assert ens.group_label(1, ["urban", "large"]) == "large"
    assert ens.group_label(2, ["urban", "large"]) == "none"


def test_subset_and_observed_dyads(edges_spec):
    networks = [Network(3, net_id="a", missing=[(0, 1)]), Network(4, net_id="b")]
    ens = Ensemble.build(networks, edges_spec, tags=[["t"], []])
    assert ens.observed_dyad_count() == 2 + 6
    sub = ens.subset([1])
    assert sub.networks[0].net_id == "b"
    assert sub.tags == [()]


def test_ensemble_checks_term_attributes():
    spec = StatisticSpec([Mixing("group", ("A", "B"))])
    with pytest.raises(ConfigurationError):
        Ensemble.build([Network(3)], spec)
