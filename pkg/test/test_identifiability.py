import numpy as np
import pytest

from app.constant import Identifiability
from app.ensemble import Ensemble, ParamMatrix
from app.identifiability import check_identifiability, near_null_directions
from app.network import Network
from app.statistic import StatisticSpec
from app.term import Edges, Mixing

GROUPS = {"group": ["A", "A", "B", "B"]}


def zero_params(ens):
    return ParamMatrix(
        np.zeros((ens.q, ens.p)), covariate_names=ens.covariate_names, term_names=ens.spec.names
    )


def mixing_terms():
    return [Mixing("group", ("A", "A")), Mixing("group", ("A", "B")), Mixing("group", ("B", "B"))]


def test_edges_is_the_sum_of_mixing_cells():
    spec = StatisticSpec([Edges(), *mixing_terms()])
    ens = Ensemble.build([Network(4, edges=[(0, 1), (1, 2)], node_attrs=GROUPS)], spec)
    report = check_identifiability(ens, zero_params(ens))
    assert report.classification == Identifiability.COMPLETE_DATA_SINGULAR
    assert not report.identifiable
    [direction] = report.null_directions
    assert direction.loadings == pytest.approx(
        {
            "edges:1": 1.0,
            "mix.group.A-A:1": -1.0,
            "mix.group.A-B:1": -1.0,
            "mix.group.B-B:1": -1.0,
        }
    )
    assert "complete-data singular" in report.describe()


def test_mixing_cells_alone_are_identifiable():
    spec = StatisticSpec(mixing_terms())
    ens = Ensemble.build([Network(4, edges=[(0, 1), (1, 2)], node_attrs=GROUPS)], spec)
    report = check_identifiability(ens, zero_params(ens))
    assert report.identifiable
    # independent binomial counts over 1, 4 and 1 dyads
    assert report.complete_det == pytest.approx(0.25 * 1.0 * 0.25)
    assert report.fisher_det == pytest.approx(report.complete_det)


def test_missingness_induced(triad_spec, three_node_missing):
    ens = Ensemble.build([three_node_missing], triad_spec)
    report = check_identifiability(ens, zero_params(ens))
    assert report.classification == Identifiability.MISSINGNESS_INDUCED
    assert report.complete_det == pytest.approx(9 / 4096)
    assert abs(report.fisher_det) < 1e-12
    [direction] = report.null_directions
    assert direction.loadings == pytest.approx(
        {"edges:1": 0.25, "twostars:1": -0.5, "triangles:1": 1.0}
    )
    summary = report.to_dict()
    assert summary["classification"] == "missingness-induced"
    assert len(summary["null_directions"]) == 1


def test_adding_a_fully_observed_network_restores_identifiability(triad_spec, three_node_missing):
    full = Network(3, edges=[(0, 1)], net_id="full")
    ens = Ensemble.build([three_node_missing, full], triad_spec)
    assert check_identifiability(ens, zero_params(ens)).identifiable


def test_near_null_directions():
    eigenvalues, directions = near_null_directions(np.diag([2.0, 1e-12]), ["a", "b"])
    np.testing.assert_allclose(eigenvalues, [1e-12, 2.0])
    assert [d.loadings for d in directions] == [{"b": 1.0}]
    _, directions = near_null_directions(np.diag([2.0, 1.0]), ["a", "b"])
    assert directions == []


def test_missing_within_group_dyads_tie_edges_to_the_mixing_cells():
    groups = {"group": ["A", "A", "A", "B", "B", "B"]}
    missing = [(3, 4), (3, 5), (4, 5)]
    net = Network(6, edges=[(0, 1), (0, 3), (1, 4), (2, 5)], missing=missing, node_attrs=groups)
    spec = StatisticSpec([Edges(), Mixing("group", ("A", "A")), Mixing("group", ("A", "B"))])
    ens = Ensemble.build([net], spec)
    theta = np.array([0.3, -0.7, 0.5])
    B = ParamMatrix(
        theta.reshape(1, 3), covariate_names=ens.covariate_names, term_names=ens.spec.names
    )
    report = check_identifiability(ens, B)
    fisher = report.fisher_information
    np.testing.assert_allclose(fisher[:, 0], fisher[:, 1] + fisher[:, 2], atol=1e-10)
    assert report.classification == Identifiability.MISSINGNESS_INDUCED
    [direction] = report.null_directions
    assert direction.loadings == pytest.approx(
        {"edges:1": 1.0, "mix.group.A-A:1": -1.0, "mix.group.A-B:1": -1.0}
    )

    def binomial_variance(dyads, logit):
        p = 1 / (1 + np.exp(-logit))
        return dyads * p * (1 - p)

    sigma_aa = binomial_variance(3, theta[0] + theta[1])
    sigma_ab = binomial_variance(9, theta[0] + theta[2])
    sigma_bb = binomial_variance(3, theta[0])
    assert report.complete_det == pytest.approx(sigma_aa * sigma_ab * sigma_bb, abs=1e-10)
