import pytest

from app.network import Network
from app.statistic import StatisticSpec
from app.term import Edges, Triangles, TwoStars


@pytest.fixture
def triad_spec() -> StatisticSpec:
    """edges, 2-stars, triangles"""
    return StatisticSpec([Edges(), TwoStars(), Triangles()])


@pytest.fixture
def edges_spec() -> StatisticSpec:
    return StatisticSpec([Edges()])


@pytest.fixture
def three_node_missing() -> Network:
    """Both ego dyads present, the alter-alter dyad missing."""
    return Network(3, edges=[(0, 1), (0, 2)], missing=[(1, 2)], net_id="ego")
