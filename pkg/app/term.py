import abc
import enum
import functools
from dataclasses import dataclass
from typing import Any

import numpy as np

from app.exception import ConfigurationError
from app.expression import Expression
from app.network import AttrValue, Network, dyad_endpoints, dyad_index, dyad_pairs


def _normalise(value: Any) -> AttrValue:
    """Numbers compare as floats so that YAML integers match real-valued attributes."""
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value)
    return str(value)


def _ordered_pair(first: AttrValue, second: AttrValue) -> tuple[AttrValue, AttrValue]:
    """Canonical order for an unordered category pair; numbers sort before strings."""
    low, high = sorted((first, second), key=lambda v: (isinstance(v, str), v))
    return low, high


def _node_attr(net: Network, attr: str) -> tuple[AttrValue, ...]:
    if attr not in net.node_attrs:
        raise ConfigurationError(
            f"Network '{net.net_id}' has no node attribute '{attr}' (available: {sorted(net.node_attrs)})"
        )
    return net.node_attrs[attr]


@functools.lru_cache(maxsize=None)
def _incidence(n: int) -> np.ndarray:
    """Dyad-by-node incidence matrix."""
    matrix = np.zeros((len(dyad_pairs(n)), n), dtype=np.int64)
    tails, heads = dyad_endpoints(n)
    rows = np.arange(len(tails))
    matrix[rows, tails] = 1
    matrix[rows, heads] = 1
    return matrix


@functools.lru_cache(maxsize=None)
def _triads(n: int) -> np.ndarray:
    """Dyad index triples (ij, ik, jk) for every node triple i < j < k."""
    triples = [
        (dyad_index(n, i, j), dyad_index(n, i, k), dyad_index(n, j, k))
        for i in range(n)
        for j in range(i + 1, n)
        for k in range(j + 1, n)
    ]
    return np.array(triples, dtype=np.intp).reshape(-1, 3)


class Term(abc.ABC):
    """
    A single sufficient-statistic term. Terms evaluate exact integer counts on a network,
    the exact change caused by toggling one dyad, and counts for a batch of dyad state
    vectors (used by enumeration).
    """

    name: str
    dyad_independent: bool = False

    def __init__(self, name: str | None = None) -> None:
        self.name = name or self.default_name()

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name={self.name})"

    @staticmethod
    def type_name() -> str:
        raise NotImplementedError()

    def default_name(self) -> str:
        return self.type_name()

    def check(self, net: Network) -> None:
        """Raises ConfigurationError if the network lacks anything the term references."""

    @abc.abstractmethod
    def evaluate(self, net: Network) -> int:
        raise NotImplementedError

    @abc.abstractmethod
    def change(self, net: Network, i: int, j: int) -> int:
        """g(y with dyad {i, j} toggled) - g(y)."""
        raise NotImplementedError

    @abc.abstractmethod
    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        """Counts for each row of a boolean (states x dyads) matrix."""
        raise NotImplementedError


class DyadIndependentTerm(Term, abc.ABC):
    """A term that is a weighted edge count, g(y) = sum_d w_d y_d."""

    dyad_independent = True
    _weights_cache: dict[tuple, np.ndarray]

    def __init__(self, name: str | None = None) -> None:
        super().__init__(name)
        self._weights_cache = {}

    @abc.abstractmethod
    def _dyad_weight(self, net: Network, i: int, j: int) -> int:
        raise NotImplementedError

    def dyad_weights(self, net: Network) -> np.ndarray:
        key = net.signature
        weights = self._weights_cache.get(key)
        if weights is None:
            self.check(net)
            weights = np.array(
                [self._dyad_weight(net, i, j) for i, j in dyad_pairs(net.n)], dtype=np.int64
            )
            self._weights_cache[key] = weights
        return weights

    def evaluate(self, net: Network) -> int:
        weights = self.dyad_weights(net)
        return int(sum(int(weights[d]) for d in range(net.dyad_count) if net.edge_bits >> d & 1))

    def change(self, net: Network, i: int, j: int) -> int:
        weight = int(self.dyad_weights(net)[dyad_index(net.n, i, j)])
        return -weight if net.has_edge(i, j) else weight

    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        return states.astype(np.int64) @ self.dyad_weights(net)


class Edges(DyadIndependentTerm):
    @staticmethod
    def type_name() -> str:
        return "edges"

    def _dyad_weight(self, net: Network, i: int, j: int) -> int:
        return 1

    def evaluate(self, net: Network) -> int:
        return net.edge_count

    def change(self, net: Network, i: int, j: int) -> int:
        return -1 if net.has_edge(i, j) else 1


class TwoStars(Term):
    """Sum over nodes of C(degree, 2)."""

    @staticmethod
    def type_name() -> str:
        return "twostars"

    def evaluate(self, net: Network) -> int:
        return sum(d * (d - 1) // 2 for d in net.degrees())

    def change(self, net: Network, i: int, j: int) -> int:
        if net.has_edge(i, j):
            return -(net.degree(i) - 1 + net.degree(j) - 1)
        return net.degree(i) + net.degree(j)

    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        degrees = states.astype(np.int64) @ _incidence(net.n)
        return (degrees * (degrees - 1) // 2).sum(axis=1)


class Triangles(Term):
    @staticmethod
    def type_name() -> str:
        return "triangles"

    def evaluate(self, net: Network) -> int:
        return sum(net.common_neighbors(i, j) for i, j in net.edges()) // 3

    def change(self, net: Network, i: int, j: int) -> int:
        shared = net.common_neighbors(i, j)
        return -shared if net.has_edge(i, j) else shared

    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        triads = _triads(net.n)
        if not len(triads):
            return np.zeros(len(states), dtype=np.int64)
        closed = states[:, triads[:, 0]] & states[:, triads[:, 1]] & states[:, triads[:, 2]]
        return closed.sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class NetworkCondition:
    """Holds when the network does (present) or does not contain a node with attr == value."""

    attr: str
    value: AttrValue
    present: bool = True

    def holds(self, net: Network) -> bool:
        values = _node_attr(net, self.attr)
        found = any(_normalise(v) == _normalise(self.value) for v in values)
        return found == self.present

    def describe(self) -> str:
        return f"{'with' if self.present else 'without'}.{self.attr}={self.value}"


class Mixing(DyadIndependentTerm):
    """Edges between a node in one category and a node in another (unordered pair)."""

    attr: str
    pair: tuple[AttrValue, AttrValue]
    condition: NetworkCondition | None

    def __init__(
        self,
        attr: str,
        pair: tuple[Any, Any] | list[Any],
        condition: NetworkCondition | None = None,
        name: str | None = None,
    ) -> None:
        if len(pair) != 2:
            raise ConfigurationError(f"Mixing cell needs exactly two categories, got {pair}")
        self.attr = attr
        first, second = _normalise(pair[0]), _normalise(pair[1])
        self.pair = _ordered_pair(first, second)
        self.condition = condition
        super().__init__(name)

    @staticmethod
    def type_name() -> str:
        return "mixing"

    def default_name(self) -> str:
        name = f"mix.{self.attr}.{self.pair[0]}-{self.pair[1]}"
        if self.condition:
            name += f".{self.condition.describe()}"
        return name

    def check(self, net: Network) -> None:
        _node_attr(net, self.attr)
        if self.condition:
            _node_attr(net, self.condition.attr)

    def _dyad_weight(self, net: Network, i: int, j: int) -> int:
        if self.condition and not self.condition.holds(net):
            return 0
        values = _node_attr(net, self.attr)
        return int(_ordered_pair(_normalise(values[i]), _normalise(values[j])) == self.pair)


class IncidentEdges(DyadIndependentTerm):
    """Edges with at least one endpoint whose attribute value satisfies a predicate."""

    attr: str
    predicate: Expression

    def __init__(self, attr: str, predicate: str, name: str | None = None) -> None:
        self.attr = attr
        self.predicate = Expression(predicate, {"value"})
        super().__init__(name)

    @staticmethod
    def type_name() -> str:
        return "incident_edges"

    def default_name(self) -> str:
        return f"incident.{self.attr}[{self.predicate.source}]"

    def check(self, net: Network) -> None:
        _node_attr(net, self.attr)

    def _node_satisfies(self, net: Network, i: int) -> bool:
        return bool(self.predicate.evaluate({"value": _node_attr(net, self.attr)[i]}))

    def _dyad_weight(self, net: Network, i: int, j: int) -> int:
        return int(self._node_satisfies(net, i) or self._node_satisfies(net, j))


class CustomIndicator(DyadIndependentTerm):
    """
    Edges whose endpoints satisfy a dyad predicate over the attributes of its two endpoints,
    named `a` and `b`. The predicate is made symmetric: a dyad counts if it holds for either
    orientation.
    """

    expression: Expression

    def __init__(self, expression: str, name: str | None = None) -> None:
        self.expression = Expression(expression, {"a", "b"})
        super().__init__(name)

    @staticmethod
    def type_name() -> str:
        return "indicator"

    def default_name(self) -> str:
        return f"indicator[{self.expression.source}]"

    def check(self, net: Network) -> None:
        for attr in self.expression.attributes():
            _node_attr(net, attr)

    def _node_namespace(self, net: Network, i: int) -> dict[str, AttrValue]:
        return {attr: values[i] for attr, values in net.node_attrs.items()}

    def _dyad_weight(self, net: Network, i: int, j: int) -> int:
        a, b = self._node_namespace(net, i), self._node_namespace(net, j)
        return int(
            bool(self.expression.evaluate({"a": a, "b": b}))
            or bool(self.expression.evaluate({"a": b, "b": a}))
        )


class TermType(enum.Enum):
    EDGES = Edges
    TWOSTARS = TwoStars
    TRIANGLES = Triangles
    MIXING = Mixing
    INCIDENT_EDGES = IncidentEdges
    INDICATOR = CustomIndicator

    def __str__(self) -> str:
        return self.name.lower()


class TermFactory:
    @staticmethod
    def create_term(term_type: TermType, **kwargs: Any) -> Term:
        try:
            return term_type.value(**kwargs)  # type: ignore[no-any-return]
        except TypeError as e:
            raise ConfigurationError(f"Invalid arguments for {term_type} term: {e}")


def valid_term_type(term_type: str) -> TermType:
    try:
        return TermType[term_type.upper()]
    except KeyError:
        raise ConfigurationError(
            f"Invalid term type: {term_type} (expected one of {[str(t) for t in TermType]})"
        )
