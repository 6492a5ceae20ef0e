from typing import Iterable, Sequence

import numpy as np

from app.exception import ConfigurationError
from app.network import Network
from app.term import DyadIndependentTerm, Term


class StatisticSpec:
    """
    An ordered list of terms defining the sufficient statistic g(y, x) in R^p.

    Counts are computed in integer arithmetic and widened to float64 on return.
    """

    terms: tuple[Term, ...]

    def __init__(self, terms: Iterable[Term]) -> None:
        self.terms = tuple(terms)
        if not self.terms:
            raise ConfigurationError("A statistic needs at least one term")
        names = [term.name for term in self.terms]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ConfigurationError(f"Term names must be unique, repeated: {duplicates}")

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({list(self.names)})"

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def p(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(term.name for term in self.terms)

    @property
    def dyad_independent(self) -> np.ndarray:
        return np.array([term.dyad_independent for term in self.terms], dtype=bool)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"Unknown term '{name}' (terms: {list(self.names)})")

    def check(self, net: Network) -> None:
        for term in self.terms:
            term.check(net)

    def eval_stats(self, net: Network) -> np.ndarray:
        return np.array([term.evaluate(net) for term in self.terms], dtype=np.float64)

    def change_stats(self, net: Network, i: int, j: int) -> np.ndarray:
        return np.array([term.change(net, i, j) for term in self.terms], dtype=np.float64)

    def evaluate_batch(self, net: Network, states: np.ndarray) -> np.ndarray:
        """Integer statistics for each row of a boolean (states x dyads) matrix."""
        states = np.asarray(states, dtype=bool)
        if states.ndim != 2 or states.shape[1] != net.dyad_count:
            raise ConfigurationError(
                f"State matrix of shape {states.shape} does not match {net.dyad_count} dyads"
            )
        columns = [term.evaluate_batch(net, states) for term in self.terms]
        return np.stack(columns, axis=1).astype(np.int64)

    def dyad_weights(self, net: Network) -> np.ndarray:
        """(dyads x dyad-independent terms) change statistic matrix."""
        columns = [
            term.dyad_weights(net) for term in self.terms if isinstance(term, DyadIndependentTerm)
        ]
        if not columns:
            return np.zeros((net.dyad_count, 0), dtype=np.int64)
        return np.stack(columns, axis=1)


def eval_stats(net: Network, spec: StatisticSpec) -> np.ndarray:
    return spec.eval_stats(net)


def change_stats(net: Network, dyad: Sequence[int], spec: StatisticSpec) -> np.ndarray:
    i, j = dyad
    return spec.change_stats(net, i, j)
