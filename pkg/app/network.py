import functools
import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from app.constant import DEFAULT_MAX_NODES, DyadState
from app.exception import ConfigurationError, StructuralError

AttrValue = str | float


def dyad_count(n: int) -> int:
    return n * (n - 1) // 2


@functools.lru_cache(maxsize=None)
def dyad_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """All unordered pairs of distinct nodes, in row-major upper-triangle order."""
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


@functools.lru_cache(maxsize=None)
def dyad_endpoints(n: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = dyad_pairs(n)
    tails = np.array([i for i, _ in pairs], dtype=np.intp)
    heads = np.array([j for _, j in pairs], dtype=np.intp)
    return tails, heads


def dyad_index(n: int, i: int, j: int) -> int:
    """Index of the unordered pair {i, j} in row-major upper-triangle order."""
    if i == j:
        raise StructuralError(f"Dyad ({i}, {j}) is a self-loop")
    if not (0 <= i < n and 0 <= j < n):
        raise StructuralError(f"Dyad ({i}, {j}) is out of range for a network of {n} nodes")
    if i > j:
        i, j = j, i
    return i * n - i * (i + 1) // 2 + (j - i - 1)


class DyadToggle(NamedTuple):
    """The state needed to undo a single-dyad toggle."""

    dyad: int
    i: int
    j: int
    added: bool


@dataclass(frozen=True)
class DyadMaskSummary:
    free_dyads: tuple[tuple[int, int], ...]
    fixed_dyads: tuple[tuple[int, int], ...]

    @property
    def free_count(self) -> int:
        return len(self.free_dyads)


class Network:
    """
    A small undirected network with node attributes and a per-dyad observation mask.

    Adjacency is held twice, as a dyad bitset (bit d set when dyad d is present, dyads in
    row-major upper-triangle order) and as per-node neighbour bitmasks with degree counts. The
    two are kept in sync by toggle. Missing dyads carry an imputed value that samplers may
    change; toggling an observed dyad changes its observed value so that the mask always agrees
    with the adjacency.

    Loaded networks are treated as immutable: samplers work on copies.
    """

    n: int
    net_id: str
    node_attrs: dict[str, tuple[AttrValue, ...]]
    _bits: int
    _neighbors: list[int]
    _degrees: list[int]
    _missing: int
    _signature: tuple | None

    def __init__(
        self,
        n: int,
        edges: Iterable[tuple[int, int]] = (),
        missing: Iterable[tuple[int, int]] = (),
        node_attrs: Mapping[str, Sequence[AttrValue]] | None = None,
        net_id: str = "",
        max_nodes: int = DEFAULT_MAX_NODES,
    ) -> None:
        if n < 1:
            raise StructuralError(f"Network must have at least one node, got {n}")
        if n > max_nodes:
            raise StructuralError(f"Network of {n} nodes exceeds the node limit of {max_nodes}")
        self.n = n
        self.net_id = net_id
        self.node_attrs = {}
        for name, values in (node_attrs or {}).items():
            if len(values) != n:
                raise ConfigurationError(
                    f"Attribute '{name}' has {len(values)} values for a network of {n} nodes"
                )
            self.node_attrs[name] = tuple(values)
        self._bits = 0
        self._neighbors = [0] * n
        self._degrees = [0] * n
        self._missing = 0
        self._signature = None
        for i, j in missing:
            self._missing |= 1 << dyad_index(n, i, j)
        for i, j in edges:
            if not self.has_edge(i, j):
                self.toggle(i, j)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(net_id={self.net_id!r}, n={self.n}, edges={self.edge_count}, free={self.free_count})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.n == other.n
            and self.net_id == other.net_id
            and self._bits == other._bits
            and self._missing == other._missing
            and self.node_attrs == other.node_attrs
        )

    def __hash__(self) -> int:
        return hash((self.n, self.net_id, self._bits, self._missing))

    # Structure

    @property
    def dyad_count(self) -> int:
        return dyad_count(self.n)

    @property
    def edge_bits(self) -> int:
        return self._bits

    @property
    def missing_bits(self) -> int:
        return self._missing

    @property
    def edge_count(self) -> int:
        return self._bits.bit_count()

    @property
    def density(self) -> float:
        return self.edge_count / self.dyad_count if self.dyad_count else 0.0

    @property
    def free_count(self) -> int:
        return self._missing.bit_count()

    @property
    def is_fully_observed(self) -> bool:
        return self._missing == 0

    @property
    def signature(self) -> tuple:
        """Hashable description of everything except adjacency and mask."""
        if self._signature is None:
            self._signature = (self.n, tuple(sorted(self.node_attrs.items())))
        return self._signature

    def edges(self) -> list[tuple[int, int]]:
        pairs = dyad_pairs(self.n)
        return [pairs[d] for d in range(self.dyad_count) if self._bits >> d & 1]

    def missing_dyads(self) -> list[tuple[int, int]]:
        pairs = dyad_pairs(self.n)
        return [pairs[d] for d in range(self.dyad_count) if self._missing >> d & 1]

    def free_dyad_indices(self) -> list[int]:
        return [d for d in range(self.dyad_count) if self._missing >> d & 1]

    def mask(self) -> np.ndarray:
        """Per-dyad DyadState codes."""
        states = np.empty(self.dyad_count, dtype=np.uint8)
        for d in range(self.dyad_count):
            if self._missing >> d & 1:
                states[d] = DyadState.MISSING
            elif self._bits >> d & 1:
                states[d] = DyadState.OBSERVED_PRESENT
            else:
                states[d] = DyadState.OBSERVED_ABSENT
        return states

    def mask_summary(self) -> DyadMaskSummary:
        pairs = dyad_pairs(self.n)
        free = tuple(pairs[d] for d in range(self.dyad_count) if self._missing >> d & 1)
        fixed = tuple(pairs[d] for d in range(self.dyad_count) if not self._missing >> d & 1)
        return DyadMaskSummary(free_dyads=free, fixed_dyads=fixed)

    def state_vector(self) -> np.ndarray:
        return bits_to_states(self._bits, self.dyad_count)

    def observed_bits(self) -> int:
        """Adjacency restricted to observed dyads."""
        return self._bits & ~self._missing

    def fixed_digest(self) -> str:
        """Digest of the observed dyads; conditional samplers must leave it unchanged."""
        payload = f"{self.n}:{self._missing}:{self.observed_bits()}".encode()
        return hashlib.blake2b(payload, digest_size=16).hexdigest()

    # Queries

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise StructuralError(f"Node {i} is out of range for a network of {self.n} nodes")

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self._bits >> dyad_index(self.n, i, j) & 1)

    def is_missing(self, i: int, j: int) -> bool:
        return bool(self._missing >> dyad_index(self.n, i, j) & 1)

    def degree(self, i: int) -> int:
        self._check_node(i)
        return self._degrees[i]

    def degrees(self) -> list[int]:
        return list(self._degrees)

    def common_neighbors(self, i: int, j: int) -> int:
        self._check_node(i)
        self._check_node(j)
        if i == j:
            raise StructuralError(f"Common neighbours need two distinct nodes, got ({i}, {j})")
        return (self._neighbors[i] & self._neighbors[j]).bit_count()

    def neighbor_mask(self, i: int) -> int:
        return self._neighbors[i]

    # Mutation

    def toggle(self, i: int, j: int) -> DyadToggle:
        """Flips dyad {i, j}, keeping the degree and neighbour caches in sync."""
        d = dyad_index(self.n, i, j)
        self._bits ^= 1 << d
        self._neighbors[i] ^= 1 << j
        self._neighbors[j] ^= 1 << i
        added = bool(self._bits >> d & 1)
        step = 1 if added else -1
        self._degrees[i] += step
        self._degrees[j] += step
        return DyadToggle(dyad=d, i=min(i, j), j=max(i, j), added=added)

    def undo(self, change: DyadToggle) -> None:
        self.toggle(change.i, change.j)

    def set_edge_bits(self, bits: int) -> None:
        """Replaces the whole adjacency with the given dyad bitset."""
        bits = int(bits)
        if bits < 0 or bits >> self.dyad_count:
            raise StructuralError(
                f"Edge bitset {bits} does not fit a network of {self.n} nodes"
            )
        pairs = dyad_pairs(self.n)
        diff = self._bits ^ bits
        d = 0
        while diff:
            if diff & 1:
                self.toggle(*pairs[d])
            diff >>= 1
            d += 1

    def copy(self) -> "Network":
        clone = Network.__new__(Network)
        clone.n = self.n
        clone.net_id = self.net_id
        clone.node_attrs = self.node_attrs
        clone._bits = self._bits
        clone._neighbors = list(self._neighbors)
        clone._degrees = list(self._degrees)
        clone._missing = self._missing
        clone._signature = self._signature
        return clone

    def with_missing_bits(self, missing: int) -> "Network":
        """A copy with the given dyads marked missing and all others observed."""
        clone = self.copy()
        clone._missing = missing
        return clone

    def completed(self) -> "Network":
        """A copy in which the current imputation is taken as fully observed."""
        return self.with_missing_bits(0)

    def with_edge_bits(self, bits: int) -> "Network":
        clone = self.copy()
        clone.set_edge_bits(bits)
        return clone


def bits_to_states(bits: int, dyads: int) -> np.ndarray:
    return np.array([bits >> d & 1 for d in range(dyads)], dtype=bool)


def states_to_bits(states: np.ndarray) -> int:
    return sum(1 << int(d) for d in np.flatnonzero(states))


def egocentric_missing(n: int, ego: int) -> list[tuple[int, int]]:
    """All dyads not incident on the ego: the ego reports its own ties only."""
    if not 0 <= ego < n:
        raise StructuralError(f"Ego {ego} is out of range for a network of {n} nodes")
    return [(i, j) for i, j in dyad_pairs(n) if ego not in (i, j)]
