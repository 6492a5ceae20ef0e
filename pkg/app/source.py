import abc
import json
import re
from typing import Any, Iterable, Iterator, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.config import ModelConfig
from app.constant import DEFAULT_MAX_NODES
from app.ensemble import Ensemble
from app.exception import SchemaError, StructuralError
from app.log import logger
from app.network import Network, egocentric_missing

EGOCENTRIC = re.compile(r"^egocentric:(\d+)$")

AttrValue = bool | int | float | str


class NetworkRecord(BaseModel):
    """One line of an ensemble file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    net_id: str = Field(min_length=1)
    n: int = Field(ge=1)
    node_attrs: dict[str, list[AttrValue]] = Field(default_factory=dict)
    edges: list[tuple[int, int]] = Field(default_factory=list)
    missing_dyads: list[tuple[int, int]] | str = Field(default_factory=list)
    net_covariates: dict[str, float] = Field(default_factory=dict)
    tags: list[str] = Field(default_factory=list)

    @field_validator("missing_dyads")
    @classmethod
    def _egocentric_form(cls, value: list[tuple[int, int]] | str) -> list[tuple[int, int]] | str:
        if isinstance(value, str) and not EGOCENTRIC.match(value):
            raise ValueError(f"expected a list of dyads or 'egocentric:<node>', got '{value}'")
        return value

    def _dyads(self, dyads: Iterable[tuple[int, int]], kind: str) -> list[tuple[int, int]]:
        normalised = set()
        for i, j in dyads:
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise StructuralError(
                    f"Network '{self.net_id}' lists invalid {kind} dyad ({i}, {j}) for {self.n} nodes"
                )
            normalised.add((min(i, j), max(i, j)))
        return sorted(normalised)

    def missing(self) -> list[tuple[int, int]]:
        if isinstance(self.missing_dyads, str):
            match = EGOCENTRIC.match(self.missing_dyads)
            assert match is not None
            return egocentric_missing(self.n, int(match.group(1)))
        return self._dyads(self.missing_dyads, "missing")

    def to_network(self, max_nodes: int = DEFAULT_MAX_NODES) -> Network:
        edges = self._dyads(self.edges, "edge")
        missing = self.missing()
        overlap = set(edges) & set(missing)
        if overlap:
            raise SchemaError(
                f"Network '{self.net_id}' lists dyads both as edges and missing: {sorted(overlap)}"
            )
        return Network(
            n=self.n,
            edges=edges,
            missing=missing,
            node_attrs=self.node_attrs,
            net_id=self.net_id,
            max_nodes=max_nodes,
        )


class Source(abc.ABC):
    """A source of network records."""

    @abc.abstractmethod
    def get_records(self) -> Iterator[tuple[int, NetworkRecord]]:
        """Yields (line number, record) pairs in file order."""
        raise NotImplementedError


class JsonLinesSource(Source):
    """Source class for ensemble files with one JSON network record per line."""

    file_path: str

    def __init__(self, file_path: str) -> None:
        self.file_path = file_path

    def get_records(self) -> Iterator[tuple[int, NetworkRecord]]:
        try:
            ensemble_file = open(self.file_path, mode="r", encoding="utf-8")
        except FileNotFoundError:
            raise SchemaError(f"Ensemble file not found at {self.file_path}") from None
        with ensemble_file:
            for line_number, line in enumerate(ensemble_file, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise SchemaError(f"invalid JSON: {e.msg}", line_number) from None
                try:
                    yield line_number, NetworkRecord.model_validate(data)
                except ValidationError as e:
                    raise SchemaError(f"invalid network record: {e}", line_number) from None


def read_records(
    source: Source, max_nodes: int = DEFAULT_MAX_NODES
) -> tuple[list[Network], list[NetworkRecord]]:
    """Networks and their records, rejecting duplicate ids and structural errors by line."""
    networks: list[Network] = []
    records: list[NetworkRecord] = []
    seen: dict[str, int] = {}
    for line_number, record in source.get_records():
        if record.net_id in seen:
            raise SchemaError(
                f"duplicate net_id '{record.net_id}' (first on line {seen[record.net_id]})",
                line_number,
            )
        seen[record.net_id] = line_number
        try:
            networks.append(record.to_network(max_nodes))
        except SchemaError as e:
            raise SchemaError(str(e), line_number) from None
        except StructuralError as e:
            raise StructuralError(f"line {line_number}: {e}") from None
        records.append(record)
    if not networks:
        raise SchemaError(f"Ensemble file {getattr(source, 'file_path', '')} has no records")
    return networks, records


def load_ensemble(path: str, config: ModelConfig) -> Ensemble:
    """Reads and validates an ensemble file against a model configuration."""
    networks, records = read_records(JsonLinesSource(path), config.estimation.max_nodes)
    spec = config.spec()
    ensemble = Ensemble.build(
        networks,
        spec,
        covariate_names=config.covariate_names(),
        net_covariates=[record.net_covariates for record in records],
        tags=[record.tags for record in records],
        size_reference=config.size_reference,
    )
    logger.info(
        f"Loaded {ensemble.S} networks from {path} "
        f"({sum(not net.is_fully_observed for net in networks)} partially observed)"
    )
    return ensemble


def network_record(
    net: Network, net_covariates: dict[str, float] | None = None, tags: Sequence[str] = ()
) -> dict[str, Any]:
    """The canonical record of a network: dyads sorted, masks written out in full."""
    return {
        "net_id": net.net_id,
        "n": net.n,
        "node_attrs": {name: list(values) for name, values in sorted(net.node_attrs.items())},
        "edges": [list(dyad) for dyad in net.edges()],
        "missing_dyads": [list(dyad) for dyad in net.missing_dyads()],
        "net_covariates": dict(sorted((net_covariates or {}).items())),
        "tags": list(tags),
    }


def dump_records(records: Iterable[dict[str, Any]], path: str) -> int:
    count = 0
    with open(path, mode="w", encoding="utf-8") as ensemble_file:
        for record in records:
            ensemble_file.write(json.dumps(record, separators=(",", ":")) + "\n")
            count += 1
    return count


def dump_ensemble(ens: Ensemble, path: str) -> None:
    """Writes an ensemble in the canonical form load_ensemble reads back unchanged."""
    count = dump_records(
        (
            network_record(net, ens.net_covariates[s], ens.tags[s])
            for s, net in enumerate(ens.networks)
        ),
        path,
    )
    logger.debug(f"Wrote {count} network records to {path}")
