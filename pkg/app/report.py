import csv
import json
import math
import os
from typing import Any, Iterable, Sequence

import numpy as np

from app.enumeration import EnumerationTable, ObservationGroups
from app.estimation import FitResult
from app.log import logger
from app.network import bits_to_states, dyad_count
from app.residual import ResidualRecord
from app.residual_tests import DensityCell, SdRow

RESIDUAL_COLUMNS = [
    "net_id",
    "target",
    "n",
    "point",
    "expectation",
    "variance",
    "residual",
    "sqrt_abs_residual",
    "degenerate",
    "exact",
    "tags",
]
DENSITY_COLUMNS = ["n", "group_label", "count", "mean_error", "se"]
SD_COLUMNS = ["target", "group", "count", "mean", "sd"]
TEST_COLUMNS = ["test", "target", "candidate", "statistic", "df", "p_value", "count"]


def write_csv(path: str, columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> int:
    count = 0
    with open(path, mode="w", encoding="utf-8", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return count


def write_residuals(path: str, records: Sequence[ResidualRecord]) -> int:
    return write_csv(path, RESIDUAL_COLUMNS, (record.to_row() for record in records))


def write_density_errors(path: str, cells: Sequence[DensityCell]) -> int:
    return write_csv(path, DENSITY_COLUMNS, (vars(cell) for cell in cells))


def write_sd_table(path: str, rows: Sequence[SdRow]) -> int:
    return write_csv(path, SD_COLUMNS, (vars(row) for row in rows))


def write_tests(path: str, reports: Sequence[Any]) -> int:
    """Test reports: anything with a to_row() giving the tests.csv columns."""
    return write_csv(path, TEST_COLUMNS, (report.to_row() for report in reports))


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(path: str, data: dict[str, Any]) -> None:
    with open(path, mode="w", encoding="utf-8") as json_file:
        json.dump(_json_safe(data), json_file, indent=2, sort_keys=True)
        json_file.write("\n")


def write_fit(path: str, result: FitResult, metadata: dict[str, Any] | None = None) -> None:
    write_json(path, {**result.to_dict(), "metadata": metadata or {}})


def read_fit(path: str) -> FitResult:
    with open(path, mode="r", encoding="utf-8") as json_file:
        return FitResult.from_dict(json.load(json_file))


def format_coefficients(result: FitResult) -> str:
    """Estimate, SE and significance stars per coefficient, with likelihood criteria."""
    rows = result.coefficient_table()
    width = max([len(row.label) for row in rows] + [len("Coefficient")])
    lines = [f"{'Coefficient':<{width}}  {'Estimate':>10}  {'SE':>9}  {'z':>7}  {'p':>9}"]
    for row in rows:
        lines.append(
            f"{row.label:<{width}}  {row.estimate:>10.4f}  {row.se:>9.4f}  {row.z:>7.2f}  "
            f"{row.p_value:>9.3g} {row.stars}"
        )
    mcse = f" ({result.loglik_mcse:.2f})" if result.loglik_mcse else ""
    criterion_mcse = f" ({result.criterion_mcse:.2f})" if result.criterion_mcse else ""
    lines += [
        "",
        f"Log-likelihood {result.loglik:.2f}{mcse}",
        f"AIC {result.aic:.2f}{criterion_mcse}",
        f"BIC {result.bic:.2f}{criterion_mcse}",
        f"Iterations {result.iterations} ({'exact' if result.exact else 'Monte Carlo'}), "
        f"converged {result.converged}",
        "Significance: ***<=0.001, **<=0.01, *<=0.05",
    ]
    return "\n".join(lines)


def enumeration_rows(table: EnumerationTable, theta: np.ndarray) -> list[dict[str, Any]]:
    """One row per state, by edge count then bitset: dyad values, statistics, probability."""
    probs, _ = table.probabilities(theta)
    dyads = dyad_count(table.n)
    rows = []
    for index in table.ordered():
        bits = int(table.bits[index])
        row: dict[str, Any] = {
            "state": "".join("1" if v else "0" for v in bits_to_states(bits, dyads)),
        }
        row.update({name: int(value) for name, value in zip(table.names, table.stats[index])})
        row["probability"] = float(probs[index])
        rows.append(row)
    return rows


def conditional_rows(
    groups: ObservationGroups, names: Sequence[str], observed: Sequence[int], dyads: int
) -> list[dict[str, Any]]:
    """One row per observed configuration: its probability and conditional mean statistics."""
    rows = []
    for bits, probability, means in zip(groups.observed_bits, groups.probabilities, groups.means):
        states = bits_to_states(int(bits), dyads)
        row: dict[str, Any] = {"observed": "".join("1" if states[d] else "0" for d in observed)}
        row["probability"] = float(probability)
        row.update({name: float(value) for name, value in zip(names, means)})
        rows.append(row)
    return rows


def format_rows(rows: Sequence[dict[str, Any]]) -> str:
    if not rows:
        return ""
    columns = list(rows[0])

    def cell(value: Any) -> str:
        return f"{value:.4g}" if isinstance(value, float) else str(value)

    widths = {c: max(len(c), *(len(cell(row[c])) for row in rows)) for c in columns}
    lines = ["  ".join(f"{c:>{widths[c]}}" for c in columns)]
    lines += ["  ".join(f"{cell(row[c]):>{widths[c]}}" for c in columns) for row in rows]
    return "\n".join(lines)


def output_path(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)
