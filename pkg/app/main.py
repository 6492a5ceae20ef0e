import argparse
import os
import re
import sys
from functools import partial
from typing import Any, Callable

import numpy as np
from setuptools_scm import get_version

from app.config import ModelConfig, env_out_dir, load_model_config, parse_model_config
from app.constant import ExitCode
from app.constant import PrintColour as PC
from app.ensemble import Ensemble, ParamMatrix
from app.enumeration import Enumerator
from app.estimation import fit_mle
from app.exception import ConfigurationError, NetEnsembleError, NonidentifiableError
from app.identifiability import check_identifiability
from app.log import DEBUG, logger
from app.moments import MomentProvider, derive_seed
from app.network import Network
from app.report import (
    conditional_rows,
    enumeration_rows,
    format_coefficients,
    format_rows,
    output_path,
    read_fit,
    write_csv,
    write_density_errors,
    write_fit,
    write_json,
    write_residuals,
    write_sd_table,
    write_tests,
)
from app.residual import pearson_residual
from app.residual_tests import (
    candidate_groups,
    candidate_values,
    density_error_summary,
    heterogeneity_sd,
    residual_regression,
    size_anova,
)
from app.score_test import score_test_dataset, score_test_omnibus
from app.source import dump_records, load_ensemble, network_record

GROUP_CANDIDATE = "group"
DEFAULT_ENUMERATE_MODEL = {
    "terms": [{"type": "edges"}, {"type": "twostars"}, {"type": "triangles"}]
}


def valid_input_path(file_extensions: tuple[str, ...], path: str) -> str:
    if not os.path.isfile(path):
        raise argparse.ArgumentTypeError(f"File {path} does not exist.")
    if not path.lower().endswith(file_extensions):
        raise argparse.ArgumentTypeError(f"The file must have one of the extensions {file_extensions}")
    return path


def valid_dyad(value: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+),(\d+)", value.strip())
    if not match:
        raise argparse.ArgumentTypeError(f"Dyads are written i,j (0-based), got '{value}'")
    return int(match.group(1)), int(match.group(2))


def valid_seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 1 << 64:
        raise argparse.ArgumentTypeError(f"Seed must be an unsigned 64-bit integer, got {value}")
    return seed


def _version() -> str:
    return get_version(fallback_version="0.1.0")


class Session:
    """A loaded model configuration and ensemble with the moment provider shared by commands."""

    args: argparse.Namespace
    config: ModelConfig
    ens: Ensemble
    provider: MomentProvider

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.config = load_model_config(
            args.model, seed=args.seed, threads=args.threads, enum_cap=args.enum_cap
        )
        self.ens = load_ensemble(args.ensemble, self.config)
        self.provider = MomentProvider(self.ens, self.config.estimation.sampling_options())

    @property
    def seed(self) -> int:
        return self.config.estimation.seed

    @property
    def out_dir(self) -> str:
        return self.args.out or env_out_dir() or "."

    def params(self) -> ParamMatrix:
        """Fitted coefficients from --fit, checked against the configured layout, else B = 0."""
        layout = self.config.initial_params(self.ens.spec)
        if not self.args.fit:
            return layout
        B = read_fit(self.args.fit).B
        if (
            B.covariate_names != layout.covariate_names
            or B.term_names != layout.term_names
            or not np.array_equal(B.mask, layout.mask)
        ):
            raise ConfigurationError(
                f"Fit {self.args.fit} does not match the model: {B.labels()} vs {layout.labels()}"
            )
        return B

    def metadata(self) -> dict[str, Any]:
        estimation = self.config.estimation
        return {
            "seed": self.seed,
            "enum_cap": estimation.enum_cap,
            "force_mcmc": estimation.force_mcmc,
            "mcmc_sample_size": estimation.mcmc_sample_size,
            "networks": self.ens.S,
            "streams": "seed XOR blake2b-64(key fields joined by 0x1f): net_id, purpose, iteration",
        }


def run_fit(args: argparse.Namespace) -> None:
    session = Session(args)
    ens, provider, config = session.ens, session.provider, session.config
    B0 = config.initial_params(ens.spec)
    report = check_identifiability(
        ens, B0, provider, config.diagnostics.singular_tol, derive_seed(session.seed, "identify")
    )
    if not report.identifiable:
        raise NonidentifiableError(report.describe(), report)
    result = fit_mle(ens, B0, config.estimation.fit_options(), provider)
    write_fit(output_path(session.out_dir, "fit.json"), result, session.metadata())
    print(format_coefficients(result))


def run_simulate(args: argparse.Namespace) -> None:
    session = Session(args)
    ens, provider = session.ens, session.provider
    B = session.params()
    thetas = ens.thetas(B)
    records = []
    densities = []
    draws = [
        provider.draw(
            net.completed(),
            thetas[s],
            False,
            args.draws,
            np.random.default_rng(derive_seed(session.seed, net.net_id, "simulate")),
        )
        for s, net in enumerate(ens.networks)
    ]
    for r in range(args.draws):
        for s, net in enumerate(ens.networks):
            simulated = net.completed().with_edge_bits(draws[s].bits[r])
            if args.draws > 1:
                simulated.net_id = f"{net.net_id}#{r}"
            densities.append(simulated.density)
            records.append(network_record(simulated, ens.net_covariates[s], ens.tags[s]))
    path = output_path(session.out_dir, "simulated.jsonl")
    count = dump_records(records, path)
    density = float(np.mean(densities))
    logger.info(f"Wrote {count} simulated networks to {path} (mean density {density:.4f})")


def _diagnostic_reports(session: Session, B: ParamMatrix, with_residuals: bool) -> dict[str, Any]:
    ens, provider, diagnostics = session.ens, session.provider, session.config.diagnostics
    plan = diagnostics.plan(derive_seed(session.seed, "diagnose"))
    results: dict[str, Any] = {"records": [], "tests": [], "sd": [], "density": []}
    net_ids = {net.net_id for net in ens.networks}
    if with_residuals:
        for target_config in diagnostics.targets:
            target = target_config.to_target()
            records = pearson_residual(ens, B, target, plan, provider)
            results["records"] += records
            per_network = [r for r in records if r.net_id in net_ids]
            if not per_network:
                continue
            for candidate in diagnostics.candidates:
                if candidate == GROUP_CANDIDATE:
                    values = candidate_groups(ens, diagnostics.group_tags)
                else:
                    values = candidate_values(ens, candidate, session.config.size_reference)
                results["tests"].append(residual_regression(per_network, values, candidate))
            if diagnostics.size_anova and len({net.n for net in ens.networks}) > 1:
                results["tests"].append(size_anova(per_network))
            results["sd"] += heterogeneity_sd(per_network, diagnostics.group_tags)
        results["density"] = density_error_summary(
            ens, B, diagnostics.group_tags, provider, derive_seed(session.seed, "density")
        )
    statistics = [test.to_statistic() for test in diagnostics.score_tests]
    score_seed = derive_seed(session.seed, "score")
    for statistic in statistics:
        results["tests"].append(
            score_test_dataset(
                ens,
                B,
                statistic,
                diagnostics.score_draws,
                provider,
                score_seed,
                diagnostics.project_score,
                session.args.verbose,
            )
        )
    if diagnostics.omnibus and len(statistics) > 1:
        results["tests"].append(
            score_test_omnibus(
                ens,
                B,
                statistics,
                diagnostics.score_draws,
                provider,
                score_seed,
                diagnostics.project_score,
                session.args.verbose,
                diagnostics.singular_tol,
            )
        )
    return results


def run_diagnose(args: argparse.Namespace) -> None:
    session = Session(args)
    results = _diagnostic_reports(session, session.params(), with_residuals=True)
    out_dir = session.out_dir
    write_residuals(output_path(out_dir, "residuals.csv"), results["records"])
    write_density_errors(output_path(out_dir, "density_errors.csv"), results["density"])
    write_sd_table(output_path(out_dir, "sd_table.csv"), results["sd"])
    write_tests(output_path(out_dir, "tests.csv"), results["tests"])
    for row in results["sd"]:
        logger.info(f"Residual SD {row.target} [{row.group}]: {row.sd:.3f} over {row.count}")
    for test in results["tests"]:
        row = test.to_row()
        logger.info(f"{row['test']} {row['target']} {row['candidate']}: p = {row['p_value']:.4g}")


def run_scoretest(args: argparse.Namespace) -> None:
    session = Session(args)
    if not session.config.diagnostics.score_tests:
        raise ConfigurationError("The model configuration lists no score_tests")
    results = _diagnostic_reports(session, session.params(), with_residuals=False)
    write_tests(output_path(session.out_dir, "tests.csv"), results["tests"])
    for test in results["tests"]:
        row = test.to_row()
        print(
            f"{row['test']:<15} {row['target']:<30} "
            f"statistic {row['statistic']:.4f}  p {row['p_value']:.4g}"
        )


def run_identify(args: argparse.Namespace) -> None:
    session = Session(args)
    report = check_identifiability(
        session.ens,
        session.params(),
        session.provider,
        session.config.diagnostics.singular_tol,
        derive_seed(session.seed, "identify"),
    )
    write_json(output_path(session.out_dir, "identifiability.json"), report.to_dict())
    print(report.describe())
    print(f"complete-data det {report.complete_det:.6g}, fisher det {report.fisher_det:.6g}")


def run_enumerate(args: argparse.Namespace) -> None:
    if args.model:
        config = load_model_config(args.model)
    else:
        config = parse_model_config(DEFAULT_ENUMERATE_MODEL)
    spec = config.spec()
    theta = np.zeros(spec.p) if args.theta is None else np.array(args.theta, dtype=np.float64)
    if theta.shape != (spec.p,):
        raise ConfigurationError(f"--theta needs {spec.p} values ({list(spec.names)})")
    net = Network(args.n, missing=args.missing, max_nodes=config.estimation.max_nodes)
    spec.check(net)
    enumerator = Enumerator(spec, config.estimation.enum_cap)
    rows = enumeration_rows(enumerator.table(net, conditional=False), theta)
    print(format_rows(rows))
    observed = [d for d in range(net.dyad_count) if not net.missing_bits >> d & 1]
    conditional = []
    if not net.is_fully_observed:
        groups = enumerator.observation_groups(net, theta)
        conditional = conditional_rows(groups, spec.names, observed, net.dyad_count)
        print()
        print(format_rows(conditional))
    if args.out:
        write_csv(output_path(args.out, "enumeration.csv"), list(rows[0]), rows)
        if conditional:
            write_csv(output_path(args.out, "conditional.csv"), list(conditional[0]), conditional)


def _add_common(parser: argparse.ArgumentParser, fit: bool = False) -> None:
    valid_jsonl = partial(valid_input_path, (".jsonl", ".json", ".ndjson"))
    valid_yaml = partial(valid_input_path, (".yaml", ".yml"))
    input_group = parser.add_argument_group(title="Input arguments")
    input_group.add_argument(
        "--ensemble", type=valid_jsonl, required=True, help="JSON-lines ensemble file"
    )
    input_group.add_argument(
        "--model", type=valid_yaml, required=True, help="YAML model configuration"
    )
    if fit:
        input_group.add_argument(
            "--fit",
            type=partial(valid_input_path, (".json",)),
            default=None,
            help="fit.json with the coefficients to use. Defaults to B = 0",
        )
    run_group = parser.add_argument_group(title="Run arguments")
    run_group.add_argument("--seed", type=valid_seed, default=None, help="Top-level random seed")
    run_group.add_argument("--threads", type=int, default=None, help="Worker threads")
    run_group.add_argument(
        "--enum-cap", type=int, default=None, help="Largest dyad count enumerated exactly"
    )
    run_group.add_argument("--out", type=str, default=None, help="Output directory")
    run_group.add_argument("--verbose", action="store_true", help="Enable verbose logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Fit and diagnose exponential random graph models on ensembles of small, "
        "possibly partially observed networks"
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"netensemble {_version()}",
        help="Show version number and exit",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="Maximum likelihood fit of the coefficient matrix")
    _add_common(fit)
    fit.set_defaults(handler=run_fit)

    simulate = commands.add_parser("simulate", help="Simulate fully observed ensembles")
    _add_common(simulate, fit=True)
    simulate.add_argument("--draws", type=int, default=1, help="Number of simulated ensembles")
    simulate.set_defaults(handler=run_simulate)

    diagnose = commands.add_parser("diagnose", help="Residuals, residual tests and score tests")
    _add_common(diagnose, fit=True)
    diagnose.set_defaults(handler=run_diagnose)

    identify = commands.add_parser("identify", help="Identifiability report")
    _add_common(identify, fit=True)
    identify.set_defaults(handler=run_identify)

    scoretest = commands.add_parser("scoretest", help="Simulation score tests only")
    _add_common(scoretest, fit=True)
    scoretest.set_defaults(handler=run_scoretest)

    enumerate_ = commands.add_parser("enumerate", help="Exact state and conditional tables")
    enumerate_.add_argument("--n", type=int, required=True, help="Number of nodes")
    enumerate_.add_argument(
        "--theta", type=float, nargs="+", default=None, help="Parameter vector. Defaults to 0"
    )
    enumerate_.add_argument(
        "--missing", type=valid_dyad, nargs="*", default=[], help="Missing dyads as i,j"
    )
    enumerate_.add_argument(
        "--model",
        type=partial(valid_input_path, (".yaml", ".yml")),
        default=None,
        help="YAML model configuration. Defaults to edges, two-stars and triangles",
    )
    enumerate_.add_argument("--out", type=str, default=None, help="Output directory for CSVs")
    enumerate_.add_argument("--verbose", action="store_true", help="Enable verbose logging")
    enumerate_.set_defaults(handler=run_enumerate)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel(DEBUG)
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except NonidentifiableError as e:
        logger.error(f"{PC.RED}Model is not identifiable{PC.RESET}\n{e}")
        sys.exit(e.exit_code)
    except NetEnsembleError as e:
        logger.error(e)
        sys.exit(e.exit_code)
    except Exception as e:
        logger.exception(e)
        sys.exit(ExitCode.UNEXPECTED)


if __name__ == "__main__":
    main()
