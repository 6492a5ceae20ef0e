import os
from typing import Any

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.constant import (
    DEFAULT_BURNIN_FACTOR,
    DEFAULT_ENUM_CAP,
    DEFAULT_FISHER_INNER,
    DEFAULT_FISHER_OUTER,
    DEFAULT_INTERVAL_FACTOR,
    DEFAULT_MAX_HALVINGS,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MAX_NODES,
    DEFAULT_MAX_STEP,
    DEFAULT_MC_TOLERANCE_SE,
    DEFAULT_MCMC_SAMPLE_SIZE,
    DEFAULT_PATH_STEPS,
    DEFAULT_R1,
    DEFAULT_R2,
    DEFAULT_SCORE_DRAWS,
    DEFAULT_SINGULAR_TOL,
    DEFAULT_TOLERANCE,
    ENV_PREFIX,
    INTERCEPT,
    InformationMode,
    TargetScope,
    VarianceEstimator,
)
from app.ensemble import ParamMatrix
from app.estimation import FitOptions
from app.exception import ConfigurationError
from app.moments import SamplingOptions
from app.residual import NestedSimPlan, TargetStatistic
from app.score_test import DatasetStatistic
from app.statistic import StatisticSpec
from app.term import Edges, NetworkCondition, Term, TermFactory, valid_term_type

MAX_ENUM_CAP = 30
ENV_OVERRIDES = {
    "SEED": "seed",
    "THREADS": "threads",
    "ENUM_CAP": "enum_cap",
    "MCMC_SAMPLE_SIZE": "mcmc_sample_size",
}

AttrValue = bool | int | float | str


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConditionConfig(_Config):
    attr: str
    value: AttrValue
    present: bool = True


class TermConfig(_Config):
    type: str
    name: str | None = None
    attr: str | None = None
    pair: tuple[AttrValue, AttrValue] | None = None
    condition: ConditionConfig | None = None
    predicate: str | None = None
    expression: str | None = None
    covariates: list[str] = Field(default_factory=lambda: [INTERCEPT], min_length=1)

    @field_validator("type")
    @classmethod
    def _known_type(cls, value: str) -> str:
        valid_term_type(value)
        return value.lower()

    @field_validator("covariates")
    @classmethod
    def _unique_covariates(cls, value: list[str]) -> list[str]:
        if len(set(value)) != len(value):
            raise ValueError(f"covariates listed twice: {value}")
        return value

    def to_term(self) -> Term:
        kwargs: dict[str, Any] = self.model_dump(
            exclude={"type", "covariates", "condition"}, exclude_none=True
        )
        if self.condition is not None:
            kwargs["condition"] = NetworkCondition(**self.condition.model_dump())
        return TermFactory.create_term(valid_term_type(self.type), **kwargs)


class OffsetConfig(_Config):
    term: str
    covariate: str
    value: float


class EstimationConfig(_Config):
    enum_cap: int = Field(DEFAULT_ENUM_CAP, ge=0, le=MAX_ENUM_CAP)
    max_nodes: int = Field(DEFAULT_MAX_NODES, ge=1)
    mcmc_sample_size: int = Field(DEFAULT_MCMC_SAMPLE_SIZE, ge=2)
    burnin_factor: int = Field(DEFAULT_BURNIN_FACTOR, ge=0)
    interval_factor: int = Field(DEFAULT_INTERVAL_FACTOR, ge=1)
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    tolerance: float = Field(DEFAULT_TOLERANCE, gt=0)
    mc_tolerance_se: float = Field(DEFAULT_MC_TOLERANCE_SE, gt=0)
    max_step: float = Field(DEFAULT_MAX_STEP, gt=0)
    max_halvings: int = Field(DEFAULT_MAX_HALVINGS, ge=0)
    path_steps: int = Field(DEFAULT_PATH_STEPS, ge=1)
    information: InformationMode = InformationMode.FISHER
    fisher_outer: int = Field(DEFAULT_FISHER_OUTER, ge=2)
    fisher_inner: int = Field(DEFAULT_FISHER_INNER, ge=2)
    check_boundary: bool = True
    seed: int = Field(0, ge=0, lt=1 << 64)
    threads: int = Field(1, ge=1)
    force_mcmc: bool = False

    def sampling_options(self) -> SamplingOptions:
        return SamplingOptions(
            enum_cap=self.enum_cap,
            force_mcmc=self.force_mcmc,
            mcmc_sample_size=self.mcmc_sample_size,
            burnin_factor=self.burnin_factor,
            interval_factor=self.interval_factor,
            fisher_outer=self.fisher_outer,
            fisher_inner=self.fisher_inner,
            threads=self.threads,
        )

    def fit_options(self) -> FitOptions:
        return FitOptions(
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            mc_tolerance_se=self.mc_tolerance_se,
            max_step=self.max_step,
            max_halvings=self.max_halvings,
            path_steps=self.path_steps,
            information=self.information,
            check_boundary=self.check_boundary,
            seed=self.seed,
            sampling=self.sampling_options(),
        )


class TargetConfig(_Config):
    """A residual or score-test target: density, or any model term vocabulary entry."""

    name: str | None = None
    density: bool = False
    term: TermConfig | None = None
    per_dyad: bool = False
    scope: TargetScope = TargetScope.PER_NETWORK

    @model_validator(mode="after")
    def _one_definition(self) -> "TargetConfig":
        if self.density == (self.term is not None):
            raise ValueError("a target is either 'density: true' or has a 'term'")
        return self

    def to_target(self) -> TargetStatistic:
        if self.density:
            return TargetStatistic(
                name=self.name or "density", term=Edges(), scope=self.scope, per_dyad=True
            )
        assert self.term is not None
        term = self.term.to_term()
        return TargetStatistic(
            name=self.name or term.name, term=term, scope=self.scope, per_dyad=self.per_dyad
        )


class ScoreTestConfig(_Config):
    target: TargetConfig
    tag: str | None = None

    def to_statistic(self) -> DatasetStatistic:
        return DatasetStatistic(self.target.to_target(), self.tag)


class DiagnosticsConfig(_Config):
    targets: list[TargetConfig] = Field(default_factory=lambda: [TargetConfig(density=True)])
    R1: int = Field(DEFAULT_R1, ge=2)
    R2: int = Field(DEFAULT_R2, ge=1)
    estimator: VarianceEstimator = VarianceEstimator.TOTAL_VARIANCE
    exact_inner: bool = True
    candidates: list[str] = Field(default_factory=list)
    group_tags: list[str] = Field(default_factory=list)
    size_anova: bool = True
    score_tests: list[ScoreTestConfig] = Field(default_factory=list)
    omnibus: bool = True
    score_draws: int = Field(DEFAULT_SCORE_DRAWS, ge=2)
    singular_tol: float = Field(DEFAULT_SINGULAR_TOL, gt=0)
    project_score: bool = False

    def plan(self, seed: int) -> NestedSimPlan:
        return NestedSimPlan(
            R1=self.R1,
            R2=self.R2,
            estimator=self.estimator,
            seed=seed,
            exact_inner=self.exact_inner,
        )


class ModelConfig(_Config):
    """
    The declarative model: statistic terms, the covariates multiplying each term (which fixes
    the sparsity mask of B), fixed offsets, and estimation and diagnostics options.
    """

    terms: list[TermConfig] = Field(min_length=1)
    offsets: list[OffsetConfig] = Field(default_factory=list)
    size_reference: float = Field(1.0, gt=0)
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)

    def spec(self) -> StatisticSpec:
        return StatisticSpec([term.to_term() for term in self.terms])

    def covariate_names(self) -> tuple[str, ...]:
        """Every covariate any term or offset uses, intercept first, then in order of use."""
        used = [c for term in self.terms for c in term.covariates]
        used += [offset.covariate for offset in self.offsets]
        names = list(dict.fromkeys(used))
        if INTERCEPT in names:
            names.remove(INTERCEPT)
            names.insert(0, INTERCEPT)
        return tuple(names)

    def initial_params(self, spec: StatisticSpec | None = None) -> ParamMatrix:
        """B = 0 with the mask and offsets implied by the configuration."""
        spec = spec or self.spec()
        covariates = self.covariate_names()
        q, p = len(covariates), spec.p
        mask = np.zeros((q, p), dtype=bool)
        for column, term in enumerate(self.terms):
            for name in term.covariates:
                mask[covariates.index(name), column] = True
        offset = np.zeros((q, p))
        for entry in self.offsets:
            if entry.term not in spec.names:
                raise ConfigurationError(f"Offset refers to unknown term '{entry.term}'")
            row, column = covariates.index(entry.covariate), spec.index(entry.term)
            if mask[row, column]:
                raise ConfigurationError(
                    f"Offset on {entry.term}:{entry.covariate} coincides with an estimated coefficient"
                )
            offset[row, column] += entry.value
        return ParamMatrix(np.zeros((q, p)), mask, offset, covariates, spec.names)

    def with_overrides(self, **overrides: Any) -> "ModelConfig":
        """A copy with estimation settings replaced; None values are ignored."""
        updates = {key: value for key, value in overrides.items() if value is not None}
        if not updates:
            return self
        try:
            estimation = EstimationConfig.model_validate(
                {**self.estimation.model_dump(), **updates}
            )
        except ValidationError as e:
            raise ConfigurationError(f"Invalid estimation override: {e}") from None
        return self.model_copy(update={"estimation": estimation})


def _read_yaml(path: str) -> Any:
    try:
        with open(path, mode="r", encoding="utf-8") as config_file:
            return yaml.safe_load(config_file)
    except FileNotFoundError:
        raise ConfigurationError(f"Model configuration not found at {path}") from None
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Model configuration {path} is not valid YAML: {e}") from None


def parse_model_config(data: Any, source: str = "<config>") -> ModelConfig:
    try:
        return ModelConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid model configuration {source}: {e}") from None


def env_overrides() -> dict[str, int]:
    """Estimation overrides from NETENSEMBLE_* environment variables (and a .env file)."""
    load_dotenv()
    overrides: dict[str, int] = {}
    for suffix, key in ENV_OVERRIDES.items():
        raw = os.getenv(ENV_PREFIX + suffix)
        if raw is None or raw == "":
            continue
        try:
            overrides[key] = int(raw)
        except ValueError:
            raise ConfigurationError(f"{ENV_PREFIX}{suffix} must be an integer, got '{raw}'") from None
    return overrides


def env_out_dir() -> str | None:
    load_dotenv()
    return os.getenv(ENV_PREFIX + "OUT") or None


def load_model_config(path: str, **cli_overrides: Any) -> ModelConfig:
    """
    Reads a YAML model configuration. Estimation settings resolve with precedence
    command-line flag > environment > file > default.
    """
    config = parse_model_config(_read_yaml(path), path)
    config = config.with_overrides(**env_overrides())
    return config.with_overrides(**cli_overrides)
