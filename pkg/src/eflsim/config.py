"""Experiment configuration: schema, TOML loading, and the bundled presets.

The configuration document is TOML with five sections (experiment, data,
partition, roster, report). It is schema-validated before any computation;
unknown keys are rejected. The same schema backs the HTTP API, so a config
file and a request body validate identically.
"""
from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import CsvSource, PARTITION_PRESETS, ProportionTable, SyntheticSource, DirichletSkew, UniformIID
from .errors import ConfigError
from .learners import PAPER_FINETUNE_LEARNING_RATE, default_roster
from .models import FusionRule
from .seeding import derive_seed
from .server import FederationConfig


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    seed: int = Field(default=0, ge=0, lt=2**64)
    n_nodes: int = Field(default=5, ge=2)
    max_rounds: int = Field(default=50, ge=1)
    fusion: Literal["max", "mean"] = "max"


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["synthetic", "csv"] = "synthetic"
    train_per_label: list[int] = Field(default=[500, 180])
    test_per_label: list[int] = Field(default=[100, 60])
    features: int = Field(default=2, ge=1)
    separation: float = Field(default=3.0, ge=0.0)
    label_shift: Optional[list[list[float]]] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    header: bool = False

    @model_validator(mode="after")
    def _check_source(self):
        if self.source == "csv" and not (self.train_path and self.test_path):
            raise ValueError("csv source requires train_path and test_path")
        return self


class PartitionSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: Literal["uniform-iid", "dirichlet", "proportion-table", "preset"] = "uniform-iid"
    preset: Optional[str] = None
    alpha: Optional[float] = Field(default=None, gt=0.0)
    train_counts: Optional[list[list[float]]] = None
    test_counts: Optional[list[list[float]]] = None
    fractions: bool = False

    @model_validator(mode="after")
    def _check_strategy(self):
        if self.strategy == "dirichlet" and self.alpha is None:
            raise ValueError("dirichlet partitioning requires alpha")
        if self.strategy == "proportion-table" and not (self.train_counts and self.test_counts):
            raise ValueError("proportion-table partitioning requires train_counts and test_counts")
        if self.strategy == "preset":
            if self.preset is None:
                raise ValueError("preset partitioning requires a preset name")
            if self.preset not in PARTITION_PRESETS:
                raise ValueError(
                    f"unknown partition preset {self.preset!r}; "
                    f"known: {sorted(PARTITION_PRESETS)}"
                )
        return self


class RosterSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal["default-8", "paper-finetune"] = "default-8"
    learning_rate: Optional[float] = Field(default=None, gt=0.0)
    max_epochs: Optional[int] = Field(default=None, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1)


class ReportSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    svg: bool = False


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: str = "eflsim-out"


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    data: DataSection = Field(default_factory=DataSection)
    partition: PartitionSection = Field(default_factory=PartitionSection)
    roster: RosterSection = Field(default_factory=RosterSection)
    report: ReportSection = Field(default_factory=ReportSection)
    output: OutputSection = Field(default_factory=OutputSection)


def spec_from_dict(doc: dict) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from None


def load_config_file(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from None
    return spec_from_dict(doc)


def bundled_config(name: str) -> ExperimentSpec:
    """Load a config shipped with the package (e.g. 'paper-shape')."""
    filename = name if name.endswith(".toml") else f"{name}.toml"
    ref = resources.files("eflsim") / "configs" / filename
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return spec_from_dict(tomllib.loads(ref.read_text()))


def resolve_config_argument(value: str) -> ExperimentSpec:
    """A config path, or the name of a bundled config if no such file exists."""
    if Path(value).is_file():
        return load_config_file(value)
    try:
        return bundled_config(value)
    except ConfigError:
        raise ConfigError(f"config {value!r} is neither a readable file nor a bundled name") from None


def apply_overrides(
    spec: ExperimentSpec,
    *,
    seed: int | None = None,
    max_rounds: int | None = None,
    fusion: str | None = None,
    n_nodes: int | None = None,
) -> ExperimentSpec:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if max_rounds is not None:
        updates["max_rounds"] = max_rounds
    if fusion is not None:
        updates["fusion"] = fusion
    if n_nodes is not None:
        updates["n_nodes"] = n_nodes
    if not updates:
        return spec
    try:
        experiment = spec.experiment.model_copy(update=updates)
        ExperimentSection.model_validate(experiment.model_dump())
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {exc}") from None
    return spec.model_copy(update={"experiment": experiment})


def _build_roster(section: RosterSection):
    roster = default_roster()
    overrides: dict = {}
    if section.preset == "paper-finetune":
        overrides["learning_rate"] = PAPER_FINETUNE_LEARNING_RATE
    if section.learning_rate is not None:
        overrides["learning_rate"] = section.learning_rate
    if section.max_epochs is not None:
        overrides["max_epochs"] = section.max_epochs
    if section.batch_size is not None:
        overrides["batch_size"] = section.batch_size
    if overrides:
        roster = tuple(dataclasses.replace(c, **overrides) for c in roster)
    return roster


def _build_partition(section: PartitionSection, n_nodes: int, seed: int):
    partition_seed = derive_seed(seed, "partition")
    if section.strategy == "uniform-iid":
        return UniformIID(n_nodes, seed=partition_seed)
    if section.strategy == "dirichlet":
        return DirichletSkew(n_nodes, alpha=section.alpha, seed=partition_seed)
    if section.strategy == "proportion-table":
        return ProportionTable(
            train=tuple(tuple(row) for row in section.train_counts),
            test=tuple(tuple(row) for row in section.test_counts),
            fractions=section.fractions,
            seed=partition_seed,
        )
    table = PARTITION_PRESETS[section.preset](seed=partition_seed)
    if table.n_nodes != n_nodes:
        raise ConfigError(
            f"partition preset {section.preset!r} defines {table.n_nodes} nodes, "
            f"experiment says {n_nodes}"
        )
    return table


def to_federation_config(spec: ExperimentSpec) -> FederationConfig:
    if spec.data.source == "synthetic":
        source = SyntheticSource(
            train_per_label=tuple(spec.data.train_per_label),
            test_per_label=tuple(spec.data.test_per_label),
            n_features=spec.data.features,
            separation=spec.data.separation,
            label_shift=tuple(tuple(r) for r in spec.data.label_shift)
            if spec.data.label_shift
            else None,
        )
    else:
        source = CsvSource(spec.data.train_path, spec.data.test_path, spec.data.header)
    return FederationConfig(
        n_nodes=spec.experiment.n_nodes,
        roster=_build_roster(spec.roster),
        source=source,
        partition_spec=_build_partition(
            spec.partition, spec.experiment.n_nodes, spec.experiment.seed
        ),
        fusion=FusionRule.from_name(spec.experiment.fusion),
        max_rounds=spec.experiment.max_rounds,
        master_seed=spec.experiment.seed,
    )
