"""Request/response models for the HTTP API."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentSpec  # noqa: F401  (re-exported: request bodies embed it)


class HealthResponse(BaseModel):
    status: str
    version: str


class RunOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    max_rounds: Optional[int] = Field(default=None, ge=1)
    fusion: Optional[Literal["max", "mean"]] = None
    n_nodes: Optional[int] = Field(default=None, ge=2)


class RunExperimentRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentSpec
    overrides: RunOverrides = Field(default_factory=RunOverrides)


class ExperimentCreated(BaseModel):
    experiment_id: str
    status: Literal["running"]


class ExperimentStatus(BaseModel):
    experiment_id: str
    name: str
    status: Literal["running", "done", "failed"]
    error: Optional[str] = None
    error_kind: Optional[Literal["config", "runtime"]] = None
    termination: Optional[str] = None
    n_rounds: Optional[int] = None


class ExperimentList(BaseModel):
    experiments: list[ExperimentStatus]


class ArtifactsResponse(BaseModel):
    """Everything a run writes to disk; model checkpoints are base64."""

    experiment_id: str
    text_files: dict[str, str]
    binary_files_b64: dict[str, str]


class PartitionSpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: Literal["uniform-iid", "dirichlet", "proportion-table", "preset"]
    n_nodes: Optional[int] = Field(default=None, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    preset: Optional[str] = None
    alpha: Optional[float] = Field(default=None, gt=0.0)
    train_counts: Optional[list[list[float]]] = None
    test_counts: Optional[list[list[float]]] = None
    fractions: bool = False


class PartitionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_csv: str
    test_csv: str
    header: bool = False
    spec: PartitionSpecModel


class NodeSplit(BaseModel):
    node_id: int
    train_csv: str
    test_csv: str
    train_counts: list[int]
    test_counts: list[int]


class PartitionResponse(BaseModel):
    nodes: list[NodeSplit]
    table_text: str
    unassigned_train: int
    unassigned_test: int


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trace: dict
    svg: bool = False


class TableBundle(BaseModel):
    csv: str
    text: str
    svg: Optional[str] = None


class ReportResponse(BaseModel):
    tables: dict[str, TableBundle]
