"""FastAPI application wrapping the simulator.

Experiments run as background jobs: POST a config, poll the status, fetch
artifacts when done. Partitioning and report generation are synchronous
endpoints over inline payloads so clients stay filesystem-free.
"""
from __future__ import annotations

import base64
import threading

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import apply_overrides, to_federation_config
from ..data import DirichletSkew, PARTITION_PRESETS, ProportionTable, UniformIID, parse_csv, partition, dataset_to_csv
from ..errors import ConfigError, EflError
from ..experiment import build_artifacts, run_experiment
from ..reports import build_report_bundle, partition_count_table
from ..server import FederationTrace
from . import schemas


class Job:
    def __init__(self, job_id: str, name: str):
        self.id = job_id
        self.name = name
        self.status = "running"
        self.error: str | None = None
        self.error_kind: str | None = None
        self.result = None
        self.artifacts: dict[str, bytes] | None = None

    def to_status(self) -> schemas.ExperimentStatus:
        trace = self.result.trace if self.result else None
        return schemas.ExperimentStatus(
            experiment_id=self.id,
            name=self.name,
            status=self.status,
            error=self.error,
            error_kind=self.error_kind,
            termination=trace.termination if trace else None,
            n_rounds=trace.n_rounds if trace else None,
        )


class JobStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, Job] = {}
        self._counter = 0

    def create(self, name: str) -> Job:
        with self._lock:
            self._counter += 1
            job = Job(f"exp-{self._counter}", name)
            self._jobs[job.id] = job
            return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no experiment {job_id!r}")
        return job

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())


def _partition_spec_from_model(model: schemas.PartitionSpecModel):
    if model.strategy == "uniform-iid":
        if model.n_nodes is None:
            raise ConfigError("uniform-iid partitioning requires n_nodes")
        return UniformIID(model.n_nodes, seed=model.seed)
    if model.strategy == "dirichlet":
        if model.n_nodes is None or model.alpha is None:
            raise ConfigError("dirichlet partitioning requires n_nodes and alpha")
        return DirichletSkew(model.n_nodes, alpha=model.alpha, seed=model.seed)
    if model.strategy == "proportion-table":
        if not (model.train_counts and model.test_counts):
            raise ConfigError("proportion-table partitioning requires train_counts and test_counts")
        return ProportionTable(
            train=tuple(tuple(r) for r in model.train_counts),
            test=tuple(tuple(r) for r in model.test_counts),
            fractions=model.fractions,
            seed=model.seed,
        )
    if model.preset not in PARTITION_PRESETS:
        raise ConfigError(f"unknown partition preset {model.preset!r}")
    table = PARTITION_PRESETS[model.preset](seed=model.seed)
    if model.n_nodes is not None and model.n_nodes != table.n_nodes:
        raise ConfigError(
            f"preset {model.preset!r} defines {table.n_nodes} nodes, request says {model.n_nodes}"
        )
    return table


def create_app() -> FastAPI:
    app = FastAPI(title="eflsim", version=__version__)
    jobs = JobStore()

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/experiments", response_model=schemas.ExperimentCreated, status_code=202)
    def submit_experiment(request: schemas.RunExperimentRequest):
        try:
            spec = apply_overrides(
                request.config,
                seed=request.overrides.seed,
                max_rounds=request.overrides.max_rounds,
                fusion=request.overrides.fusion,
                n_nodes=request.overrides.n_nodes,
            )
            federation_config = to_federation_config(spec)  # fail fast on bad combos
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

        job = jobs.create(spec.experiment.name)
        config_echo = spec.model_dump()

        def run() -> None:
            try:
                result = run_experiment(federation_config, config_echo=config_echo)
                job.result = result
                job.artifacts = build_artifacts(result)
                job.status = "done"
            except ConfigError as exc:
                job.status, job.error, job.error_kind = "failed", str(exc), "config"
            except (EflError, OSError) as exc:
                job.status, job.error, job.error_kind = "failed", str(exc), "runtime"

        threading.Thread(target=run, daemon=True).start()
        return schemas.ExperimentCreated(experiment_id=job.id, status="running")

    @app.get("/experiments", response_model=schemas.ExperimentList)
    def list_experiments():
        return schemas.ExperimentList(experiments=[j.to_status() for j in jobs.all()])

    @app.get("/experiments/{experiment_id}", response_model=schemas.ExperimentStatus)
    def experiment_status(experiment_id: str):
        return jobs.get(experiment_id).to_status()

    @app.get("/experiments/{experiment_id}/trace")
    def experiment_trace(experiment_id: str):
        job = jobs.get(experiment_id)
        if job.status != "done":
            raise HTTPException(status_code=409, detail=f"experiment is {job.status}")
        return job.result.trace.to_dict()

    @app.get("/experiments/{experiment_id}/artifacts", response_model=schemas.ArtifactsResponse)
    def experiment_artifacts(experiment_id: str):
        job = jobs.get(experiment_id)
        if job.status != "done":
            raise HTTPException(status_code=409, detail=f"experiment is {job.status}")
        text_files = {}
        binary_files = {}
        for name, content in job.artifacts.items():
            if name.endswith((".json", ".csv")):
                text_files[name] = content.decode("utf-8")
            else:
                binary_files[name] = base64.b64encode(content).decode("ascii")
        return schemas.ArtifactsResponse(
            experiment_id=job.id, text_files=text_files, binary_files_b64=binary_files
        )

    @app.post("/partitions", response_model=schemas.PartitionResponse)
    def partition_dataset(request: schemas.PartitionRequest):
        try:
            spec = _partition_spec_from_model(request.spec)
            train = parse_csv(request.train_csv, header=request.header, origin="train_csv")
            test = parse_csv(request.test_csv, header=request.header, origin="test_csv")
            nodes = partition(train, test, spec)
        except EflError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        splits = [
            schemas.NodeSplit(
                node_id=n.node_id,
                train_csv=dataset_to_csv(n.train),
                test_csv=dataset_to_csv(n.test),
                train_counts=[int(c) for c in n.train.label_counts()],
                test_counts=[int(c) for c in n.test.label_counts()],
            )
            for n in nodes
        ]
        table = partition_count_table(
            [tuple(s.train_counts) for s in splits], [tuple(s.test_counts) for s in splits]
        )
        return schemas.PartitionResponse(
            nodes=splits,
            table_text=table,
            unassigned_train=train.n - sum(n.train.n for n in nodes),
            unassigned_test=test.n - sum(n.test.n for n in nodes),
        )

    @app.post("/reports", response_model=schemas.ReportResponse)
    def build_report(request: schemas.ReportRequest):
        try:
            trace = FederationTrace.from_dict(request.trace)
            bundle = build_report_bundle(trace, svg=request.svg)
        except (EflError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed trace: {exc}") from None
        return schemas.ReportResponse(
            tables={
                name: schemas.TableBundle(csv=t["csv"], text=t["text"], svg=t["svg"])
                for name, t in bundle.items()
            }
        )

    return app


app = create_app()
