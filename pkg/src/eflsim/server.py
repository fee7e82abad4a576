"""Server-side orchestration: the round loop, aggregation, and stopping rule.

Each round every node produces a report; the server aggregates the local
ensembles into a fresh global model and broadcasts it for the next round.
The loop breaks as soon as no node changed its best-two pair (compared as
unordered label sets), or at the safety cap. Node work inside a round may
run on a thread pool; per-node seeds are derived from (master seed, round,
node id), so the schedule cannot influence any result.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .data import (
    CsvSource,
    DataSource,
    DirichletSkew,
    LabeledDataset,
    PartitionSpec,
    ProportionTable,
    SyntheticSource,
    UniformIID,
    load_source,
    partition,
)
from .ensemble import make_gel
from .errors import ConfigError, ContractViolation, EflError, with_context
from .learners import LearnerConfig
from .metrics import POSITIVE_CLASS, ScoreSet, confusion, scores
from .models import FusionRule, ModelTree, predict
from .node import NodeState, node_first_round, node_next_round
from .seeding import derive_seed
from .transport import (
    Network,
    NodeReport,
    decode_broadcast,
    decode_node_report,
    encode_broadcast,
    encode_node_report,
    make_broadcast,
    serialize_model,
)

TERMINATION_B2M_STABLE = "b2m_stable"
TERMINATION_MAX_ROUNDS = "max_rounds"

THREADS_ENV_VAR = "EFLSIM_THREADS"


@dataclass(frozen=True)
class FederationConfig:
    """Everything a federation run needs; fully determines the trace."""

    n_nodes: int
    roster: tuple[LearnerConfig, ...]
    source: DataSource
    partition_spec: PartitionSpec
    fusion: FusionRule = FusionRule.MAX_PROB
    max_rounds: int = 50
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        if self.n_nodes < 2:
            raise ConfigError(f"need at least 2 nodes, got {self.n_nodes}")
        if len(self.roster) <= 2:
            raise ConfigError(f"roster must have more than 2 members, got {len(self.roster)}")
        if self.max_rounds < 1:
            raise ConfigError(f"max_rounds must be >= 1, got {self.max_rounds}")
        spec_nodes = getattr(self.partition_spec, "n_nodes", None)
        if spec_nodes is not None and spec_nodes != self.n_nodes:
            raise ConfigError(
                f"partition spec covers {spec_nodes} nodes, config says {self.n_nodes}"
            )

    def echo(self) -> dict:
        """JSON-able snapshot sufficient to rerun this federation."""
        from .transport import _config_to_doc  # canonical config encoding

        return {
            "n_nodes": self.n_nodes,
            "fusion": self.fusion.value,
            "max_rounds": self.max_rounds,
            "master_seed": self.master_seed,
            "roster": [_config_to_doc(c) for c in self.roster],
            "source": _source_doc(self.source),
            "partition": _partition_doc(self.partition_spec),
        }


def _source_doc(source: DataSource) -> dict:
    if isinstance(source, SyntheticSource):
        return {
            "kind": "synthetic",
            "train_per_label": list(source.train_per_label),
            "test_per_label": list(source.test_per_label),
            "features": source.n_features,
            "separation": source.separation,
            "label_shift": [list(r) for r in source.label_shift] if source.label_shift else None,
        }
    if isinstance(source, CsvSource):
        return {
            "kind": "csv",
            "train_path": source.train_path,
            "test_path": source.test_path,
            "header": source.header,
        }
    raise ContractViolation(f"unknown data source {type(source).__name__}")


def _partition_doc(spec: PartitionSpec) -> dict:
    if isinstance(spec, UniformIID):
        return {"strategy": "uniform-iid", "n_nodes": spec.n_nodes, "seed": spec.seed}
    if isinstance(spec, DirichletSkew):
        return {
            "strategy": "dirichlet",
            "n_nodes": spec.n_nodes,
            "alpha": spec.alpha,
            "seed": spec.seed,
        }
    if isinstance(spec, ProportionTable):
        return {
            "strategy": "proportion-table",
            "fractions": spec.fractions,
            "train": [list(r) for r in spec.train],
            "test": [list(r) for r in spec.test],
            "seed": spec.seed,
        }
    raise ContractViolation(f"unknown partition spec {type(spec).__name__}")


@dataclass(frozen=True)
class NodeRound:
    """One node's slice of a round record."""

    node_id: int
    accuracy_map: dict[str, float]
    b2m_labels: tuple[str, str]
    b2m_accuracies: tuple[float, float]
    lel_accuracy: float
    changed: bool


@dataclass(frozen=True)
class RoundRecord:
    round_no: int
    nodes: tuple[NodeRound, ...]
    gel_label: str | None


@dataclass(frozen=True)
class FederationTrace:
    """Primary output: per-round results plus provenance and channel costs."""

    config: dict
    rounds: tuple[RoundRecord, ...]
    termination: str
    final_gel: ModelTree | None
    communication: dict[int, int] = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def to_dict(self) -> dict:
        final = None
        if self.final_gel is not None:
            blob = serialize_model(self.final_gel)
            final = {
                "label": self.final_gel.id.label,
                "version": self.final_gel.id.version,
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        return {
            "schema": "eflsim/1",
            "config": self.config,
            "termination": self.termination,
            "rounds": [
                {
                    "round": rec.round_no,
                    "gel_label": rec.gel_label,
                    "nodes": [
                        {
                            "node_id": n.node_id,
                            "accuracy_map": n.accuracy_map,
                            "b2m_labels": list(n.b2m_labels),
                            "b2m_accuracies": list(n.b2m_accuracies),
                            "lel_accuracy": n.lel_accuracy,
                            "changed": n.changed,
                        }
                        for n in rec.nodes
                    ],
                }
                for rec in self.rounds
            ],
            "communication_bytes": {str(r): b for r, b in sorted(self.communication.items())},
            "final_gel": final,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "FederationTrace":
        """Rehydrate a persisted trace; the final model stays a reference."""
        if doc.get("schema") != "eflsim/1":
            raise ContractViolation(f"unsupported trace schema {doc.get('schema')!r}")
        rounds = tuple(
            RoundRecord(
                rec["round"],
                tuple(
                    NodeRound(
                        n["node_id"],
                        dict(n["accuracy_map"]),
                        tuple(n["b2m_labels"]),
                        tuple(n["b2m_accuracies"]),
                        n["lel_accuracy"],
                        n["changed"],
                    )
                    for n in rec["nodes"]
                ),
                rec["gel_label"],
            )
            for rec in doc["rounds"]
        )
        communication = {int(k): v for k, v in doc.get("communication_bytes", {}).items()}
        return cls(doc["config"], rounds, doc["termination"], None, communication)


class ModelArchive:
    """Checkpoint collector: every model a trace number depends on, by name."""

    def __init__(self):
        self.models: dict[str, ModelTree] = {}

    def add(self, name: str, model: ModelTree) -> None:
        self.models[name] = model

    def items(self):
        return sorted(self.models.items())


def should_stop(
    reports: Sequence[NodeReport], previous: Sequence[NodeReport]
) -> bool:
    """True iff every node kept the same best-two label pair (as a set)."""
    current = {r.node_id: set(r.b2m_labels()) for r in reports}
    prior = {r.node_id: set(r.b2m_labels()) for r in previous}
    if current.keys() != prior.keys():
        raise ContractViolation(
            f"rounds cover different nodes: {sorted(current)} vs {sorted(prior)}"
        )
    return all(current[node] == prior[node] for node in current)


def evaluate_global(
    gel: ModelTree,
    pooled_test: LabeledDataset,
    averaging: str = POSITIVE_CLASS,
    positive_label: int = 1,
) -> ScoreSet:
    """Scores of a global model on the pooled (all-nodes) test set."""
    cm = confusion(
        predict(gel, pooled_test.features), pooled_test.labels, pooled_test.n_classes, positive_label
    )
    return scores(cm, averaging)


def resolve_threads(n_nodes: int, threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV_VAR)
        if raw is not None:
            try:
                threads = int(raw)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV_VAR}={raw!r} is not an integer") from None
        else:
            threads = min(n_nodes, os.cpu_count() or 1)
    if threads < 1:
        raise ConfigError(f"thread cap must be >= 1, got {threads}")
    return min(threads, n_nodes)


def _run_nodes(work: Callable[[int], NodeState], n_nodes: int, threads: int) -> list[NodeState]:
    if threads <= 1:
        return [work(i) for i in range(n_nodes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(n_nodes)))


def _node_entry(report: NodeReport) -> NodeRound:
    return NodeRound(
        node_id=report.node_id,
        accuracy_map=dict(report.accuracy_map),
        b2m_labels=report.b2m_labels(),
        b2m_accuracies=(report.b2m[0][1], report.b2m[1][1]),
        lel_accuracy=report.lel_accuracy,
        changed=report.changed,
    )


def _archive_round(archive: ModelArchive | None, round_no, states, prev_gel_label) -> None:
    if archive is None:
        return
    for state in states:
        for model_id, model in state.model_store.items():
            if round_no == 1 and model_id.origin.kind == "roster":
                archive.add(f"r1-n{state.node_id}-{model.config.label}", model)
            elif round_no > 1 and model_id.label == prev_gel_label:
                archive.add(f"r{round_no}-n{state.node_id}-gprime", model)


def run_federation(
    config: FederationConfig,
    *,
    archive: ModelArchive | None = None,
    threads: int | None = None,
    config_echo: dict | None = None,
) -> FederationTrace:
    """Run the full protocol and return its trace.

    ``archive`` (optional) collects every checkpoint the trace references.
    ``config_echo`` overrides the config snapshot embedded in the trace,
    letting callers store their own configuration document instead.
    """
    threads = resolve_threads(config.n_nodes, threads)
    train, test = load_source(config.source, config.master_seed)
    node_data = partition(train, test, config.partition_spec)

    states = [NodeState(part.node_id, part) for part in node_data]
    names = [f"node-{part.node_id}" for part in node_data]
    network = Network()
    network.register("server")
    for name in names:
        network.register(name)

    records: list[RoundRecord] = []
    prev_reports: list[NodeReport] | None = None
    gel = None
    termination = TERMINATION_MAX_ROUNDS

    for round_no in range(1, config.max_rounds + 1):
        network.start_round(round_no)
        current = states
        seeds = [derive_seed(config.master_seed, round_no, s.node_id) for s in states]

        if round_no == 1:
            def work(i: int) -> NodeState:
                report, new_state = node_first_round(
                    current[i], config.roster, config.fusion, seeds[i]
                )
                network.send(names[i], "server", encode_node_report(report))
                return new_state
        else:
            def work(i: int) -> NodeState:
                broadcast = decode_broadcast(network.recv(names[i], "server"))
                report, new_state = node_next_round(
                    current[i], broadcast.gel_tree(), config.fusion, seeds[i]
                )
                network.send(names[i], "server", encode_node_report(report))
                return new_state

        try:
            states = _run_nodes(work, config.n_nodes, threads)
        except EflError as exc:
            network.close()
            raise with_context(exc, f"federation round {round_no}") from exc

        reports = [decode_node_report(network.recv("server", name)) for name in names]
        _archive_round(archive, round_no, states, gel.id.label if gel else None)
        entries = tuple(_node_entry(rep) for rep in reports)

        if round_no >= 2 and prev_reports is not None and should_stop(reports, prev_reports):
            records.append(RoundRecord(round_no, entries, None))
            termination = TERMINATION_B2M_STABLE
            break

        gel = make_gel([rep.lel_tree() for rep in reports], config.fusion, round_no)
        if archive is not None:
            archive.add(f"gel-r{round_no}", gel)
        records.append(RoundRecord(round_no, entries, gel.id.label))

        if round_no < config.max_rounds:
            payload = encode_broadcast(make_broadcast(round_no, gel))
            for name in names:
                network.send("server", name, payload)
        prev_reports = reports

    network.close()
    return FederationTrace(
        config=config_echo if config_echo is not None else config.echo(),
        rounds=tuple(records),
        termination=termination,
        final_gel=gel,
        communication=dict(network.bytes_per_round),
    )
