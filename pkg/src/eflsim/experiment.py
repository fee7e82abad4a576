"""End-to-end experiment execution and artifact assembly.

Wraps a federation run with the evaluations a report needs (per-round global
models scored on the pooled test set, the best first-round single model as a
baseline) and renders everything into the on-disk artifact set: trace.json,
rounds.csv, summary.json, and the model checkpoints.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from . import __version__
from .data import LabeledDataset, concat_datasets, load_source, partition
from .metrics import POSITIVE_CLASS, WEIGHTED
from .reports import rounds_csv
from .server import (
    FederationConfig,
    FederationTrace,
    ModelArchive,
    evaluate_global,
    run_federation,
)
from .transport import MODEL_FILE_SUFFIX, serialize_model


@dataclass(frozen=True)
class ExperimentResult:
    trace: FederationTrace
    summary: dict
    archive: ModelArchive
    pooled_test: LabeledDataset


def _pooled_scores(model, pooled) -> dict:
    return {
        "positive_class": evaluate_global(model, pooled, POSITIVE_CLASS).as_dict(),
        "weighted": evaluate_global(model, pooled, WEIGHTED).as_dict(),
    }


def build_summary(trace: FederationTrace, archive: ModelArchive, pooled: LabeledDataset) -> dict:
    gel_rounds = []
    for record in trace.rounds:
        if record.gel_label is None:
            continue
        gel = archive.models[f"gel-r{record.round_no}"]
        gel_rounds.append(
            {
                "round": record.round_no,
                "label": record.gel_label,
                "pooled": _pooled_scores(gel, pooled),
            }
        )

    baseline = None
    for name, model in archive.items():
        if not name.startswith("r1-n"):
            continue
        accuracy = evaluate_global(model, pooled).accuracy
        if baseline is None or accuracy > baseline["pooled_accuracy"]:
            baseline = {
                "checkpoint": name,
                "label": model.id.label,
                "pooled_accuracy": accuracy,
            }

    final_gel = trace.final_gel
    final = {
        "label": final_gel.id.label,
        "pooled": _pooled_scores(final_gel, pooled),
    }
    summary = {
        "schema": "eflsim/1",
        "artifact_version": __version__,
        "master_seed": trace.config.get("master_seed"),
        "termination": trace.termination,
        "n_rounds": trace.n_rounds,
        "gel_rounds": gel_rounds,
        "final_gel": final,
        "best_round1_model": baseline,
    }
    if baseline is not None:
        summary["federation_gain"] = (
            final["pooled"]["positive_class"]["accuracy"] - baseline["pooled_accuracy"]
        )
    return summary


def run_experiment(
    config: FederationConfig,
    *,
    config_echo: dict | None = None,
    threads: int | None = None,
) -> ExperimentResult:
    archive = ModelArchive()
    trace = run_federation(config, archive=archive, threads=threads, config_echo=config_echo)
    # rebuild the node split (deterministic) to evaluate on the pooled test set
    train, test = load_source(config.source, config.master_seed)
    nodes = partition(train, test, config.partition_spec)
    pooled = concat_datasets([n.test for n in nodes])
    summary = build_summary(trace, archive, pooled)
    return ExperimentResult(trace, summary, archive, pooled)


def build_artifacts(result: ExperimentResult) -> dict[str, bytes]:
    """Filename -> file content for everything a run writes to its output dir."""
    artifacts: dict[str, bytes] = {
        "trace.json": result.trace.to_json().encode("utf-8"),
        "rounds.csv": rounds_csv(result.trace).encode("utf-8"),
        "summary.json": (
            json.dumps(result.summary, sort_keys=True, indent=2) + "\n"
        ).encode("utf-8"),
    }
    for name, model in result.archive.items():
        artifacts[f"models/{name}{MODEL_FILE_SUFFIX}"] = serialize_model(model)
    return artifacts
