"""Best-two selection and construction of local/global ensembles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .data import LabeledDataset
from .errors import ContractViolation
from .metrics import ScoreSet, confusion, scores
from .models import (
    EnsembleModel,
    FusionRule,
    ModelId,
    ModelTree,
    global_origin,
    predict,
)


@dataclass(frozen=True)
class EvaluatedModel:
    """A model plus its scores on one fixed dataset (identified by hash)."""

    model: ModelTree
    accuracy: float
    score_set: ScoreSet
    evaluated_on: str

    @property
    def label(self) -> str:
        return self.model.id.label


def evaluate_model(
    model: ModelTree, dataset: LabeledDataset, positive_label: int = 1
) -> EvaluatedModel:
    cm = confusion(predict(model, dataset.features), dataset.labels, dataset.n_classes, positive_label)
    score_set = scores(cm)
    return EvaluatedModel(model, score_set.accuracy, score_set, dataset.fingerprint())


def selection_key(candidate: EvaluatedModel) -> tuple:
    """Sort key: higher accuracy first, then earlier origin, then label."""
    return (-candidate.accuracy, candidate.model.id.origin.round_created, candidate.label)


def choose_best2(candidates: Sequence[EvaluatedModel]) -> tuple[EvaluatedModel, EvaluatedModel]:
    """The two best candidates, ordered; ties favor older origin, then label."""
    if len(candidates) < 2:
        raise ContractViolation(f"best-two selection needs >= 2 candidates, got {len(candidates)}")
    fingerprints = {c.evaluated_on for c in candidates}
    if len(fingerprints) > 1:
        raise ContractViolation("candidates were evaluated on different datasets")
    ranked = sorted(candidates, key=selection_key)
    return ranked[0], ranked[1]


def make_lel(
    pair: tuple[EvaluatedModel, EvaluatedModel],
    fusion: FusionRule,
    round_no: int,
    node_id: int,
) -> EnsembleModel:
    """Fuse a node's best two into its local ensemble for this round."""
    first, second = pair
    return EnsembleModel(
        ModelId(f"LEL@n{node_id}r{round_no}", 0, global_origin(round_no)),
        (first.model, second.model),
        fusion,
    )


def make_gel(lels: Sequence[ModelTree], fusion: FusionRule, round_no: int) -> EnsembleModel:
    """Fuse the per-node local ensembles (given in node-id order) into the global one."""
    if not lels:
        raise ContractViolation("cannot build a global ensemble from zero local ensembles")
    return EnsembleModel(
        ModelId(f"GEL@r{round_no}", 0, global_origin(round_no)),
        tuple(lels),
        fusion,
    )
