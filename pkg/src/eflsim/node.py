"""Node-side protocol: first-round roster training and later-round competition.

A node owns its data and model store. In round 1 it trains the whole roster,
keeps the best two and ships their fusion. In every later round it fine-tunes
the broadcast global model on its private training data and lets the result
compete against the two incumbents; incumbents are never retrained and their
cached test scores are reused verbatim.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .data import NodeData
from .ensemble import EvaluatedModel, choose_best2, evaluate_model, make_lel
from .errors import ContractViolation, EflError, ProtocolError, with_context
from .learners import LearnerConfig, fine_tune, train
from .metrics import ScoreSet
from .models import FusionRule, ModelId, ModelTree, lineage_stamp, roster_origin
from .seeding import derive_seed
from .transport import NodeReport, serialize_model


@dataclass(frozen=True)
class NodeState:
    """A node's protocol state between rounds; replaced, never mutated."""

    node_id: int
    data: NodeData
    round_no: int = 0
    b2m: tuple[tuple[ModelId, ScoreSet], ...] | None = None
    model_store: Mapping[ModelId, ModelTree] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.model_store is None:
            object.__setattr__(self, "model_store", {})
        if self.b2m is not None:
            for model_id, _ in self.b2m:
                if model_id not in self.model_store:
                    raise ContractViolation(
                        f"node {self.node_id}: best-two member {model_id.label!r} missing "
                        f"from the model store"
                    )

    def b2m_labels(self) -> tuple[str, str] | None:
        if self.b2m is None:
            return None
        return (self.b2m[0][0].label, self.b2m[1][0].label)


def instance_label(config_label: str, node_id: int) -> str:
    """Per-node label for a roster instance; nodes train their own copies."""
    return f"{config_label}@n{node_id}"


def _cached_candidate(state: NodeState, model_id: ModelId, score_set: ScoreSet) -> EvaluatedModel:
    return EvaluatedModel(
        state.model_store[model_id],
        score_set.accuracy,
        score_set,
        state.data.test.fingerprint(),
    )


def _report(
    state: NodeState,
    round_no: int,
    pair: tuple[EvaluatedModel, EvaluatedModel],
    accuracy_map: dict[str, float],
    fusion: FusionRule,
    previous_labels: tuple[str, str] | None,
) -> tuple[NodeReport, ModelTree, float]:
    lel = make_lel(pair, fusion, round_no, state.node_id)
    lel_accuracy = evaluate_model(lel, state.data.test).accuracy
    changed = previous_labels is None or set(previous_labels) != {c.label for c in pair}
    report = NodeReport(
        node_id=state.node_id,
        round_no=round_no,
        lel_blob=serialize_model(lel),
        b2m=tuple((c.model.id, c.accuracy) for c in pair),
        accuracy_map=accuracy_map,
        lel_accuracy=lel_accuracy,
        changed=changed,
    )
    return report, lel, lel_accuracy


def node_first_round(
    state: NodeState,
    roster: Sequence[LearnerConfig],
    fusion: FusionRule,
    seed: int,
) -> tuple[NodeReport, NodeState]:
    """Train the full roster, select the best two, and build the first LEL."""
    if state.round_no != 0:
        raise ProtocolError(f"node {state.node_id} already past round 0 ({state.round_no})")
    if len(roster) <= 2:
        raise ProtocolError(f"roster must have more than 2 members, got {len(roster)}")
    if len({c.label for c in roster}) != len(roster):
        raise ProtocolError("roster labels must be distinct")

    candidates = []
    store: dict[ModelId, ModelTree] = {}
    accuracy_map: dict[str, float] = {}
    for index, config in enumerate(roster, start=1):
        label = instance_label(config.label, state.node_id)
        try:
            outcome = train(
                config,
                state.data.train,
                derive_seed(seed, state.node_id, config.label),
                label=label,
                origin=roster_origin(index),
            )
        except EflError as exc:
            raise with_context(exc, f"node {state.node_id}, config {config.label!r}") from exc
        evaluated = evaluate_model(outcome.model, state.data.test)
        candidates.append(evaluated)
        store[outcome.model.id] = outcome.model
        accuracy_map[label] = evaluated.accuracy

    pair = choose_best2(candidates)
    report, _, _ = _report(state, 1, pair, accuracy_map, fusion, previous_labels=None)
    new_state = NodeState(
        node_id=state.node_id,
        data=state.data,
        round_no=1,
        b2m=tuple((c.model.id, c.score_set) for c in pair),
        model_store=store,
    )
    return report, new_state


def node_next_round(
    state: NodeState,
    gel_prev: ModelTree,
    fusion: FusionRule,
    seed: int,
) -> tuple[NodeReport, NodeState]:
    """Fine-tune the broadcast model and re-select the best two."""
    if state.round_no < 1 or state.b2m is None:
        raise ProtocolError(f"node {state.node_id} has not completed its first round")
    if gel_prev.input_dim != state.data.train.dim:
        raise ContractViolation(
            f"broadcast model expects {gel_prev.input_dim} features, node {state.node_id} "
            f"holds {state.data.train.dim}"
        )
    round_no = state.round_no + 1

    try:
        tuned = fine_tune(
            gel_prev,
            state.data.train,
            None,
            seed,
            stamp=lineage_stamp(round_no, state.node_id),
        )
    except EflError as exc:
        raise with_context(
            exc, f"node {state.node_id}, round {round_no}, fine-tuning {gel_prev.id.label!r}"
        ) from exc
    tuned_eval = evaluate_model(tuned, state.data.test)

    incumbents = [_cached_candidate(state, model_id, cached) for model_id, cached in state.b2m]
    accuracy_map = {c.label: c.accuracy for c in incumbents}
    accuracy_map[tuned_eval.label] = tuned_eval.accuracy

    pair = choose_best2([*incumbents, tuned_eval])
    report, _, _ = _report(
        state, round_no, pair, accuracy_map, fusion, previous_labels=state.b2m_labels()
    )
    store: dict[ModelId, ModelTree] = {c.model.id: c.model for c in pair}
    store.setdefault(tuned.id, tuned)
    new_state = NodeState(
        node_id=state.node_id,
        data=state.data,
        round_no=round_no,
        b2m=tuple((c.model.id, c.score_set) for c in pair),
        model_store=store,
    )
    return report, new_state
