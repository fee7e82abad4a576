"""Recursive model trees: parametric leaves, fused ensembles, and identity.

A model is either a Leaf (a softmax MLP described by a config and a flat
parameter vector) or an Ensemble of child models combined by a fusion rule.
Local ensembles, global ensembles and plain trained models are all the same
type, so nesting (an ensemble whose member is an earlier global ensemble)
costs nothing. Trees are immutable after construction; fine-tuning builds
new trees with bumped versions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Sequence, Union

import numpy as np

from .errors import ContractViolation

if TYPE_CHECKING:
    from .learners import LearnerConfig


class FusionRule(enum.Enum):
    """How an ensemble combines its children's per-class probabilities."""

    MAX_PROB = "max"
    MEAN_PROB = "mean"

    @classmethod
    def from_name(cls, name: str) -> "FusionRule":
        for rule in cls:
            if rule.value == name:
                return rule
        raise ContractViolation(f"unknown fusion rule {name!r}; expected 'max' or 'mean'")


@dataclass(frozen=True)
class ModelOrigin:
    """Where a model came from: a roster slot or a global-round aggregation."""

    kind: str  # "roster" | "global"
    index: int  # roster position (1..m, 0 = unrostered) or the creating round

    def __post_init__(self):
        if self.kind not in ("roster", "global"):
            raise ContractViolation(f"origin kind must be 'roster' or 'global', got {self.kind!r}")
        if self.index < 0:
            raise ContractViolation("origin index must be non-negative")

    @property
    def round_created(self) -> int:
        """Round ordering used by tie-breaks; roster models predate every global model."""
        return 0 if self.kind == "roster" else self.index


def roster_origin(index: int = 0) -> ModelOrigin:
    return ModelOrigin("roster", index)


def global_origin(round_no: int) -> ModelOrigin:
    return ModelOrigin("global", round_no)


@dataclass(frozen=True)
class ModelId:
    """Stable provenance identity. Equal (label, version) means equal parameters."""

    label: str
    version: int = 0
    origin: ModelOrigin = ModelOrigin("roster", 0)

    def __post_init__(self):
        if not self.label:
            raise ContractViolation("model label must be non-empty")
        if self.version < 0:
            raise ContractViolation("model version must be non-negative")

    @property
    def key(self) -> tuple[str, int]:
        return (self.label, self.version)


# Version bumps inside the federation encode the fine-tuning step so that the
# same leaf fine-tuned by different nodes (or in different rounds) never
# collides on (label, version). Codes stay below the stride.
VERSION_STRIDE = 2**20
_NODE_STRIDE = 2**10


def lineage_stamp(round_no: int, node_id: int) -> int:
    if not (0 < node_id < _NODE_STRIDE):
        raise ContractViolation(f"node id {node_id} out of range for lineage stamps")
    if not (0 < round_no < _NODE_STRIDE):
        raise ContractViolation(f"round {round_no} out of range for lineage stamps")
    return round_no * _NODE_STRIDE + node_id


def bump_version(version: int, stamp: int | None) -> int:
    """Next version along a fine-tuning lineage; strictly increasing."""
    if stamp is None:
        return version + 1
    if not (0 < stamp < VERSION_STRIDE):
        raise ContractViolation("lineage stamp out of range")
    return version * VERSION_STRIDE + stamp


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameters plus the layer widths that shape them.

    ``layer_dims`` lists (input, hidden..., classes); the flat layout is
    W1 (in*out, row major), b1, W2, b2, ... in order.
    """

    values: np.ndarray
    layer_dims: tuple[int, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ContractViolation("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("parameter vector contains non-finite entries")
        expected = param_count(self.layer_dims)
        if values.size != expected:
            raise ContractViolation(
                f"parameter vector has {values.size} entries, layer dims {self.layer_dims} "
                f"require {expected}"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

    @property
    def size(self) -> int:
        return int(self.values.size)


def param_count(layer_dims: Sequence[int]) -> int:
    dims = list(layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ContractViolation(f"layer dims must list at least (input, classes) >= 1, got {dims}")
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(dims[:-1], dims[1:]))


def layer_views(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views per layer into the flat vector. Read-only."""
    views = []
    offset = 0
    dims = params.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = params.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params.values[offset : offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views


@dataclass(frozen=True)
class LeafModel:
    """A trained softmax MLP: the only node kind that holds parameters."""

    id: ModelId
    config: "LearnerConfig"
    params: ParamVector

    def __post_init__(self):
        expected = (self.config.layer_dims(self.params.layer_dims[0], self.params.layer_dims[-1]))
        if tuple(self.params.layer_dims) != expected:
            raise ContractViolation(
                f"parameter dims {self.params.layer_dims} do not match config layout {expected}"
            )

    @property
    def input_dim(self) -> int:
        return self.params.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.params.layer_dims[-1]


@dataclass(frozen=True)
class EnsembleModel:
    """A fusion of child models; children may themselves be ensembles."""

    id: ModelId
    children: tuple["ModelTree", ...]
    fusion: FusionRule

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ContractViolation(f"ensemble {self.id.label!r} must have at least one child")
        dims = {(c.input_dim, c.n_classes) for c in self.children}
        if len(dims) > 1:
            raise ContractViolation(
                f"ensemble {self.id.label!r} mixes child shapes {sorted(dims)}"
            )

    @property
    def input_dim(self) -> int:
        return self.children[0].input_dim

    @property
    def n_classes(self) -> int:
        return self.children[0].n_classes


ModelTree = Union[LeafModel, EnsembleModel]


def _activation(name: str):
    if name == "relu":
        return lambda z: np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh
    raise ContractViolation(f"unknown activation {name!r}")


def leaf_logits(leaf: LeafModel, features: np.ndarray) -> np.ndarray:
    act = _activation(leaf.config.activation)
    layers = layer_views(leaf.params)
    h = features
    for w, b in layers[:-1]:
        h = act(h @ w + b)
    w_out, b_out = layers[-1]
    return h @ w_out + b_out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def fuse(child_probs: Sequence[np.ndarray], rule: FusionRule) -> np.ndarray:
    """Combine per-child probability matrices into one matrix.

    MAX_PROB takes the per-class maximum across children (rows need not sum
    to one afterwards); MEAN_PROB takes the arithmetic mean.
    """
    if len(child_probs) == 0:
        raise ContractViolation("fuse requires at least one child matrix")
    shape = child_probs[0].shape
    for i, p in enumerate(child_probs):
        if p.shape != shape:
            raise ContractViolation(
                f"child probability matrix {i} has shape {p.shape}, expected {shape}"
            )
    stacked = np.stack(child_probs, axis=0)
    if rule is FusionRule.MAX_PROB:
        return stacked.max(axis=0)
    if rule is FusionRule.MEAN_PROB:
        return np.add.reduce(stacked, axis=0) / len(child_probs)
    raise ContractViolation(f"unknown fusion rule {rule!r}")


def _check_features(model: ModelTree, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ContractViolation(f"features must be a non-empty 2-d matrix, got shape {features.shape}")
    if features.shape[1] != model.input_dim:
        raise ContractViolation(
            f"model {model.id.label!r} expects {model.input_dim} features, got {features.shape[1]}"
        )
    return features


def predict_proba(model: ModelTree, features: np.ndarray) -> np.ndarray:
    """Per-row class probabilities; ensemble rows are the fusion of children."""
    features = _check_features(model, features)
    if isinstance(model, LeafModel):
        return softmax(leaf_logits(model, features))
    return fuse([predict_proba(child, features) for child in model.children], model.fusion)


def predict(model: ModelTree, features: np.ndarray) -> np.ndarray:
    """Argmax labels over fused probabilities; ties go to the lowest index."""
    return np.argmax(predict_proba(model, features), axis=1)


def iter_nodes(model: ModelTree) -> Iterator[ModelTree]:
    """Preorder traversal."""
    stack = [model]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, EnsembleModel):
            stack.extend(reversed(node.children))


def unique_base_leaves(model: ModelTree) -> list[LeafModel]:
    """Leaves in preorder, deduplicated by (label, version), first kept."""
    seen: set[tuple[str, int]] = set()
    leaves = []
    for node in iter_nodes(model):
        if isinstance(node, LeafModel) and node.id.key not in seen:
            seen.add(node.id.key)
            leaves.append(node)
    return leaves


def count_leaf_occurrences(model: ModelTree) -> int:
    return sum(1 for node in iter_nodes(model) if isinstance(node, LeafModel))


def trees_identical(a: ModelTree, b: ModelTree) -> bool:
    """Structural equality: ids, configs, fusion rules and bit-exact parameters."""
    if type(a) is not type(b) or a.id != b.id:
        return False
    if isinstance(a, LeafModel):
        return (
            a.config == b.config
            and a.params.layer_dims == b.params.layer_dims
            and a.params.values.tobytes() == b.params.values.tobytes()
        )
    return (
        a.fusion is b.fusion
        and len(a.children) == len(b.children)
        and all(trees_identical(x, y) for x, y in zip(a.children, b.children))
    )
