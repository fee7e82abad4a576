"""Base-learner roster and the shared minibatch training loop.

Every trainable model is a softmax MLP over float64 features, optimized by
Adam on categorical cross-entropy with early stopping on a validation split
carved from the training set. The same loop serves both first-round training
(random init) and fine-tuning (init from existing parameters), which keeps
the two paths bit-comparable.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, ContractViolation, DegenerateDataError, DivergenceError
from .models import (
    EnsembleModel,
    LeafModel,
    ModelId,
    ModelOrigin,
    ModelTree,
    ParamVector,
    bump_version,
    param_count,
    roster_origin,
    unique_base_leaves,
)
from .seeding import derive_seed, make_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Matches the published fine-tuning recipe for pretrained networks; far too
# slow for random-init desk-scale models, hence not the default.
PAPER_FINETUNE_LEARNING_RATE = 1e-5


@dataclass(frozen=True)
class LearnerConfig:
    """Architecture and training hyperparameters for one roster member."""

    label: str
    hidden_layers: tuple[int, ...] = ()
    activation: str = "relu"
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 20
    early_stop_patience: int = 3
    validation_fraction: float = 0.1
    l2_penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if not self.label:
            raise ConfigError("learner config needs a non-empty label")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError(f"hidden layer widths must be >= 1, got {self.hidden_layers}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        if self.l2_penalty < 0:
            raise ConfigError(f"l2_penalty must be >= 0, got {self.l2_penalty}")

    def layer_dims(self, input_dim: int, n_classes: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden_layers, n_classes)


@dataclass(frozen=True)
class TrainOutcome:
    model: LeafModel
    epochs_run: int
    best_validation_loss: float
    stopped_early: bool


def default_roster() -> tuple[LearnerConfig, ...]:
    """The eight desk-scale roster members competing at every node."""
    return (
        LearnerConfig("mlp-1", hidden_layers=()),
        LearnerConfig("mlp-2", hidden_layers=(8,)),
        LearnerConfig("mlp-3", hidden_layers=(16,)),
        LearnerConfig("mlp-4", hidden_layers=(32,)),
        LearnerConfig("mlp-5", hidden_layers=(16, 16)),
        LearnerConfig("mlp-6", hidden_layers=(32, 16)),
        LearnerConfig("mlp-7", hidden_layers=(8,), activation="tanh"),
        LearnerConfig("mlp-8", hidden_layers=(64,)),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _views(values: np.ndarray, layer_dims: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    offset = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = values[offset : offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views


def _forward(weights: list[tuple[np.ndarray, np.ndarray]], activation: str, x: np.ndarray):
    """Returns (logits, per-layer post-activation inputs) for backprop."""
    inputs = [x]
    h = x
    for w, b in weights[:-1]:
        z = h @ w + b
        h = np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)
        inputs.append(h)
    w_out, b_out = weights[-1]
    return inputs[-1] @ w_out + b_out, inputs


def _loss_and_grad(config, values, layer_dims, features, labels) -> tuple[float, np.ndarray]:
    weights = _views(values, layer_dims)
    logits, inputs = _forward(weights, config.activation, features)
    n = features.shape[0]
    log_probs = _log_softmax(logits)
    loss = -float(log_probs[np.arange(n), labels].mean())
    if config.l2_penalty:
        loss += 0.5 * config.l2_penalty * sum(float((w * w).sum()) for w, _ in weights)

    grad = np.empty_like(values)
    delta = np.exp(log_probs)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    offset = values.size
    for layer in range(len(weights) - 1, -1, -1):
        w, _ = weights[layer]
        h_in = inputs[layer]
        grad_b = delta.sum(axis=0)
        grad_w = h_in.T @ delta
        if config.l2_penalty:
            grad_w = grad_w + config.l2_penalty * w
        offset -= grad_b.size
        grad[offset : offset + grad_b.size] = grad_b
        offset -= grad_w.size
        grad[offset : offset + grad_w.size] = grad_w.ravel()
        if layer > 0:
            delta = delta @ w.T
            if config.activation == "relu":
                delta = delta * (h_in > 0)
            else:
                delta = delta * (1.0 - h_in * h_in)
    return loss, grad


def loss_and_gradient(
    config: LearnerConfig,
    params: ParamVector,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy (plus L2 on weights) and its flat gradient."""
    return _loss_and_grad(config, params.values, params.layer_dims, features, labels)


def _validation_loss(config, values, layer_dims, features, labels) -> float:
    logits, _ = _forward(_views(values, layer_dims), config.activation, features)
    log_probs = _log_softmax(logits)
    return -float(log_probs[np.arange(features.shape[0]), labels].mean())


def glorot_init(layer_dims: Sequence[int], rng: np.random.Generator) -> ParamVector:
    """Uniform [-sqrt(6/(fan_in+fan_out)), +...] weights, zero biases."""
    values = np.zeros(param_count(layer_dims), dtype=np.float64)
    offset = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        values[offset : offset + fan_in * fan_out] = rng.uniform(
            -bound, bound, size=fan_in * fan_out
        )
        offset += fan_in * fan_out + fan_out  # biases stay zero
    return ParamVector(values, tuple(layer_dims))


def _check_trainable(train: LabeledDataset, config: LearnerConfig) -> None:
    counts = np.bincount(train.labels, minlength=train.n_classes)
    if np.count_nonzero(counts) < 2:
        raise DegenerateDataError(
            f"training set holds a single label ({int(train.labels[0])}); cannot fit a classifier"
        )
    if counts.min() < 2:
        lacking = int(np.argmin(counts))
        raise DegenerateDataError(
            f"training set has {int(counts[lacking])} sample(s) of label {lacking}; need >= 2 per label"
        )
    n_val = math.ceil(config.validation_fraction * train.n)
    n_fit = train.n - n_val
    if config.batch_size > n_fit:
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds the {n_fit} training samples left "
            f"after the validation split"
        )


def _fit(
    config: LearnerConfig,
    train: LabeledDataset,
    seed: int,
    init: ParamVector | None,
    model_id: ModelId,
) -> TrainOutcome:
    _check_trainable(train, config)
    rng = make_rng(seed)

    perm = rng.permutation(train.n)
    n_val = math.ceil(config.validation_fraction * train.n)
    fit_idx, val_idx = perm[: train.n - n_val], perm[train.n - n_val :]
    x_fit, y_fit = train.features[fit_idx], train.labels[fit_idx]
    x_val, y_val = train.features[val_idx], train.labels[val_idx]

    layer_dims = config.layer_dims(train.dim, train.n_classes)
    if init is None:
        values = glorot_init(layer_dims, rng).values.copy()
    else:
        if tuple(init.layer_dims) != layer_dims:
            raise ContractViolation(
                f"initial parameters shaped {init.layer_dims}, dataset requires {layer_dims}"
            )
        values = init.values.copy()

    m = np.zeros_like(values)
    v = np.zeros_like(values)
    step = 0
    best_loss = _validation_loss(config, values, layer_dims, x_val, y_val)
    best_values = values.copy()
    bad_epochs = 0
    epochs_run = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(fit_idx))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grad = _loss_and_grad(config, values, layer_dims, x_fit[batch], y_fit[batch])
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss for {model_id.label!r} at epoch {epoch}", epoch
                )
            step += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1**step)
            v_hat = v / (1.0 - ADAM_BETA2**step)
            values = values - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        epochs_run = epoch

        val_loss = _validation_loss(config, values, layer_dims, x_val, y_val)
        if not math.isfinite(val_loss):
            raise DivergenceError(
                f"non-finite validation loss for {model_id.label!r} at epoch {epoch}", epoch
            )
        if val_loss < best_loss:
            best_loss = val_loss
            best_values = values.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                stopped_early = True
                break

    model = LeafModel(model_id, config, ParamVector(best_values, layer_dims))
    return TrainOutcome(model, epochs_run, best_loss, stopped_early)


def train(
    config: LearnerConfig,
    train_set: LabeledDataset,
    seed: int,
    *,
    label: str | None = None,
    origin: ModelOrigin | None = None,
) -> TrainOutcome:
    """Train ``config`` from random init; deterministic in (config, data, seed)."""
    model_id = ModelId(label or config.label, 0, origin or roster_origin())
    return _fit(config, train_set, seed, None, model_id)


def _apply_overrides(config: LearnerConfig, overrides: Mapping[str, object] | None) -> LearnerConfig:
    if not overrides:
        return config
    unknown = set(overrides) - {f.name for f in dataclasses.fields(LearnerConfig)}
    if unknown:
        raise ConfigError(f"unknown learner config overrides: {sorted(unknown)}")
    return dataclasses.replace(config, **overrides)


def fine_tune(
    model: ModelTree,
    train_set: LabeledDataset,
    config_overrides: Mapping[str, object] | None,
    seed: int,
    *,
    stamp: int | None = None,
) -> ModelTree:
    """Continue training every unique leaf; returns a new tree, input untouched.

    A shared leaf (same label and version appearing in several places) is
    trained once and substituted everywhere. ``max_epochs=0`` in the
    overrides skips optimization entirely but still bumps versions.
    ``stamp``, when given, encodes the fine-tuning step into the new
    versions so parallel lineages stay distinguishable.
    """
    if model.input_dim != train_set.dim:
        raise ContractViolation(
            f"model expects {model.input_dim} features, training data has {train_set.dim}"
        )
    overrides = dict(config_overrides) if config_overrides else {}
    zero_step = overrides.get("max_epochs") == 0
    if zero_step:
        del overrides["max_epochs"]

    retrained: dict[tuple[str, int], LeafModel] = {}
    for leaf in unique_base_leaves(model):
        new_id = ModelId(leaf.id.label, bump_version(leaf.id.version, stamp), leaf.id.origin)
        if zero_step:
            retrained[leaf.id.key] = LeafModel(new_id, _apply_overrides(leaf.config, overrides), leaf.params)
            continue
        config = _apply_overrides(leaf.config, overrides)
        leaf_seed = derive_seed(seed, leaf.id.label, leaf.id.version)
        outcome = _fit(config, train_set, leaf_seed, leaf.params, new_id)
        retrained[leaf.id.key] = outcome.model

    def rebuild(node: ModelTree) -> ModelTree:
        if isinstance(node, LeafModel):
            return retrained[node.id.key]
        new_id = ModelId(node.id.label, bump_version(node.id.version, stamp), node.id.origin)
        return EnsembleModel(new_id, tuple(rebuild(c) for c in node.children), node.fusion)

    return rebuild(model)
