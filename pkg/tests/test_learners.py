import dataclasses

import numpy as np
import pytest

from eflsim.data import generate_synthetic
from eflsim.errors import ConfigError, ContractViolation, DegenerateDataError
from eflsim.learners import (
    LearnerConfig,
    default_roster,
    fine_tune,
    glorot_init,
    loss_and_gradient,
    train,
)
from eflsim.models import (
    ModelId,
    ParamVector,
    lineage_stamp,
    predict,
    trees_identical,
    unique_base_leaves,
)

from _helpers import make_ensemble, make_leaf


def test_roster_is_eight_distinct_configs():
    roster = default_roster()
    assert len(roster) == 8
    assert len({c.label for c in roster}) == 8
    assert len({(c.hidden_layers, c.activation) for c in roster}) == 8
    assert [c.label for c in roster] == [f"mlp-{i}" for i in range(1, 9)]


def test_config_validation():
    with pytest.raises(ConfigError):
        LearnerConfig("bad", max_epochs=0)
    with pytest.raises(ConfigError):
        LearnerConfig("bad", hidden_layers=(0,))
    with pytest.raises(ConfigError):
        LearnerConfig("bad", validation_fraction=1.0)
    with pytest.raises(ConfigError):
        LearnerConfig("bad", learning_rate=0.0)
    with pytest.raises(ConfigError):
        LearnerConfig("")


def _numeric_gradient(config, params, x, y, step=1e-5):
    grad = np.zeros(params.size)
    base = params.values.copy()
    for i in range(params.size):
        plus = base.copy()
        plus[i] += step
        minus = base.copy()
        minus[i] -= step
        loss_p, _ = loss_and_gradient(config, ParamVector(plus, params.layer_dims), x, y)
        loss_m, _ = loss_and_gradient(config, ParamVector(minus, params.layer_dims), x, y)
        grad[i] = (loss_p - loss_m) / (2 * step)
    return grad


@pytest.mark.parametrize("config", default_roster(), ids=lambda c: c.label)
def test_gradient_matches_finite_differences(config):
    rng = np.random.default_rng(30)
    dims = config.layer_dims(4, 2)
    params = glorot_init(dims, rng)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 2, 5)
    _, analytic = loss_and_gradient(config, params, x, y)
    numeric = _numeric_gradient(config, params, x, y)
    denom = np.maximum(np.abs(numeric), 1e-8)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-4


def test_gradient_check_with_l2():
    config = LearnerConfig("l2", hidden_layers=(6,), l2_penalty=0.01)
    rng = np.random.default_rng(31)
    params = glorot_init(config.layer_dims(3, 2), rng)
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, 5)
    _, analytic = loss_and_gradient(config, params, x, y)
    numeric = _numeric_gradient(config, params, x, y)
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)) < 1e-4


def _independent_gd_reaches(train_set, threshold):
    """Full-batch gradient descent on logistic loss, separate from the trainer."""
    x, y = train_set.features, train_set.labels
    w = np.zeros((x.shape[1], 2))
    b = np.zeros(2)
    for _ in range(2000):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        w -= 0.5 * (x.T @ p)
        b -= 0.5 * p.sum(axis=0)
    acc = float(((x @ w + b).argmax(axis=1) == y).mean())
    return acc >= threshold


def test_separable_data_trains_to_99_percent():
    train_set = generate_synthetic(100, 2, 6.0, seed=7)  # 200 samples, 6 sigma apart
    assert _independent_gd_reaches(train_set, 0.99)
    outcome = train(LearnerConfig("logistic"), train_set, 7)
    acc = float((predict(outcome.model, train_set.features) == train_set.labels).mean())
    assert acc >= 0.99


def test_training_is_bit_deterministic():
    train_set = generate_synthetic(60, 3, 2.0, seed=32)
    config = LearnerConfig("det", hidden_layers=(8,))
    a = train(config, train_set, 99)
    b = train(config, train_set, 99)
    assert a.model.params.values.tobytes() == b.model.params.values.tobytes()
    assert a.epochs_run == b.epochs_run
    assert a.best_validation_loss == b.best_validation_loss
    c = train(config, train_set, 100)
    assert c.model.params.values.tobytes() != a.model.params.values.tobytes()


def test_zero_learning_rate_changes_nothing():
    train_set = generate_synthetic(40, 2, 2.0, seed=33)
    config = LearnerConfig("frozen", learning_rate=1e-300)  # rate must be > 0; effectively zero
    outcome = train(config, train_set, 33)
    rng_init = glorot_init(config.layer_dims(2, 2), _replay_rng(train_set.n, 33))
    assert np.allclose(outcome.model.params.values, rng_init.values, atol=1e-290)


def _replay_rng(n, seed):
    # reproduce the trainer's rng state right after its shuffle draw
    from eflsim.seeding import make_rng

    rng = make_rng(seed)
    rng.permutation(n)
    return rng


def test_single_label_data_is_degenerate():
    features = np.random.default_rng(34).normal(size=(20, 2))
    from eflsim.data import LabeledDataset

    ds = LabeledDataset(features, np.zeros(20, dtype=int), 2)
    with pytest.raises(DegenerateDataError):
        train(LearnerConfig("deg"), ds, 0)


def test_batch_size_larger_than_split_rejected():
    train_set = generate_synthetic(8, 2, 2.0, seed=35)
    with pytest.raises(ConfigError, match="batch_size"):
        train(LearnerConfig("big-batch", batch_size=64), train_set, 0)


def test_epochs_bounded_and_early_stop_flag():
    train_set = generate_synthetic(200, 2, 6.0, seed=36)
    outcome = train(LearnerConfig("es", learning_rate=0.05, max_epochs=50), train_set, 36)
    assert outcome.epochs_run <= 50
    if outcome.stopped_early:
        assert outcome.epochs_run < 50
    assert np.isfinite(outcome.best_validation_loss)


def test_fine_tune_zero_epochs_keeps_params_and_bumps_versions():
    rng = np.random.default_rng(37)
    leaf = make_leaf("base", dims=(2, 2), values=rng.normal(size=2 * 2 + 2))
    tree = make_ensemble("pair", [leaf, make_leaf("other", dims=(2, 2), values=0.5)])
    data = generate_synthetic(30, 2, 2.0, seed=37)
    tuned = fine_tune(tree, data, {"max_epochs": 0}, seed=1)
    assert tuned.id.version == tree.id.version + 1
    for before, after in zip(unique_base_leaves(tree), unique_base_leaves(tuned)):
        assert after.id.version == before.id.version + 1
        assert np.array_equal(after.params.values, before.params.values)
    assert not trees_identical(tree, tuned)  # versions differ even though params match


def test_fine_tune_trains_shared_leaf_once():
    shared = make_leaf("shared", dims=(2, 2), values=0.25)
    tree = make_ensemble("dup", [shared, shared])
    data = generate_synthetic(40, 2, 3.0, seed=38)
    tuned = fine_tune(tree, data, None, seed=2)
    leaves = unique_base_leaves(tuned)
    assert len(leaves) == 1
    a, b = tuned.children
    assert a is b or np.array_equal(a.params.values, b.params.values)


def test_fine_tune_leaves_input_untouched():
    leaf = make_leaf("orig", dims=(2, 2), values=0.1)
    data = generate_synthetic(30, 2, 3.0, seed=39)
    snapshot = leaf.params.values.copy()
    fine_tune(leaf, data, None, seed=3)
    assert np.array_equal(leaf.params.values, snapshot)


def test_fine_tune_lineage_stamps_separate_nodes():
    leaf = make_leaf("l", dims=(2, 2), values=0.0)
    data = generate_synthetic(30, 2, 3.0, seed=40)
    tuned_a = fine_tune(leaf, data, None, seed=4, stamp=lineage_stamp(2, 1))
    tuned_b = fine_tune(leaf, data, None, seed=5, stamp=lineage_stamp(2, 2))
    assert tuned_a.id.version != tuned_b.id.version
    assert tuned_a.id.version > leaf.id.version
    assert tuned_b.id.version > leaf.id.version


def test_fine_tune_does_not_forget_much():
    data = generate_synthetic(150, 2, 5.0, seed=41)
    outcome = train(LearnerConfig("conv", hidden_layers=(8,)), data, 41)
    before = float((predict(outcome.model, data.features) == data.labels).mean())
    tuned = fine_tune(outcome.model, data, None, seed=42)
    after = float((predict(tuned, data.features) == data.labels).mean())
    assert after >= before - 0.02


def test_fine_tune_rejects_unknown_override():
    leaf = make_leaf("l", dims=(2, 2))
    data = generate_synthetic(30, 2, 3.0, seed=43)
    with pytest.raises(ConfigError, match="unknown learner config overrides"):
        fine_tune(leaf, data, {"momentum": 0.9}, seed=0)


def test_fine_tune_dimension_mismatch():
    leaf = make_leaf("l", dims=(3, 2))
    data = generate_synthetic(30, 2, 3.0, seed=44)
    with pytest.raises(ContractViolation):
        fine_tune(leaf, data, None, seed=0)


def test_train_losses_stay_finite_on_benchmark():
    train_set = generate_synthetic(120, 4, 3.0, seed=45)
    for config in default_roster():
        outcome = train(dataclasses.replace(config, max_epochs=5), train_set, 45)
        assert np.isfinite(outcome.best_validation_loss)
        assert np.all(np.isfinite(outcome.model.params.values))


def test_trained_id_fields():
    train_set = generate_synthetic(40, 2, 3.0, seed=46)
    outcome = train(LearnerConfig("mlp-3", hidden_layers=(16,)), train_set, 46,
                    label="mlp-3@n2", origin=None)
    assert outcome.model.id == ModelId("mlp-3@n2", 0, outcome.model.id.origin)
