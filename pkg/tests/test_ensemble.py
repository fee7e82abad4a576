import numpy as np
import pytest

from eflsim.data import generate_synthetic
from eflsim.ensemble import (
    EvaluatedModel,
    choose_best2,
    evaluate_model,
    make_gel,
    make_lel,
    selection_key,
)
from eflsim.errors import ContractViolation
from eflsim.metrics import ScoreSet
from eflsim.models import (
    FusionRule,
    global_origin,
    predict,
    roster_origin,
    unique_base_leaves,
)

from _helpers import make_ensemble, make_leaf


def _candidate(label, accuracy, origin=None, fingerprint="fp"):
    model = make_leaf(label, dims=(2, 2), origin=origin or roster_origin(1))
    score = ScoreSet(accuracy, accuracy, accuracy, accuracy)
    return EvaluatedModel(model, accuracy, score, fingerprint)


def test_best2_orders_by_accuracy():
    pair = choose_best2([_candidate("low", 0.5), _candidate("high", 0.9)])
    assert (pair[0].label, pair[1].label) == ("high", "low")


def test_best2_tie_breaks_lexicographically():
    pair = choose_best2([_candidate(l, 0.9) for l in ("c", "a", "b")])
    assert (pair[0].label, pair[1].label) == ("a", "b")


def test_best2_tie_prefers_older_origin():
    older = _candidate("zeta", 0.9, origin=roster_origin(3))
    newer = _candidate("alpha", 0.9, origin=global_origin(4))
    pair = choose_best2([older, newer, _candidate("mid", 0.1)])
    assert (pair[0].label, pair[1].label) == ("zeta", "alpha")


def test_best2_requires_two_candidates_same_dataset():
    with pytest.raises(ContractViolation):
        choose_best2([_candidate("only", 0.5)])
    with pytest.raises(ContractViolation):
        choose_best2([_candidate("a", 0.5, fingerprint="x"), _candidate("b", 0.6, fingerprint="y")])


def _brute_force_best2(candidates):
    """Independent selection: repeatedly scan for the best remaining candidate."""

    def better(a, b):
        if a.accuracy != b.accuracy:
            return a.accuracy > b.accuracy
        ra, rb = a.model.id.origin.round_created, b.model.id.origin.round_created
        if ra != rb:
            return ra < rb
        return a.label < b.label

    pool = list(candidates)
    winners = []
    for _ in range(2):
        best = pool[0]
        for c in pool[1:]:
            if better(c, best):
                best = c
        winners.append(best)
        pool.remove(best)
    return tuple(winners)


def test_best2_matches_brute_force_oracle():
    rng = np.random.default_rng(50)
    for case in range(1000):
        k = int(rng.integers(2, 9))
        candidates = []
        for i in range(k):
            accuracy = float(rng.choice([0.1, 0.5, 0.5, 0.9, rng.uniform()]))
            origin = (
                roster_origin(int(rng.integers(1, 4)))
                if rng.random() < 0.5
                else global_origin(int(rng.integers(1, 6)))
            )
            candidates.append(_candidate(f"m{i}", accuracy, origin=origin))
        expected = _brute_force_best2(candidates)
        got = choose_best2(candidates)
        assert (got[0].label, got[1].label) == (expected[0].label, expected[1].label), case


def test_selection_is_shift_invariant():
    rng = np.random.default_rng(51)
    for _ in range(100):
        candidates = [_candidate(f"m{i}", float(rng.uniform())) for i in range(5)]
        base = choose_best2(candidates)
        shifted = [
            EvaluatedModel(c.model, c.accuracy + 3.0, c.score_set, c.evaluated_on)
            for c in candidates
        ]
        moved = choose_best2(shifted)
        assert (base[0].label, base[1].label) == (moved[0].label, moved[1].label)


def test_make_lel_structure_and_label():
    a, b = _candidate("a", 0.9), _candidate("b", 0.8)
    lel = make_lel((a, b), FusionRule.MAX_PROB, round_no=3, node_id=2)
    assert lel.id.label == "LEL@n2r3"
    assert lel.children == (a.model, b.model)
    assert lel.fusion is FusionRule.MAX_PROB


def test_lel_of_model_with_itself_predicts_like_the_model():
    rng = np.random.default_rng(52)
    leaf = make_leaf("m", dims=(3, 2), values=rng.normal(size=3 * 2 + 2))
    score = ScoreSet(0.5, 0.5, 0.5, 0.5)
    cand = EvaluatedModel(leaf, 0.5, score, "fp")
    lel = make_lel((cand, cand), FusionRule.MAX_PROB, 1, 1)
    x = rng.normal(size=(6, 3))
    assert np.array_equal(predict(lel, x), predict(leaf, x))


def test_make_gel_label_and_children_order():
    lels = [make_ensemble(f"LEL@n{i}r2", [make_leaf(f"m{i}", dims=(2, 2))]) for i in (1, 2, 3)]
    gel = make_gel(lels, FusionRule.MAX_PROB, round_no=3)
    assert gel.id.label == "GEL@r3"
    assert gel.id.origin == global_origin(3)
    assert [c.id.label for c in gel.children] == ["LEL@n1r2", "LEL@n2r2", "LEL@n3r2"]
    with pytest.raises(ContractViolation):
        make_gel([], FusionRule.MAX_PROB, 1)


def test_gel_over_five_two_leaf_lels_has_ten_unique_leaves():
    lels = []
    for node in range(1, 6):
        members = [make_leaf(f"m{node}-{j}@n{node}", dims=(2, 2), values=0.01 * node + j) for j in (0, 1)]
        lels.append(make_ensemble(f"LEL@n{node}r1", members))
    gel = make_gel(lels, FusionRule.MAX_PROB, 1)
    assert len(unique_base_leaves(gel)) == 10


def test_single_node_gel_predicts_like_its_lel():
    rng = np.random.default_rng(53)
    leaf = make_leaf("m", dims=(2, 2), values=rng.normal(size=2 * 2 + 2))
    lel = make_ensemble("LEL@n1r1", [leaf])
    gel = make_gel([lel], FusionRule.MAX_PROB, 1)
    x = rng.normal(size=(5, 2))
    assert np.array_equal(predict(gel, x), predict(lel, x))


def test_evaluate_model_accuracy_matches_score_set():
    data = generate_synthetic(40, 2, 4.0, seed=54)
    leaf = make_leaf("m", dims=(2, 2), values=np.random.default_rng(54).normal(size=2 * 2 + 2))
    evaluated = evaluate_model(leaf, data)
    assert evaluated.accuracy == evaluated.score_set.accuracy
    assert evaluated.evaluated_on == data.fingerprint()
    manual = float((predict(leaf, data.features) == data.labels).mean())
    assert evaluated.accuracy == pytest.approx(manual, abs=1e-15)


def test_selection_key_is_total_for_distinct_labels():
    candidates = [_candidate(f"m{i}", 0.7) for i in range(4)]
    keys = sorted(selection_key(c) for c in candidates)
    assert len(set(keys)) == 4
