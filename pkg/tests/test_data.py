import numpy as np
import pytest

from eflsim.data import (
    DirichletSkew,
    LabeledDataset,
    ProportionTable,
    UniformIID,
    generate_synthetic,
    largest_remainder,
    load_csv,
    paper_5node_preset,
    partition,
    write_csv,
)
from eflsim.errors import ContractViolation, DataFormatError, PartitionError
from eflsim.learners import LearnerConfig, train
from eflsim.models import predict


def test_synthetic_is_seed_deterministic():
    a = generate_synthetic(50, 3, 2.0, seed=9)
    b = generate_synthetic(50, 3, 2.0, seed=9)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = generate_synthetic(50, 3, 2.0, seed=10)
    assert not np.array_equal(a.features, c.features)


def test_zero_separation_is_chance_level():
    train_set = generate_synthetic(100, 2, 0.0, seed=11)
    test_set = generate_synthetic(100, 2, 0.0, seed=12)
    model = train(LearnerConfig("logistic"), train_set, 11).model
    acc = float((predict(model, test_set.features) == test_set.labels).mean())
    assert abs(acc - 0.5) <= 0.05


def test_wide_separation_is_nearly_perfect():
    # 500/label keeps enough optimizer steps inside the default 20-epoch budget
    train_set = generate_synthetic(500, 2, 8.0, seed=13)
    test_set = generate_synthetic(500, 2, 8.0, seed=14)
    model = train(LearnerConfig("logistic"), train_set, 13).model
    acc = float((predict(model, test_set.features) == test_set.labels).mean())
    assert acc >= 0.99


def test_label_shift_moves_means():
    plain = generate_synthetic(5000, 2, 0.0, seed=15)
    shifted = generate_synthetic(5000, 2, 0.0, label_shift=[[0.0, 0.0], [0.0, 4.0]], seed=15)
    moved = shifted.features[shifted.labels == 1][:, 1].mean()
    assert abs(moved - 4.0) < 0.1
    base = plain.features[plain.labels == 1][:, 1].mean()
    assert abs(base) < 0.1


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(20, 3, 1.5, seed=16)
    path = tmp_path / "data.csv"
    write_csv(ds, path)
    loaded = load_csv(path)
    assert np.array_equal(loaded.features, ds.features)
    assert np.array_equal(loaded.labels, ds.labels)
    assert loaded.n_classes == ds.n_classes


def test_csv_basic_parse(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("0.1,0.2,0\n0.3,0.4,1\n0.5,0.6,0\n")
    ds = load_csv(path)
    assert (ds.n, ds.dim, ds.n_classes) == (3, 2, 2)


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.1,0.2,0\nmuch,0.4,1\n")
    with pytest.raises(DataFormatError, match="bad.csv:2"):
        load_csv(path)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataFormatError, match="no data rows"):
        load_csv(empty)


def test_csv_sparse_labels_warn(tmp_path):
    path = tmp_path / "sparse.csv"
    path.write_text("0.0,0\n1.0,2\n2.0,0\n")
    with pytest.warns(UserWarning, match=r"labels \[1\] absent"):
        ds = load_csv(path)
    assert ds.n_classes == 3


def test_csv_header_flag(tmp_path):
    path = tmp_path / "hdr.csv"
    path.write_text("x0,x1,label\n0.1,0.2,1\n0.3,0.4,0\n")
    ds = load_csv(path, header=True)
    assert ds.n == 2 and ds.labels[0] == 1


def _source_pair(train_counts, test_counts, seed=17):
    return (
        generate_synthetic(train_counts, 2, 3.0, seed=seed),
        generate_synthetic(test_counts, 2, 3.0, seed=seed + 1),
    )


def test_uniform_iid_sizes_within_one():
    train_set, test_set = _source_pair([3883, 1349], [390, 234])
    nodes = partition(train_set, test_set, UniformIID(5, seed=18))
    sizes = [n.train.n for n in nodes]
    assert sum(sizes) == 5232
    assert all(abs(s - 5232 / 5) <= 1 for s in sizes)
    # per-label dealing stays within one of the exact share as well
    for label, total in ((0, 3883), (1, 1349)):
        per_node = [int((n.train.labels == label).sum()) for n in nodes]
        assert sum(per_node) == total
        assert all(abs(c - total / 5) <= 1 for c in per_node)


def test_partition_is_exhaustive_and_disjoint():
    train_set, test_set = _source_pair([120, 80], [30, 20])
    nodes = partition(train_set, test_set, UniformIID(4, seed=19))
    rows = np.concatenate([n.train.features for n in nodes])
    assert rows.shape[0] == train_set.n
    # multiset equality via lexicographic sort of rows
    assert np.array_equal(
        np.sort(rows.view([("", rows.dtype)] * rows.shape[1]), axis=0),
        np.sort(train_set.features.view([("", rows.dtype)] * rows.shape[1]), axis=0),
    )


def test_proportion_counts_reproduced_exactly():
    table = ProportionTable(
        train=((10, 5), (20, 15), (30, 20)),
        test=((4, 2), (3, 3), (3, 5)),
        seed=20,
    )
    train_set, test_set = _source_pair([60, 40], [10, 10])
    nodes = partition(train_set, test_set, table)
    got = [tuple(int(c) for c in n.train.label_counts()) for n in nodes]
    assert got == [(10, 5), (20, 15), (30, 20)]
    got_test = [tuple(int(c) for c in n.test.label_counts()) for n in nodes]
    assert got_test == [(4, 2), (3, 3), (3, 5)]


def test_infeasible_table_names_the_label():
    table = ProportionTable(train=((10, 5), (20, 15)), test=((5, 5), (5, 5)), seed=0)
    train_set, test_set = _source_pair([31, 20], [10, 10])
    with pytest.raises(PartitionError, match="label 0"):
        partition(train_set, test_set, table)


def test_paper_preset_matches_reference_cells():
    train_set, test_set = _source_pair([3883, 1349], [390, 234])
    nodes = partition(train_set, test_set, paper_5node_preset(seed=21))
    train_cells = [tuple(int(c) for c in n.train.label_counts()) for n in nodes]
    test_cells = [tuple(int(c) for c in n.test.label_counts()) for n in nodes]
    assert train_cells == [(755, 288), (744, 269), (783, 260), (778, 265), (784, 259)]
    assert test_cells == [(74, 50), (76, 48), (71, 53), (88, 36), (78, 46)]


def test_paper_preset_scales_to_other_sizes():
    train_set, test_set = _source_pair([776, 270], [78, 47])
    nodes = partition(train_set, test_set, paper_5node_preset(seed=22))
    for label, total in ((0, 776), (1, 270)):
        assigned = sum(int((n.train.labels == label).sum()) for n in nodes)
        assert assigned <= total  # reference cells under-cover their printed totals
        assert assigned >= total - 10


def test_dirichlet_high_alpha_approaches_global_fractions():
    train_set, test_set = _source_pair([4000, 1000], [400, 100])
    nodes = partition(train_set, test_set, DirichletSkew(5, alpha=1e6, seed=23))
    global_frac = 4000 / 5000
    for node in nodes:
        frac = float((node.train.labels == 0).mean())
        assert abs(frac - global_frac) < 0.01


def test_dirichlet_low_alpha_skews():
    train_set, test_set = _source_pair([500, 500], [100, 100])
    nodes = partition(train_set, test_set, DirichletSkew(4, alpha=0.2, seed=24))
    fracs = [float((n.train.labels == 0).mean()) if n.train.n else 0.5 for n in nodes]
    assert max(fracs) - min(fracs) > 0.3


def test_partition_seed_determinism():
    train_set, test_set = _source_pair([100, 100], [20, 20])
    for spec in (UniformIID(3, seed=25), DirichletSkew(3, alpha=0.7, seed=25)):
        first = partition(train_set, test_set, spec)
        second = partition(train_set, test_set, spec)
        for a, b in zip(first, second):
            assert np.array_equal(a.train.features, b.train.features)
            assert np.array_equal(a.test.labels, b.test.labels)


def test_largest_remainder_hits_target():
    rng = np.random.default_rng(26)
    for _ in range(200):
        k = int(rng.integers(1, 8))
        quotas = rng.uniform(0, 20, k)
        target = int(np.floor(quotas.sum()))
        counts = largest_remainder(quotas, target)
        assert counts.sum() == target
        assert np.all(counts >= np.floor(quotas).astype(int))


def test_dataset_validation():
    with pytest.raises(ContractViolation):
        LabeledDataset(np.zeros((2, 2)), np.array([0, 5]), 2)
    with pytest.raises(ContractViolation):
        LabeledDataset(np.array([[np.inf, 0.0]]), np.array([0]), 2)
