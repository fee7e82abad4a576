"""Datasets, synthetic generation, CSV ingestion, and the node partitioner.

The partitioner reproduces the three split regimes a federation cares about:
uniform IID dealing, explicit per-node per-label count tables (including the
built-in five-node hospital profile), and Dirichlet label skew.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ContractViolation, DataFormatError, PartitionError
from .seeding import derive_seed, make_rng


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable (features, labels) pair with an explicit class count."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ContractViolation(f"features must be a non-empty 2-d matrix, got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ContractViolation(
                f"labels shape {labels.shape} does not match {features.shape[0]} rows"
            )
        if not np.all(np.isfinite(features)):
            raise ContractViolation("features contain non-finite values")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ContractViolation(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{int(labels.min())}, {int(labels.max())}]"
            )
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[indices], self.labels[indices], self.n_classes)

    def fingerprint(self) -> str:
        """Content hash used to guard against comparing scores across datasets."""
        import hashlib

        h = hashlib.blake2b(digest_size=16)
        h.update(repr((self.features.shape, self.n_classes)).encode())
        h.update(self.features.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def concat_datasets(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    if not parts:
        raise ContractViolation("cannot concatenate zero datasets")
    dims = {(p.dim, p.n_classes) for p in parts}
    if len(dims) > 1:
        raise ContractViolation(f"datasets disagree on shape: {sorted(dims)}")
    return LabeledDataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        parts[0].n_classes,
    )


@dataclass(frozen=True)
class NodeData:
    """One node's private train/test splits."""

    node_id: int
    train: LabeledDataset
    test: LabeledDataset

    def __post_init__(self):
        if self.node_id < 1:
            raise ContractViolation("node ids start at 1")
        if self.train.dim != self.test.dim or self.train.n_classes != self.test.n_classes:
            raise ContractViolation(
                f"node {self.node_id}: train and test disagree on feature dim or class count"
            )


def generate_synthetic(
    n_per_label: int | Sequence[int],
    n_features: int,
    separation: float,
    label_shift: Sequence[Sequence[float]] | None = None,
    seed: int = 0,
    n_classes: int = 2,
) -> LabeledDataset:
    """Gaussian blobs, one per label, means ``separation`` apart on axis 0.

    ``n_per_label`` may be a single count or one count per label;
    ``label_shift`` optionally adds a per-label offset vector to the means.
    """
    if isinstance(n_per_label, (int, np.integer)):
        counts = [int(n_per_label)] * n_classes
    else:
        counts = [int(c) for c in n_per_label]
        n_classes = len(counts)
    if n_classes < 2:
        raise ContractViolation("need at least two labels")
    if any(c < 2 for c in counts):
        raise ContractViolation(f"need >= 2 samples per label, got {counts}")
    if n_features < 1:
        raise ContractViolation("need at least one feature")
    if separation < 0:
        raise ContractViolation("separation must be >= 0")
    if label_shift is not None and len(label_shift) != n_classes:
        raise ContractViolation(
            f"label_shift must give one offset per label ({n_classes}), got {len(label_shift)}"
        )

    rng = make_rng(seed)
    blocks = []
    labels = []
    for label, count in enumerate(counts):
        mean = np.zeros(n_features)
        # centered around the origin so default-rate training is well conditioned
        mean[0] = (label - (n_classes - 1) / 2.0) * separation
        if label_shift is not None:
            shift = np.asarray(label_shift[label], dtype=np.float64)
            if shift.shape not in ((), (n_features,)):
                raise ContractViolation(
                    f"label_shift[{label}] must be a scalar or length-{n_features} vector"
                )
            mean = mean + shift
        blocks.append(rng.standard_normal((count, n_features)) + mean)
        labels.append(np.full(count, label, dtype=np.int64))
    return LabeledDataset(np.concatenate(blocks), np.concatenate(labels), n_classes)


def parse_csv(text: str, header: bool = False, origin: str = "<inline>") -> LabeledDataset:
    """Parse rows of d numeric features followed by one integer label."""
    lines = text.splitlines()
    start = 1 if header else 0
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        if lineno <= start or not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if width is None:
            width = len(cells)
            if width < 2:
                raise DataFormatError(f"{origin}:{lineno}: need at least one feature and a label")
        elif len(cells) != width:
            raise DataFormatError(
                f"{origin}:{lineno}: expected {width} columns, found {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells[:-1]])
        except ValueError:
            raise DataFormatError(f"{origin}:{lineno}: non-numeric feature value") from None
        try:
            label = int(cells[-1])
        except ValueError:
            raise DataFormatError(
                f"{origin}:{lineno}: label {cells[-1]!r} is not an integer"
            ) from None
        if label < 0:
            raise DataFormatError(f"{origin}:{lineno}: negative label {label}")
        labels.append(label)
    if not rows:
        raise DataFormatError(f"{origin}: no data rows")

    label_arr = np.array(labels, dtype=np.int64)
    n_classes = int(label_arr.max()) + 1
    present = set(np.unique(label_arr).tolist())
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        warnings.warn(
            f"{origin}: labels {missing} absent although max label is {n_classes - 1}; "
            f"class count set to {n_classes}",
            stacklevel=2,
        )
    return LabeledDataset(np.array(rows, dtype=np.float64), label_arr, n_classes)


def load_csv(path: str | Path, header: bool = False) -> LabeledDataset:
    """Read a dataset file in the parse_csv row format."""
    path = Path(path)
    return parse_csv(path.read_text(), header=header, origin=str(path))


def dataset_to_csv(dataset: LabeledDataset, header: bool = False) -> str:
    """Render in the parse_csv row format (floats via repr, lossless)."""
    lines = []
    if header:
        lines.append(",".join([f"x{i}" for i in range(dataset.dim)] + ["label"]))
    for row, label in zip(dataset.features, dataset.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    return "\n".join(lines) + "\n"


def write_csv(dataset: LabeledDataset, path: str | Path, header: bool = False) -> None:
    Path(path).write_text(dataset_to_csv(dataset, header=header))


# --------------------------------------------------------------------------
# Experiment data sources
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    """Generate the source train/test pair from seeded Gaussian blobs."""

    train_per_label: tuple[int, ...]
    test_per_label: tuple[int, ...]
    n_features: int = 2
    separation: float = 3.0
    label_shift: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "train_per_label", tuple(int(c) for c in self.train_per_label))
        object.__setattr__(self, "test_per_label", tuple(int(c) for c in self.test_per_label))
        if self.label_shift is not None:
            object.__setattr__(
                self,
                "label_shift",
                tuple(tuple(float(v) for v in row) for row in self.label_shift),
            )
        if len(self.train_per_label) != len(self.test_per_label):
            raise ContractViolation("train and test must list counts for the same labels")


@dataclass(frozen=True)
class CsvSource:
    """Load the source train/test pair from two CSV files."""

    train_path: str
    test_path: str
    header: bool = False


DataSource = Union[SyntheticSource, CsvSource]


def load_source(source: DataSource, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if isinstance(source, SyntheticSource):
        train = generate_synthetic(
            source.train_per_label,
            source.n_features,
            source.separation,
            source.label_shift,
            seed=derive_seed(seed, "source", "train"),
        )
        test = generate_synthetic(
            source.test_per_label,
            source.n_features,
            source.separation,
            source.label_shift,
            seed=derive_seed(seed, "source", "test"),
        )
        return train, test
    if isinstance(source, CsvSource):
        return load_csv(source.train_path, source.header), load_csv(source.test_path, source.header)
    raise ContractViolation(f"unknown data source {type(source).__name__}")


# --------------------------------------------------------------------------
# Partitioning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformIID:
    """Shuffle each label group and deal round-robin across nodes."""

    n_nodes: int
    seed: int = 0


@dataclass(frozen=True)
class ProportionTable:
    """Explicit per-node per-label counts (or fractions) for train and test.

    ``train`` and ``test`` are n_nodes x n_labels matrices. In count mode the
    per-label column sums must match the source exactly. In fraction mode the
    quotas are resolved by largest-remainder rounding; fraction sets summing
    to less than one under-assign and the leftover samples stay out of every
    node (they are reported, never silently reassigned).
    """

    train: tuple[tuple[float, ...], ...]
    test: tuple[tuple[float, ...], ...]
    fractions: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(tuple(float(v) for v in row) for row in self.train))
        object.__setattr__(self, "test", tuple(tuple(float(v) for v in row) for row in self.test))
        if len(self.train) != len(self.test) or not self.train:
            raise PartitionError("train and test tables must list the same non-zero node count")
        widths = {len(r) for r in self.train} | {len(r) for r in self.test}
        if len(widths) != 1:
            raise PartitionError("table rows must all have one entry per label")
        if any(v < 0 for row in self.train + self.test for v in row):
            raise PartitionError("table entries must be non-negative")

    @property
    def n_nodes(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class DirichletSkew:
    """Per-node label proportions drawn from Dirichlet(alpha)."""

    n_nodes: int
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise PartitionError(f"alpha must be positive, got {self.alpha}")
        if self.n_nodes < 2:
            raise PartitionError("need at least two nodes")


PartitionSpec = Union[UniformIID, ProportionTable, DirichletSkew]

# Five-node hospital profile: per-node counts for (label 0, label 1) =
# (pneumonia-role, normal-role) rows, each normalized against the published
# reference totals so the profile applies to any dataset size.
PAPER_5NODE_TRAIN_CELLS = ((755, 288), (744, 269), (783, 260), (778, 265), (784, 259))
PAPER_5NODE_TEST_CELLS = ((74, 50), (76, 48), (71, 53), (88, 36), (78, 46))
PAPER_5NODE_TRAIN_TOTALS = (3883, 1349)
PAPER_5NODE_TEST_TOTALS = (390, 234)


def paper_5node_preset(seed: int = 0) -> ProportionTable:
    train = tuple(
        tuple(cell / total for cell, total in zip(row, PAPER_5NODE_TRAIN_TOTALS))
        for row in PAPER_5NODE_TRAIN_CELLS
    )
    test = tuple(
        tuple(cell / total for cell, total in zip(row, PAPER_5NODE_TEST_TOTALS))
        for row in PAPER_5NODE_TEST_CELLS
    )
    return ProportionTable(train, test, fractions=True, seed=seed)


PARTITION_PRESETS = {"paper-5node": paper_5node_preset}


def largest_remainder(quotas: np.ndarray, target: int) -> np.ndarray:
    """Round non-negative quotas to integers summing to ``target``."""
    floors = np.floor(quotas).astype(np.int64)
    remainder = int(target - floors.sum())
    if remainder < 0:
        raise PartitionError("quota floors exceed the assignment target")
    if remainder:
        # ties broken toward lower index for determinism
        frac = quotas - floors
        order = np.lexsort((np.arange(len(quotas)), -frac))
        floors[order[:remainder]] += 1
    return floors


def _shuffled_label_indices(ds: LabeledDataset, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(ds.labels == label)) for label in range(ds.n_classes)]


def _deal_uniform(ds: LabeledDataset, n_nodes: int, rng: np.random.Generator) -> list[np.ndarray]:
    # One cursor runs across label groups so per-node totals stay within +-1.
    buckets: list[list[int]] = [[] for _ in range(n_nodes)]
    cursor = 0
    for indices in _shuffled_label_indices(ds, rng):
        for idx in indices:
            buckets[cursor % n_nodes].append(int(idx))
            cursor += 1
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _counts_from_table(
    rows: tuple[tuple[float, ...], ...],
    totals: np.ndarray,
    fractions: bool,
    which: str,
) -> np.ndarray:
    table = np.asarray(rows, dtype=np.float64)
    if table.shape[1] != len(totals):
        raise PartitionError(
            f"{which} table has {table.shape[1]} label columns, dataset has {len(totals)}"
        )
    if not fractions:
        counts = np.rint(table).astype(np.int64)
        if not np.array_equal(counts, table):
            raise PartitionError(f"{which} table mixes fractional values into count mode")
        for label in range(len(totals)):
            if counts[:, label].sum() != totals[label]:
                raise PartitionError(
                    f"{which} table assigns {int(counts[:, label].sum())} samples of label "
                    f"{label}, source has {int(totals[label])}"
                )
        return counts
    counts = np.zeros(table.shape, dtype=np.int64)
    for label in range(len(totals)):
        quotas = table[:, label] * totals[label]
        assigned = int(round(float(quotas.sum())))
        if assigned > totals[label]:
            raise PartitionError(
                f"{which} fractions for label {label} sum above 1 ({table[:, label].sum():.6f})"
            )
        counts[:, label] = largest_remainder(quotas, assigned)
    return counts


def _deal_counts(
    ds: LabeledDataset, counts: np.ndarray, rng: np.random.Generator
) -> list[np.ndarray]:
    buckets: list[list[int]] = [[] for _ in range(counts.shape[0])]
    for label, indices in enumerate(_shuffled_label_indices(ds, rng)):
        offset = 0
        for node in range(counts.shape[0]):
            take = int(counts[node, label])
            buckets[node].extend(int(i) for i in indices[offset : offset + take])
            offset += take
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _dirichlet_counts(
    totals: np.ndarray, n_nodes: int, alpha: float, rng: np.random.Generator
) -> np.ndarray:
    draws = rng.dirichlet([alpha] * len(totals), size=n_nodes)  # node-major proportions
    counts = np.zeros((n_nodes, len(totals)), dtype=np.int64)
    for label in range(len(totals)):
        weights = draws[:, label]
        shares = weights / weights.sum()
        counts[:, label] = largest_remainder(shares * totals[label], int(totals[label]))
    return counts


def partition(
    train: LabeledDataset, test: LabeledDataset, spec: PartitionSpec
) -> list[NodeData]:
    """Split a source train/test pair into per-node private datasets."""
    if train.dim != test.dim or train.n_classes != test.n_classes:
        raise ContractViolation("train and test sources disagree on feature dim or class count")

    if isinstance(spec, UniformIID):
        if spec.n_nodes < 2:
            raise PartitionError("need at least two nodes")
        train_idx = _deal_uniform(train, spec.n_nodes, make_rng(derive_seed(spec.seed, "train")))
        test_idx = _deal_uniform(test, spec.n_nodes, make_rng(derive_seed(spec.seed, "test")))
    elif isinstance(spec, ProportionTable):
        train_counts = _counts_from_table(
            spec.train, train.label_counts(), spec.fractions, "train"
        )
        test_counts = _counts_from_table(spec.test, test.label_counts(), spec.fractions, "test")
        train_idx = _deal_counts(train, train_counts, make_rng(derive_seed(spec.seed, "train")))
        test_idx = _deal_counts(test, test_counts, make_rng(derive_seed(spec.seed, "test")))
    elif isinstance(spec, DirichletSkew):
        rng = make_rng(derive_seed(spec.seed, "dirichlet"))
        train_counts = _dirichlet_counts(train.label_counts(), spec.n_nodes, spec.alpha, rng)
        test_counts = _dirichlet_counts(test.label_counts(), spec.n_nodes, spec.alpha, rng)
        train_idx = _deal_counts(train, train_counts, make_rng(derive_seed(spec.seed, "train")))
        test_idx = _deal_counts(test, test_counts, make_rng(derive_seed(spec.seed, "test")))
    else:
        raise ContractViolation(f"unknown partition spec {type(spec).__name__}")

    return [
        NodeData(node + 1, train.subset(train_idx[node]), test.subset(test_idx[node]))
        for node in range(len(train_idx))
    ]
