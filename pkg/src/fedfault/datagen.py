"""Datasets, synthetic multi-site generation, partitioning and label corruption."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import as_generator


class DataFormatError(ValueError):
    pass


class InfeasiblePartition(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # stable per-example identity tags, carried through splits and partitions
    ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} feature rows but {y.size} labels")
        if y.size == 0:
            raise ValueError("dataset has no examples")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        ids = np.arange(y.size) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index: np.ndarray) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.num_classes, self.ids[index])

    @staticmethod
    def concat(parts: Sequence[Dataset]) -> Dataset:
        if not parts:
            raise ValueError("nothing to concatenate")
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].num_classes,
            np.concatenate([p.ids for p in parts]),
        )


@dataclass(frozen=True)
class SiteSpec:
    volume_fraction: float
    class_presence: tuple[int, ...]
    class_proportions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.volume_fraction <= 1.0:
            raise ValueError(f"volume_fraction must be in (0, 1], got {self.volume_fraction}")
        if not self.class_presence:
            raise ValueError("class_presence must be non-empty")
        object.__setattr__(self, "class_presence", tuple(int(c) for c in self.class_presence))
        if len(set(self.class_presence)) != len(self.class_presence):
            raise ValueError("class_presence has duplicates")
        if self.class_proportions is not None:
            props = tuple(float(p) for p in self.class_proportions)
            if len(props) != len(self.class_presence):
                raise ValueError("class_proportions must match class_presence in length")
            if min(props) <= 0 or abs(sum(props) - 1.0) > 1e-9:
                raise ValueError("class_proportions must be positive and sum to 1")
            object.__setattr__(self, "class_proportions", props)


@dataclass(frozen=True)
class Shard:
    data: Dataset
    client_id: int

    @property
    def n_k(self) -> int:
        return len(self.data)


# Sites A, B, C of the hyperspectral weeds collection: sample counts and classes.
TABLE1_COUNTS = (60_072, 30_240, 6_232)
TABLE1_PRESENCE = ((0, 1, 2, 3), (0, 1, 2, 3), (0, 3))


def table1_sites() -> list[SiteSpec]:
    """Three sites with the weeds-detection volume ratios and class gaps."""
    total = sum(TABLE1_COUNTS)
    return [
        SiteSpec(count / total, presence)
        for count, presence in zip(TABLE1_COUNTS, TABLE1_PRESENCE)
    ]


def uniform_sites(num_sites: int, num_classes: int) -> list[SiteSpec]:
    return [SiteSpec(1.0 / num_sites, tuple(range(num_classes))) for _ in range(num_sites)]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _apportion(total: int, weights: Sequence[float]) -> np.ndarray:
    """Largest-remainder split of ``total`` by ``weights`` (ties to lower index)."""
    w = np.asarray(weights, dtype=np.float64)
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = total - int(counts.sum())
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def class_means(num_classes: int, input_dim: int, radius: float) -> np.ndarray:
    """Deterministic class centres on a sphere of the given radius."""
    if num_classes <= input_dim:
        return radius * np.eye(num_classes, input_dim)
    if input_dim == 1:
        return radius * np.linspace(-1.0, 1.0, num_classes)[:, None]
    if input_dim == 2:
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        return radius * np.column_stack([np.cos(angles), np.sin(angles)])
    directions = np.random.default_rng(0).standard_normal((num_classes, input_dim))
    return radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)


def generate_synthetic(
    num_classes: int,
    input_dim: int,
    total_samples: int,
    class_separation: float,
    noise_sigma: float,
    seed,
) -> Dataset:
    """Isotropic Gaussian blobs, labels drawn uniformly over classes."""
    if class_separation <= 0 or noise_sigma <= 0:
        raise ValueError("class_separation and noise_sigma must be positive")
    if total_samples < num_classes:
        raise ValueError("total_samples must be at least num_classes")
    rng = as_generator(seed)
    labels = rng.integers(0, num_classes, size=total_samples)
    means = class_means(num_classes, input_dim, class_separation)
    features = means[labels] + noise_sigma * rng.standard_normal((total_samples, input_dim))
    return Dataset(features, labels, num_classes)


def partition(dataset: Dataset, site_specs: Sequence[SiteSpec], seed) -> list[Shard]:
    """Split ``dataset`` into disjoint per-site shards.

    Site ``k`` receives ``round(volume_fraction_k * N)`` examples drawn without
    replacement from its present classes. With ``class_proportions`` the per-class
    counts follow them exactly (largest remainder); otherwise the site draws
    uniformly from whatever is left of its classes. Constrained sites (explicit
    proportions, then fewer classes) are served first.
    """
    if not site_specs:
        raise ValueError("need at least one site")
    total_fraction = sum(s.volume_fraction for s in site_specs)
    if total_fraction > 1.0 + 1e-9:
        raise ValueError(f"site volume fractions sum to {total_fraction:.6f} > 1")
    n = len(dataset)
    counts = dataset.class_counts()
    for k, spec in enumerate(site_specs):
        missing = [c for c in spec.class_presence if c >= dataset.num_classes or counts[c] == 0]
        if missing:
            raise InfeasiblePartition(f"site {k} references classes {missing} absent from the dataset")

    rng = as_generator(seed)
    quotas = [_round_half_up(s.volume_fraction * n) for s in site_specs]
    if sum(quotas) > n:
        quotas[int(np.argmax(quotas))] -= sum(quotas) - n
    available = np.ones(n, dtype=bool)
    order = sorted(
        range(len(site_specs)),
        key=lambda k: (site_specs[k].class_proportions is None, len(site_specs[k].class_presence)),
    )
    picked: dict[int, np.ndarray] = {}
    for k in order:
        spec = site_specs[k]
        if spec.class_proportions is not None:
            parts = []
            per_class = _apportion(quotas[k], spec.class_proportions)
            for cls, want in zip(spec.class_presence, per_class):
                pool = np.flatnonzero(available & (dataset.labels == cls))
                if want > pool.size:
                    raise InfeasiblePartition(
                        f"site {k} needs {want} examples of class {cls}, only {pool.size} left"
                    )
                parts.append(rng.choice(pool, size=want, replace=False))
            chosen = rng.permutation(np.concatenate(parts))
        else:
            pool = np.flatnonzero(available & np.isin(dataset.labels, spec.class_presence))
            if quotas[k] > pool.size:
                raise InfeasiblePartition(
                    f"site {k} needs {quotas[k]} examples, only {pool.size} left in its classes"
                )
            chosen = rng.choice(pool, size=quotas[k], replace=False)
        available[chosen] = False
        picked[k] = chosen
    return [Shard(dataset.subset(picked[k]), k) for k in range(len(site_specs))]


def train_test_split(
    dataset: Dataset, test_fraction: float, stratified: bool = True, seed=0
) -> tuple[Dataset, Dataset]:
    """Disjoint split; both halves keep the input's row order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = as_generator(seed)
    n = len(dataset)
    is_test = np.zeros(n, dtype=bool)
    if stratified:
        counts = dataset.class_counts()
        thin = [c for c in range(dataset.num_classes) if 0 < counts[c] < 2]
        if thin:
            raise ValueError(f"classes {thin} have fewer than 2 examples; cannot stratify")
        present = np.flatnonzero(counts)
        per_class = _apportion(_round_half_up(test_fraction * n), counts[present])
        for cls, want in zip(present, per_class):
            members = np.flatnonzero(dataset.labels == cls)
            is_test[rng.choice(members, size=want, replace=False)] = True
    else:
        is_test[rng.choice(n, size=_round_half_up(test_fraction * n), replace=False)] = True
    if is_test.all() or not is_test.any():
        raise ValueError("split leaves one side empty")
    return dataset.subset(np.flatnonzero(~is_test)), dataset.subset(np.flatnonzero(is_test))


FLIP_MODES = ("cyclic", "uniform")


def flip_labels(shard: Shard, fraction: float, mode: str = "cyclic", seed=0) -> Shard:
    """Relabel exactly ``round(fraction * n_k)`` randomly chosen examples."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if mode not in FLIP_MODES:
        raise ValueError(f"unknown flip mode {mode!r}; expected one of {FLIP_MODES}")
    data = shard.data
    count = _round_half_up(fraction * shard.n_k)
    if count == 0:
        return shard
    rng = as_generator(seed)
    which = rng.choice(shard.n_k, size=count, replace=False)
    labels = data.labels.copy()
    c = data.num_classes
    if mode == "cyclic":
        labels[which] = (labels[which] + 1) % c
    else:
        labels[which] = (labels[which] + rng.integers(1, c, size=count)) % c
    return Shard(Dataset(data.features, labels, c, data.ids), shard.client_id)


def site_rotation(input_dim: int, strength: float, seed) -> np.ndarray:
    """Blend of identity and a random orthogonal matrix, ``(1-s) I + s Q``."""
    rng = as_generator(seed)
    q, r = np.linalg.qr(rng.standard_normal((input_dim, input_dim)))
    q = q * np.sign(np.diag(r))
    return (1.0 - strength) * np.eye(input_dim) + strength * q


@dataclass
class FederatedData:
    """Per-client training shards plus the pooled global test set."""

    shards: list[Shard]
    test: Dataset
    num_classes: int
    input_dim: int
    site_of_test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def pooled_train(self) -> Dataset:
        return Dataset.concat([s.data for s in self.shards])


def build_sites(
    dataset: Dataset,
    site_specs: Sequence[SiteSpec],
    test_fraction: float = 0.2,
    site_shift: float = 0.0,
    seed=0,
) -> FederatedData:
    """Partition into sites, give each site its own feature frame, split 80/20 per site.

    ``site_shift`` in [0, 1] mixes each site's features with a site-specific random
    rotation, modelling sites that observe the same classes through different
    acquisition conditions. The global test set is the union of the per-site
    class-stratified test splits.
    """
    if not 0.0 <= site_shift <= 1.0:
        raise ValueError(f"site_shift must be in [0, 1], got {site_shift}")
    seeds = np.random.SeedSequence(as_entropy(seed)).spawn(3)
    site_shards = partition(dataset, site_specs, np.random.default_rng(seeds[0]))
    shift_seeds = seeds[1].spawn(len(site_shards))
    split_seeds = seeds[2].spawn(len(site_shards))
    train_shards, tests, test_sites = [], [], []
    for shard, shift_seed, split_seed in zip(site_shards, shift_seeds, split_seeds):
        data = shard.data
        if site_shift > 0:
            mix = site_rotation(data.input_dim, site_shift, np.random.default_rng(shift_seed))
            data = Dataset(data.features @ mix.T, data.labels, data.num_classes, data.ids)
        train, test = train_test_split(data, test_fraction, True, np.random.default_rng(split_seed))
        train_shards.append(Shard(train, shard.client_id))
        tests.append(test)
        test_sites.append(np.full(len(test), shard.client_id))
    return FederatedData(
        train_shards,
        Dataset.concat(tests),
        dataset.num_classes,
        dataset.input_dim,
        np.concatenate(test_sites),
    )


def as_entropy(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(as_generator(seed).integers(0, 2**63))


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read ``f0..f{d-1},label`` rows. Line numbers in errors are 1-based."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or header != expected:
            raise DataFormatError(
                f"{path}:1: header must be f0..f{{d-1}},label; got {','.join(header)}"
            )
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != d + 1:
                raise DataFormatError(f"{path}:{line}: expected {d + 1} fields, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row[:d]])
            except ValueError:
                raise DataFormatError(f"{path}:{line}: non-numeric feature value") from None
            label_text = row[d].strip()
            if not label_text.isdigit():
                raise DataFormatError(f"{path}:{line}: label {label_text!r} is not a non-negative integer")
            label = int(label_text)
            if num_classes is not None and label >= num_classes:
                raise DataFormatError(
                    f"{path}:{line}: label {label} outside declared {num_classes} classes"
                )
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no examples")
    if num_classes is None:
        num_classes = max(max(labels) + 1, 2)
    return Dataset(np.array(rows), np.array(labels), num_classes)
