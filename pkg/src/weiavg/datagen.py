"""Synthetic dataset generation, client partitioning, and label entropy.

The partitioner assigns every client the same number of samples and controls
how unevenly label diversity is spread across clients with a single skew
knob ``p``: each client k draws u ~ Uniform(0,1) and mixes a dominant class
into a uniform background with weight s = u**(1-p).  At p=0 the per-client
skews spread evenly over (0,1); as p approaches 1 most clients collapse onto
their dominant class and label entropy concentrates near zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

RAW_MAGIC = b"FSDS"
_RAW_HEADER = struct.Struct("<4sIII")

# Attempts at redrawing a client's dominant class before the partitioner
# relaxes to sampling the shortfall with replacement.
_MAX_REDRAWS = 100


@dataclass(frozen=True)
class Dataset:
    """A labeled classification dataset held fully in memory.

    Attributes:
        features: (samples, feature_dim) float64 matrix.
        labels: (samples,) int64 class ids in [0, classes).
        classes: number of classes.
    """

    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} feature rows"
            )
        if feats.shape[0] == 0:
            raise ValueError("dataset must contain at least one sample")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if self.classes < 1:
            raise ValueError(f"classes must be positive, got {self.classes}")
        if labs.size and (labs.min() < 0 or labs.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        feats.flags.writeable = False
        labs.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def sample_count(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class ClientShard:
    """One client's slice of a parent dataset.

    ``indices`` point into the dataset the shard was partitioned from;
    ``entropy`` is the Shannon entropy (nats) of ``label_histogram``.
    """

    client_id: int
    indices: np.ndarray
    label_histogram: np.ndarray
    entropy: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        hist = np.asarray(self.label_histogram, dtype=np.int64)
        if int(hist.sum()) != idx.size:
            raise ValueError(
                f"histogram total {int(hist.sum())} != shard size {idx.size}"
            )
        idx.flags.writeable = False
        hist.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "label_histogram", hist)

    @property
    def sample_count(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    Attributes:
        total_clients: number of clients C.
        samples_per_client: identical shard size for every client.
        skew_p: diversity skew in [0, 1); higher concentrates entropy low.
        classes: class count K of the parent dataset.
        seed: 64-bit seed; partition is a pure function of (dataset, spec).
    """

    total_clients: int
    samples_per_client: int
    skew_p: float
    classes: int
    seed: int

    def __post_init__(self):
        if self.total_clients < 1:
            raise ValueError("total_clients must be positive")
        if self.samples_per_client < 1:
            raise ValueError("samples_per_client must be positive")
        if not 0.0 <= self.skew_p < 1.0:
            raise ValueError(f"skew_p must lie in [0, 1), got {self.skew_p}")
        if self.classes < 2:
            raise ValueError("classes must be at least 2")


def entropy_of(histogram) -> float:
    """Shannon entropy in nats of a histogram of non-negative counts.

    Zero-count bins contribute exactly 0.  The result lies in [0, log K]
    for a K-bin histogram.
    """
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("histogram must be a non-empty 1-D sequence")
    if np.any(counts < 0):
        raise ValueError("histogram counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram must contain at least one count")
    probs = counts[counts > 0] / total
    # + 0.0 normalizes the -0.0 that a single-class histogram produces.
    return float(-np.sum(probs * np.log(probs))) + 0.0


def generate_synthetic(
    classes: int,
    feature_dim: int,
    samples: int,
    seed: int,
    mean_scale: float = 0.3,
) -> Dataset:
    """Draw a classification dataset from K Gaussian clusters.

    Cluster means are seed-deterministic draws scaled by ``mean_scale``;
    every cluster shares unit covariance.  Class proportions are uniform
    (the first ``samples % classes`` classes absorb any remainder) and the
    row order is shuffled.  Identical arguments produce an identical
    dataset, bit for bit.
    """
    if classes < 2:
        raise ValueError("classes must be at least 2")
    if feature_dim < 1:
        raise ValueError("feature_dim must be positive")
    if samples < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    means = rng.standard_normal((classes, feature_dim)) * mean_scale
    for i in range(classes):
        for j in range(i + 1, classes):
            if np.array_equal(means[i], means[j]):
                raise RuntimeError(f"cluster means {i} and {j} coincide")
    counts = np.full(classes, samples // classes, dtype=np.int64)
    counts[: samples % classes] += 1
    labels = np.repeat(np.arange(classes, dtype=np.int64), counts)
    features = means[labels] + rng.standard_normal((samples, feature_dim))
    order = rng.permutation(samples)
    return Dataset(features=features[order], labels=labels[order], classes=classes)


def subset(dataset: Dataset, indices) -> Dataset:
    """A new dataset holding the given rows of ``dataset``."""
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(
        features=dataset.features[idx],
        labels=dataset.labels[idx],
        classes=dataset.classes,
    )


def partition(dataset: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split ``dataset`` into equally sized, label-skewed client shards.

    Client k mixes dominant class ``k % K`` into a uniform background with
    weight s_k = u_k**(1 - p) and draws its label multiset i.i.d. from that
    mixture, then claims matching samples from per-class pools without
    replacement.  If some class pool cannot satisfy the drawn multiset, the
    dominant class is redrawn (multiset included) up to a bounded number of
    attempts, after which the shortfall is sampled with replacement from the
    class's full index set.
    """
    if spec.classes != dataset.classes:
        raise ValueError(
            f"spec.classes={spec.classes} does not match dataset classes={dataset.classes}"
        )
    needed = spec.total_clients * spec.samples_per_client
    if needed > dataset.sample_count:
        raise ValueError(
            f"partition needs {needed} samples but dataset has {dataset.sample_count}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    k_classes = spec.classes

    # Per-class pools of unassigned indices, pre-shuffled so claiming from
    # the tail is an unbiased without-replacement draw.
    pools: list[list[int]] = []
    full_class_indices: list[np.ndarray] = []
    for c in range(k_classes):
        class_idx = np.flatnonzero(dataset.labels == c)
        full_class_indices.append(class_idx)
        pools.append(list(class_idx[rng.permutation(class_idx.size)]))

    shards: list[ClientShard] = []
    for client_id in range(spec.total_clients):
        u = rng.uniform()
        skew = u ** (1.0 - spec.skew_p)
        dominant = client_id % k_classes
        histogram = None
        for _ in range(_MAX_REDRAWS):
            mixture = np.full(k_classes, (1.0 - skew) / k_classes)
            mixture[dominant] += skew
            drawn = rng.multinomial(spec.samples_per_client, mixture)
            if all(drawn[c] <= len(pools[c]) for c in range(k_classes)):
                histogram = drawn
                break
            dominant = int(rng.integers(k_classes))
        if histogram is None:
            histogram = drawn  # last draw; shortfalls filled with replacement

        taken: list[int] = []
        for c in range(k_classes):
            want = int(histogram[c])
            have = min(want, len(pools[c]))
            for _ in range(have):
                taken.append(pools[c].pop())
            shortfall = want - have
            if shortfall:
                extra = rng.choice(full_class_indices[c], size=shortfall, replace=True)
                taken.extend(int(i) for i in extra)
        indices = np.array(taken, dtype=np.int64)
        shards.append(
            ClientShard(
                client_id=client_id,
                indices=indices,
                label_histogram=histogram.astype(np.int64),
                entropy=entropy_of(histogram),
            )
        )
    return shards


def write_raw(path, dataset: Dataset) -> None:
    """Serialize a dataset to the little-endian binary exchange layout.

    Layout: magic ``FSDS``, u32 sample count, u32 feature dim, u32 class
    count, float32 features row-major, then u16 labels.
    """
    if dataset.classes > 0xFFFF:
        raise ValueError("raw layout stores labels as u16; too many classes")
    with open(path, "wb") as fh:
        fh.write(
            _RAW_HEADER.pack(
                RAW_MAGIC, dataset.sample_count, dataset.feature_dim, dataset.classes
            )
        )
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u2").tobytes())


def load_raw(path) -> Dataset:
    """Read a dataset written in the layout documented at ``write_raw``."""
    with open(path, "rb") as fh:
        header = fh.read(_RAW_HEADER.size)
        if len(header) < _RAW_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, n_samples, feature_dim, classes = _RAW_HEADER.unpack(header)
        if magic != RAW_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {RAW_MAGIC!r}")
        feat_bytes = fh.read(4 * n_samples * feature_dim)
        label_bytes = fh.read(2 * n_samples)
        trailing = fh.read(1)
    if len(feat_bytes) != 4 * n_samples * feature_dim or len(label_bytes) != 2 * n_samples:
        raise ValueError(f"{path}: truncated payload")
    if trailing:
        raise ValueError(f"{path}: trailing bytes after payload")
    features = (
        np.frombuffer(feat_bytes, dtype="<f4")
        .reshape(n_samples, feature_dim)
        .astype(np.float64)
    )
    labels = np.frombuffer(label_bytes, dtype="<u2").astype(np.int64)
    return Dataset(features=features, labels=labels, classes=int(classes))
