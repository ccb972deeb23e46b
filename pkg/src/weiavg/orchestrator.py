"""Round-by-round drive of a federated experiment.

Randomness is organized as named streams derived from one root seed:
partitioning, model init, per-round client selection, and per-(round,
client) local training each get an independent generator.  Client training
within a round can therefore fan out to a worker pool without changing any
result, and two strategies run with the same root seed share their client
selections and initial model exactly, differing only in aggregation.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .aggregate import (
    FEDAVG,
    WEIAVG_ENTROPY,
    WEIAVG_PROJECTION,
    AggregationPolicy,
    WeightVector,
    aggregate_fedavg,
    aggregate_weiavg_entropy,
    aggregate_weiavg_projection,
)
from .datagen import (
    ClientShard,
    Dataset,
    PartitionSpec,
    generate_synthetic,
    load_raw,
    partition,
    subset,
)
from .model import (
    DivergenceError,
    MlpModel,
    ModelShape,
    TrainConfig,
    evaluate,
    init_model,
    local_train,
)
from .paramvec import ZERO_NORM_THRESHOLD, ParamVec, add, norm

logger = logging.getLogger(__name__)

WORKER_ENV = "WEIAVG_WORKERS"

# Stream tags: one namespace per consumer of randomness.
_STREAM_PARTITION = 0
_STREAM_INIT = 1
_STREAM_SELECT = 2
_STREAM_TRAIN = 3


@dataclass(frozen=True)
class DatasetSpec:
    """Where the task data comes from.

    A non-empty ``path`` loads a raw dataset file; otherwise ``samples``
    rows are generated synthetically from ``seed``.  The dataset is shared
    across root seeds (only partitioning varies), so accuracy numbers are
    comparable seed to seed.
    """

    classes: int
    feature_dim: int
    samples: int
    seed: int
    mean_scale: float = 0.3
    path: str = ""

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classes must be at least 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.samples < 2:
            raise ValueError("samples must be at least 2")
        if not (np.isfinite(self.mean_scale) and self.mean_scale > 0):
            raise ValueError("mean_scale must be finite and positive")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    partition: PartitionSpec
    train: TrainConfig
    policy: AggregationPolicy
    total_clients: int
    clients_per_round: int
    rounds: int
    test_fraction: float
    hidden_units: int
    seeds: tuple[int, ...]

    def __post_init__(self):
        if not isinstance(self.policy, AggregationPolicy):
            raise TypeError(
                f"policy must be an AggregationPolicy, got {type(self.policy).__name__}"
            )
        if self.clients_per_round < 1 or self.clients_per_round > self.total_clients:
            raise ValueError(
                f"clients_per_round must lie in [1, {self.total_clients}], "
                f"got {self.clients_per_round}"
            )
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be positive")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("seeds must be non-empty")
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be non-negative")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        object.__setattr__(self, "seeds", seeds)
        if self.partition.total_clients != self.total_clients:
            raise ValueError("partition.total_clients disagrees with total_clients")
        if self.partition.classes != self.dataset.classes:
            raise ValueError("partition.classes disagrees with dataset.classes")


@dataclass(frozen=True)
class World:
    """Everything one seed's run needs: data split and client shards."""

    root_seed: int
    train: Dataset
    test: Dataset
    shards: tuple[ClientShard, ...]


@dataclass(frozen=True)
class RoundRecord:
    """Telemetry for one completed round.

    All per-client arrays (selected, entropies, projections, and
    weights.weights) are aligned and sorted by ascending client id.
    ``projections`` is None for strategies that never compute them, and NaN
    on degenerate-fallback rounds.  ``simple_update_norm`` is the norm of
    the round's simple-averaged update; None when reconstructed from files
    that do not carry it.
    """

    round: int
    selected: np.ndarray
    weights: WeightVector
    projections: np.ndarray | None
    entropies: np.ndarray
    test_accuracy: float
    test_loss: float
    degenerate_fallback: bool
    simple_update_norm: float | None = None

    def __post_init__(self):
        ids = np.asarray(self.selected, dtype=np.int64)
        ent = np.asarray(self.entropies, dtype=np.float64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("selected must be a non-empty 1-D id array")
        if np.any(np.diff(ids) <= 0):
            raise ValueError("selected ids must be strictly ascending")
        if not np.array_equal(ids, self.weights.client_ids):
            raise ValueError("weights are not aligned with selected ids")
        if ent.shape != ids.shape:
            raise ValueError("entropies are not aligned with selected ids")
        proj = self.projections
        if proj is not None:
            proj = np.asarray(proj, dtype=np.float64)
            if proj.shape != ids.shape:
                raise ValueError("projections are not aligned with selected ids")
            proj.flags.writeable = False
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.test_accuracy} outside [0, 1]")
        ids.flags.writeable = False
        ent.flags.writeable = False
        object.__setattr__(self, "selected", ids)
        object.__setattr__(self, "entropies", ent)
        object.__setattr__(self, "projections", proj)


@dataclass(frozen=True)
class ExperimentResult:
    """Per-seed round records plus any seeds that failed to finish."""

    runs: dict[int, list[RoundRecord]]
    failures: dict[int, str]


def derive_stream(root_seed: int, tag: int, *key: int) -> np.random.Generator:
    """Independent generator for one named consumer of randomness."""
    return np.random.default_rng(np.random.SeedSequence((root_seed, tag, *key)))


def sample_clients(total_clients: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly sample ``count`` distinct client ids from [0, total_clients)."""
    if count > total_clients:
        raise ValueError(f"cannot select {count} of {total_clients} clients")
    return rng.choice(total_clients, size=count, replace=False)


def build_world(cfg: ExperimentConfig, root_seed: int) -> World:
    """Materialize the data split and this seed's client partition."""
    ds = cfg.dataset
    if ds.path:
        base = load_raw(ds.path)
        if base.classes != ds.classes:
            raise ValueError(
                f"dataset file has {base.classes} classes, config says {ds.classes}"
            )
    else:
        base = generate_synthetic(
            classes=ds.classes,
            feature_dim=ds.feature_dim,
            samples=ds.samples,
            seed=ds.seed,
            mean_scale=ds.mean_scale,
        )
    test_count = int(round(base.sample_count * cfg.test_fraction))
    if not 1 <= test_count < base.sample_count:
        raise ValueError(
            f"test_fraction {cfg.test_fraction} leaves no usable split "
            f"of {base.sample_count} samples"
        )
    train_count = base.sample_count - test_count
    needed = cfg.total_clients * cfg.partition.samples_per_client
    if train_count < needed:
        raise ValueError(
            f"partition needs {needed} training samples, split provides {train_count}"
        )
    train = subset(base, np.arange(train_count))
    test = subset(base, np.arange(train_count, base.sample_count))
    part_seed = int(
        np.random.SeedSequence((root_seed, _STREAM_PARTITION)).generate_state(
            1, np.uint64
        )[0]
    )
    shards = partition(train, replace(cfg.partition, seed=part_seed))
    return World(root_seed=root_seed, train=train, test=test, shards=tuple(shards))


def initial_state(cfg: ExperimentConfig, root_seed: int) -> ParamVec:
    """m^0 for this seed; identical across strategies by construction."""
    shape = ModelShape(
        feature_dim=cfg.dataset.feature_dim,
        hidden=cfg.hidden_units,
        classes=cfg.dataset.classes,
    )
    return init_model(shape, derive_stream(root_seed, _STREAM_INIT)).flatten()


def run_round(
    state: ParamVec,
    round_index: int,
    cfg: ExperimentConfig,
    world: World,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[ParamVec, RoundRecord]:
    """Select, train, aggregate, step the global model, and evaluate."""
    select_rng = derive_stream(world.root_seed, _STREAM_SELECT, round_index)
    ids = np.sort(sample_clients(cfg.total_clients, cfg.clients_per_round, select_rng))
    streams = [
        derive_stream(world.root_seed, _STREAM_TRAIN, round_index, int(cid))
        for cid in ids
    ]

    def train_one(job):
        cid, rng = job
        return local_train(state, world.shards[cid], world.train, cfg.train, rng)

    try:
        if executor is None:
            updates = [train_one(job) for job in zip(ids, streams)]
        else:
            updates = list(executor.map(train_one, zip(ids, streams)))
    except DivergenceError as exc:
        raise DivergenceError(
            f"round {round_index}: {exc}",
            client_id=exc.client_id,
            round_index=round_index,
        ) from exc

    entropies = np.array([world.shards[int(cid)].entropy for cid in ids])
    simple = aggregate_fedavg(updates)
    simple_norm = norm(simple)
    degenerate = False
    projections = None
    kind = cfg.policy.kind
    if kind == FEDAVG:
        update = simple
        weights = WeightVector(
            weights=np.full(ids.size, 1.0 / ids.size), client_ids=ids
        )
    elif kind == WEIAVG_ENTROPY:
        update, weights = aggregate_weiavg_entropy(updates, entropies, cfg.policy)
    elif kind == WEIAVG_PROJECTION:
        update, weights, projections = aggregate_weiavg_projection(updates, cfg.policy)
        degenerate = simple_norm <= ZERO_NORM_THRESHOLD
    else:
        raise ValueError(f"unknown strategy {kind!r}")

    new_state = add(state, update)
    accuracy, loss = evaluate(new_state, world.test)
    record = RoundRecord(
        round=round_index,
        selected=ids,
        weights=weights,
        projections=projections,
        entropies=entropies,
        test_accuracy=accuracy,
        test_loss=loss,
        degenerate_fallback=degenerate,
        simple_update_norm=simple_norm,
    )
    return new_state, record


def run_seed(
    cfg: ExperimentConfig,
    root_seed: int,
    executor: ThreadPoolExecutor | None = None,
) -> list[RoundRecord]:
    """One seed's full trajectory: fresh partition, fresh init, all rounds."""
    seeded_cfg = replace(cfg, train=replace(cfg.train, seed=root_seed))
    world = build_world(seeded_cfg, root_seed)
    state = initial_state(seeded_cfg, root_seed)
    records = []
    for round_index in range(1, seeded_cfg.rounds + 1):
        state, record = run_round(state, round_index, seeded_cfg, world, executor)
        records.append(record)
    return records


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """All seeds; a failing seed is excluded with a warning, never silently."""
    workers = worker_count()
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    runs: dict[int, list[RoundRecord]] = {}
    failures: dict[int, str] = {}
    try:
        for seed in cfg.seeds:
            try:
                runs[seed] = run_seed(cfg, seed, executor)
            except DivergenceError as exc:
                failures[seed] = str(exc)
                logger.warning("seed %d excluded: %s", seed, exc)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return ExperimentResult(runs=runs, failures=failures)


def worker_count() -> int:
    """Training fan-out width, from the environment; 1 means sequential."""
    raw = os.environ.get(WORKER_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{WORKER_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{WORKER_ENV} must be a positive integer, got {raw!r}")
    return value


def accuracy_curves(result: ExperimentResult) -> tuple[np.ndarray, np.ndarray]:
    """(sorted seeds, accuracy matrix of shape (n_seeds, rounds))."""
    if not result.runs:
        raise ValueError("experiment produced no successful runs")
    seeds = np.array(sorted(result.runs), dtype=np.int64)
    matrix = np.array(
        [[rec.test_accuracy for rec in result.runs[int(s)]] for s in seeds]
    )
    return seeds, matrix


def mean_accuracy_curve(result: ExperimentResult) -> tuple[np.ndarray, np.ndarray]:
    """Per-round mean and standard deviation of accuracy across seeds."""
    _, matrix = accuracy_curves(result)
    return matrix.mean(axis=0), matrix.std(axis=0)
