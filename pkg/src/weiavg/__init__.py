"""Deterministic federated-learning simulator with diversity-weighted averaging."""

from .aggregate import (
    FEDAVG,
    STRATEGIES,
    WEIAVG_ENTROPY,
    WEIAVG_PROJECTION,
    AggregationPolicy,
    WeightVector,
    aggregate_fedavg,
    aggregate_weiavg_entropy,
    aggregate_weiavg_projection,
    linear_transform,
    power_weights,
)
from .analysis import (
    CorrelationReport,
    StrategySummary,
    UndefinedCorrelationError,
    compare_strategies,
    pearson,
    per_client_mean_projection,
    projection_entropy_correlation,
)
from .datagen import (
    ClientShard,
    Dataset,
    PartitionSpec,
    entropy_of,
    generate_synthetic,
    load_raw,
    partition,
    subset,
    write_raw,
)
from .model import (
    DivergenceError,
    LocalUpdate,
    MlpModel,
    ModelShape,
    TrainConfig,
    evaluate,
    init_model,
    local_train,
)
from .orchestrator import (
    DatasetSpec,
    ExperimentConfig,
    ExperimentResult,
    RoundRecord,
    World,
    accuracy_curves,
    build_world,
    initial_state,
    mean_accuracy_curve,
    run_experiment,
    run_round,
    run_seed,
)
from .paramvec import DegenerateGlobalUpdate, ParamVec, paramvec

__version__ = "0.1.0"

__all__ = [
    "AggregationPolicy",
    "ClientShard",
    "CorrelationReport",
    "Dataset",
    "DatasetSpec",
    "DegenerateGlobalUpdate",
    "DivergenceError",
    "ExperimentConfig",
    "ExperimentResult",
    "FEDAVG",
    "LocalUpdate",
    "MlpModel",
    "ModelShape",
    "ParamVec",
    "PartitionSpec",
    "RoundRecord",
    "STRATEGIES",
    "StrategySummary",
    "TrainConfig",
    "UndefinedCorrelationError",
    "WEIAVG_ENTROPY",
    "WEIAVG_PROJECTION",
    "WeightVector",
    "World",
    "accuracy_curves",
    "aggregate_fedavg",
    "aggregate_weiavg_entropy",
    "aggregate_weiavg_projection",
    "build_world",
    "compare_strategies",
    "entropy_of",
    "evaluate",
    "generate_synthetic",
    "init_model",
    "initial_state",
    "linear_transform",
    "load_raw",
    "local_train",
    "mean_accuracy_curve",
    "partition",
    "paramvec",
    "pearson",
    "per_client_mean_projection",
    "power_weights",
    "projection_entropy_correlation",
    "run_experiment",
    "run_round",
    "run_seed",
    "subset",
    "write_raw",
]
