"""Shared fixtures: the frozen study runs every statistical test draws on.

Computing five strategy arms over 20 seeds takes minutes, so one
session-scoped fixture runs them all exactly once; tests only read the
resulting records.
"""

from __future__ import annotations

import pytest

from weiavg.aggregate import FEDAVG, WEIAVG_PROJECTION, AggregationPolicy
from weiavg.datagen import PartitionSpec
from weiavg.model import TrainConfig
from weiavg.orchestrator import DatasetSpec, ExperimentConfig, run_experiment

STUDY_SEEDS = tuple(range(1, 21))

# One synthetic task shared by every arm so accuracies stay comparable:
# only partitioning, init, selection, and batch order vary with the root
# seed.  The training knobs are set so that a single-class client exhausts
# its local loss inside the 10 local epochs while a diverse client keeps
# descending; that saturation contrast is what makes a client's update
# projection informative about its label diversity.
STUDY = dict(
    classes=10,
    feature_dim=32,
    samples=18_760,
    data_seed=7,
    mean_scale=0.5,
    total_clients=100,
    samples_per_client=150,
    skew_p=0.8,
    clients_per_round=10,
    rounds=100,
    batch_size=8,
    local_epochs=10,
    learning_rate=0.05,
    momentum=0.0,
    hidden_units=64,
    test_fraction=0.2,
)


def study_config(
    kind: str,
    lam: float = 0.0,
    prox_mu: float = 0.0,
    local_epochs: int | None = None,
) -> ExperimentConfig:
    """One study arm; only the strategy knobs vary between arms."""
    s = STUDY
    return ExperimentConfig(
        dataset=DatasetSpec(
            classes=s["classes"],
            feature_dim=s["feature_dim"],
            samples=s["samples"],
            seed=s["data_seed"],
            mean_scale=s["mean_scale"],
        ),
        partition=PartitionSpec(
            total_clients=s["total_clients"],
            samples_per_client=s["samples_per_client"],
            skew_p=s["skew_p"],
            classes=s["classes"],
            seed=0,
        ),
        train=TrainConfig(
            batch_size=s["batch_size"],
            local_epochs=s["local_epochs"] if local_epochs is None else local_epochs,
            learning_rate=s["learning_rate"],
            momentum=s["momentum"],
            prox_mu=prox_mu,
            seed=0,
        ),
        policy=AggregationPolicy(kind=kind, lam=lam),
        total_clients=s["total_clients"],
        clients_per_round=s["clients_per_round"],
        rounds=s["rounds"],
        test_fraction=s["test_fraction"],
        hidden_units=s["hidden_units"],
        seeds=STUDY_SEEDS,
    )


@pytest.fixture(scope="session")
def study_runs():
    """Five strategy arms, 20 seeds each.  Minutes of compute; run once."""
    arms = {
        "proj_lam0": study_config(WEIAVG_PROJECTION, lam=0.0),
        "proj_lam2": study_config(WEIAVG_PROJECTION, lam=2.0),
        "proj_lam2_e1": study_config(WEIAVG_PROJECTION, lam=2.0, local_epochs=1),
        "fedprox": study_config(FEDAVG, prox_mu=0.05),
        "combined": study_config(WEIAVG_PROJECTION, lam=2.0, prox_mu=0.05),
    }
    out = {}
    for name, cfg in arms.items():
        print(f"\n[study] running arm {name} ({len(cfg.seeds)} seeds) ...", flush=True)
        result = run_experiment(cfg)
        assert not result.failures, f"arm {name} lost seeds: {result.failures}"
        out[name] = result
    return out
