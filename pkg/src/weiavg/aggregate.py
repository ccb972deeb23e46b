"""Server-side combination of client updates.

Three strategies share one weighted-summation routine so that the lambda=0
degeneration is exact: simple averaging, diversity weighting by label
entropy, and diversity weighting by the projection of each update onto the
round's simple-averaged update.  Summation always walks clients in ascending
id order, which makes bit-level trajectory comparisons meaningful.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import LocalUpdate
from .paramvec import (
    DegenerateGlobalUpdate,
    ParamVec,
    paramvec,
    projection_norm,
)

logger = logging.getLogger(__name__)

FEDAVG = "fedavg"
WEIAVG_ENTROPY = "weiavg_entropy"
WEIAVG_PROJECTION = "weiavg_projection"
STRATEGIES = (FEDAVG, WEIAVG_ENTROPY, WEIAVG_PROJECTION)

# |sum(weights) - 1| must stay under this after normalization.
WEIGHT_SUM_TOLERANCE = 1e-12
DEFAULT_LT_EPSILON = 0.01


@dataclass(frozen=True)
class AggregationPolicy:
    """Strategy selector plus the diversity-weighting knobs.

    ``lam`` is the power applied to shifted scores: 0 recovers uniform
    weights, large values concentrate weight on the highest-scoring client.
    ``lt_epsilon`` scales the positivity shift applied to raw scores.
    """

    kind: str
    lam: float = 0.0
    lt_epsilon: float = DEFAULT_LT_EPSILON

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and non-negative")
        if not (np.isfinite(self.lt_epsilon) and self.lt_epsilon > 0):
            raise ValueError("lt_epsilon must be finite and positive")


@dataclass(frozen=True)
class WeightVector:
    """Normalized per-client weights, aligned with ``client_ids``."""

    weights: np.ndarray
    client_ids: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        ids = (
            np.arange(w.size)
            if self.client_ids is None
            else np.asarray(self.client_ids, dtype=np.int64)
        )
        if w.ndim != 1 or w.size == 0 or ids.shape != w.shape:
            raise ValueError("weights and client_ids must be equal-length 1-D and non-empty")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and strictly positive")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if np.unique(ids).size != ids.size:
            raise ValueError("client_ids must be distinct")
        w.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "client_ids", ids)

    @property
    def n(self) -> int:
        return self.weights.size


def linear_transform(scores, epsilon: float) -> np.ndarray:
    """Shift scores to be strictly positive while preserving their order.

    z_i = scores_i - min + epsilon * max(range, 1), range = max - min.  The
    clamp at 1 keeps the shift meaningful when all scores coincide.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValueError("epsilon must be finite and positive")
    low = s.min()
    spread = s.max() - low
    return s - low + epsilon * max(spread, 1.0)


def power_weights(z, lam: float, client_ids=None) -> WeightVector:
    """w_i = z_i^lam / sum_j z_j^lam, computed in log space.

    lam = 0 returns exactly uniform 1/n (not a log-space round trip), which
    is what makes the degeneration to simple averaging bit-exact.
    """
    zs = np.asarray(z, dtype=np.float64)
    if zs.ndim != 1 or zs.size == 0:
        raise ValueError("z must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(zs)) or np.any(zs <= 0):
        raise ValueError("z must be finite and strictly positive")
    if not (np.isfinite(lam) and lam >= 0):
        raise ValueError("lam must be finite and non-negative")
    n = zs.size
    if lam == 0.0:
        w = np.full(n, 1.0 / n)
    else:
        logw = lam * np.log(zs)
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
    return WeightVector(weights=w, client_ids=client_ids)


def aggregate_fedavg(updates) -> ParamVec:
    """Sample-count-weighted average; uniform when counts are equal."""
    ordered = _sorted_updates(updates)
    counts = np.array([u.sample_count for u in ordered], dtype=np.float64)
    n = len(ordered)
    if np.all(counts == counts[0]):
        weights = np.full(n, 1.0 / n)
    else:
        weights = counts / counts.sum()
    return paramvec(_weighted_sum(ordered, weights))


def aggregate_weiavg_entropy(
    updates, entropies, policy: AggregationPolicy
) -> tuple[ParamVec, WeightVector]:
    """Diversity-weighted average using per-client label entropies as scores."""
    ordered = _sorted_updates(updates)
    scores = np.asarray(entropies, dtype=np.float64)
    if scores.shape != (len(ordered),):
        raise ValueError(
            f"need one entropy per update, got {scores.shape} for {len(ordered)} updates"
        )
    order = _sort_permutation(updates)
    scores = scores[order]
    ids = np.array([u.client_id for u in ordered], dtype=np.int64)
    wv = power_weights(linear_transform(scores, policy.lt_epsilon), policy.lam, ids)
    return paramvec(_weighted_sum(ordered, wv.weights)), wv


def aggregate_weiavg_projection(
    updates, policy: AggregationPolicy
) -> tuple[ParamVec, WeightVector, np.ndarray]:
    """Diversity-weighted average scored by projection onto the simple average.

    The simple average of the round's updates serves as the reference
    direction; each client's score is the signed length of its update along
    it.  A (near-)zero reference makes the projection undefined, in which
    case weighting falls back to uniform and the returned projections are
    NaN so downstream consumers can exclude the round.
    """
    ordered = _sorted_updates(updates)
    n = len(ordered)
    ids = np.array([u.client_id for u in ordered], dtype=np.int64)
    uniform = np.full(n, 1.0 / n)
    reference = paramvec(_weighted_sum(ordered, uniform))
    try:
        projections = np.array(
            [projection_norm(u.delta, reference) for u in ordered], dtype=np.float64
        )
    except DegenerateGlobalUpdate:
        logger.warning(
            "degenerate simple-averaged update (norm ~ 0); falling back to uniform weights"
        )
        wv = WeightVector(weights=uniform, client_ids=ids)
        return reference, wv, np.full(n, np.nan)
    wv = power_weights(
        linear_transform(projections, policy.lt_epsilon), policy.lam, ids
    )
    return paramvec(_weighted_sum(ordered, wv.weights)), wv, projections


def _sorted_updates(updates) -> list[LocalUpdate]:
    """Validate a round's updates and fix the summation order."""
    items = list(updates)
    if not items:
        raise ValueError("need at least one update")
    dim = items[0].delta.size
    for u in items:
        if u.delta.size != dim:
            raise ValueError(
                f"update length mismatch: client {u.client_id} has {u.delta.size}, expected {dim}"
            )
    ids = [u.client_id for u in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client_id among updates")
    return sorted(items, key=lambda u: u.client_id)


def _sort_permutation(updates) -> np.ndarray:
    """Permutation that sorts the given update sequence by client id."""
    ids = np.array([u.client_id for u in updates], dtype=np.int64)
    return np.argsort(ids, kind="stable")


def _weighted_sum(ordered_updates, weights) -> np.ndarray:
    """sum_k w_k * u_k, accumulated strictly in ascending client-id order."""
    total = np.zeros(ordered_updates[0].delta.size, dtype=np.float64)
    for u, w in zip(ordered_updates, weights):
        total += w * np.asarray(u.delta)
    return total
