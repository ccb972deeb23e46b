"""Post-run statistics: projection/entropy correlation and strategy tables.

The Pearson p-value uses the exact two-sided t-test, with the t CDF
evaluated through a continued-fraction regularized incomplete beta.  Sample
sizes here are the number of distinct clients (often ~30), small enough that
a normal approximation would be sloppy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_BETACF_TINY = 1e-300


class UndefinedCorrelationError(ValueError):
    """Correlation requested on inputs where it does not exist."""


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p_value: float
    n_points: int
    grouping: str

    def __post_init__(self):
        if not -1.0 <= self.r <= 1.0:
            raise ValueError(f"r={self.r} outside [-1, 1]")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value={self.p_value} outside [0, 1]")
        if self.n_points < 3:
            raise ValueError("a correlation test needs at least 3 points")


@dataclass(frozen=True)
class StrategySummary:
    strategy: str
    mean_final_accuracy: float
    std_final_accuracy: float
    rounds_to_target: int
    win_rate_vs_baseline: float


def per_client_mean_projection(records) -> dict[int, tuple[float, float]]:
    """client_id -> (mean projection over participations, label entropy).

    ``records`` must come from a single run (one seed): entropies are
    per-partition, so mixing seeds is a caller error and is detected when a
    client shows two different entropies.  Degenerate-fallback rounds carry
    NaN projections and are skipped.
    """
    records = list(records)
    if not records:
        raise ValueError("no records given")
    proj_sum: dict[int, float] = {}
    proj_count: dict[int, int] = {}
    entropy_of_client: dict[int, float] = {}
    saw_telemetry = False
    for rec in records:
        if rec.projections is None:
            continue
        if rec.degenerate_fallback:
            continue
        saw_telemetry = True
        for cid, proj, ent in zip(rec.selected, rec.projections, rec.entropies):
            cid = int(cid)
            known = entropy_of_client.setdefault(cid, float(ent))
            if known != float(ent):
                raise ValueError(
                    f"client {cid} has inconsistent entropies ({known} vs {ent}); "
                    "records from different seeds were mixed"
                )
            proj_sum[cid] = proj_sum.get(cid, 0.0) + float(proj)
            proj_count[cid] = proj_count.get(cid, 0) + 1
    if not saw_telemetry:
        raise ValueError("records carry no projection telemetry")
    return {
        cid: (proj_sum[cid] / proj_count[cid], entropy_of_client[cid])
        for cid in sorted(proj_sum)
    }


def projection_entropy_correlation(records) -> CorrelationReport:
    """Pearson correlation of per-client mean projection against entropy."""
    by_client = per_client_mean_projection(records)
    means = np.array([m for m, _ in by_client.values()])
    entropies = np.array([e for _, e in by_client.values()])
    return pearson(means, entropies, grouping="per-client-averaged")


def pearson(x, y, grouping: str = "paired-samples") -> CorrelationReport:
    """Sample Pearson r with a two-sided t-test p-value (df = n - 2).

    Raises:
        UndefinedCorrelationError: fewer than 3 points or zero variance.
    """
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError(f"x and y must be equal-length 1-D, got {xs.shape} / {ys.shape}")
    n = xs.size
    if n < 3:
        raise UndefinedCorrelationError(f"need at least 3 points, got {n}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("inputs must be finite")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input; correlation undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    one_minus_r2 = (1.0 - r) * (1.0 + r)
    if one_minus_r2 <= 0.0:
        p = 0.0
    else:
        t2 = r * r * df / one_minus_r2
        p = _regularized_incomplete_beta(df / (df + t2), 0.5 * df, 0.5)
        p = max(0.0, min(1.0, p))
    return CorrelationReport(r=r, p_value=p, n_points=n, grouping=grouping)


def compare_strategies(
    curves: dict[str, np.ndarray],
    baseline: str,
    target_accuracy: float,
) -> list[StrategySummary]:
    """Summarize per-seed accuracy curves against a baseline strategy.

    ``curves`` maps strategy name to a (n_seeds, n_rounds) array; all
    entries must share both dimensions (same seed set, same round count).
    rounds_to_target is the first 1-based round where the seed-mean curve
    reaches ``target_accuracy``, with sentinel n_rounds + 1 when it never
    does.  Win rate compares final-round accuracies pairwise per seed
    against the baseline; ties count one half.
    """
    if baseline not in curves:
        raise ValueError(f"baseline {baseline!r} missing from curves")
    shapes = {name: np.asarray(c).shape for name, c in curves.items()}
    base_shape = shapes[baseline]
    if len(base_shape) != 2 or min(base_shape) < 1:
        raise ValueError(f"curves must be 2-D (seeds x rounds), got {base_shape}")
    for name, shape in shapes.items():
        if shape != base_shape:
            raise ValueError(
                f"curve shape mismatch: {name} has {shape}, baseline has {base_shape}"
            )
    n_rounds = base_shape[1]
    base_final = np.asarray(curves[baseline])[:, -1]
    out = []
    for name, curve in curves.items():
        arr = np.asarray(curve, dtype=np.float64)
        final = arr[:, -1]
        seed_mean = arr.mean(axis=0)
        reached = np.nonzero(seed_mean >= target_accuracy)[0]
        rounds_to_target = int(reached[0]) + 1 if reached.size else n_rounds + 1
        wins = np.where(final > base_final, 1.0, np.where(final == base_final, 0.5, 0.0))
        out.append(
            StrategySummary(
                strategy=name,
                mean_final_accuracy=float(final.mean()),
                std_final_accuracy=float(final.std()),
                rounds_to_target=rounds_to_target,
                win_rate_vs_baseline=float(wins.mean()),
            )
        )
    return out


def _regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) by Lentz's continued fraction, accurate to ~1e-15."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # The continued fraction converges fast only on one side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(x, a, b) / a
    return 1.0 - front * _beta_continued_fraction(1.0 - x, b, a) / b


def _beta_continued_fraction(x: float, a: float, b: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError(f"incomplete beta failed to converge for x={x}, a={a}, b={b}")
