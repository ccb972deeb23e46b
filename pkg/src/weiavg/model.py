"""One-hidden-layer softmax classifier with hand-written gradients.

Parameters flatten to a single float64 vector in a fixed order: hidden-layer
weights row-major, hidden bias, output weights row-major, output bias.  That
vector is the unit of exchange between clients and the server; optimizer
state (momentum buffers) never leaves a client and is rebuilt fresh on every
local training call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ClientShard, Dataset
from .paramvec import ParamVec, paramvec


class DivergenceError(RuntimeError):
    """Local training produced a non-finite loss or parameters."""

    def __init__(self, message: str, client_id=None, round_index=None):
        super().__init__(message)
        self.client_id = client_id
        self.round_index = round_index


@dataclass(frozen=True)
class ModelShape:
    feature_dim: int
    hidden: int
    classes: int

    def __post_init__(self):
        if min(self.feature_dim, self.hidden, self.classes) < 1:
            raise ValueError(f"invalid model shape {self}")

    @property
    def param_count(self) -> int:
        return (
            self.hidden * self.feature_dim
            + self.hidden
            + self.classes * self.hidden
            + self.classes
        )

    @classmethod
    def infer(cls, param_count: int, feature_dim: int, classes: int) -> "ModelShape":
        """Recover the hidden width from a flat parameter count."""
        per_unit = feature_dim + 1 + classes
        hidden, rem = divmod(param_count - classes, per_unit)
        if rem != 0 or hidden < 1:
            raise ValueError(
                f"{param_count} parameters do not fit any hidden width for "
                f"feature_dim={feature_dim}, classes={classes}"
            )
        return cls(feature_dim=feature_dim, hidden=int(hidden), classes=classes)


@dataclass
class MlpModel:
    """Dense weights of the classifier; activation is ReLU throughout."""

    w1: np.ndarray  # (hidden, feature_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (classes, hidden)
    b2: np.ndarray  # (classes,)

    @property
    def shape(self) -> ModelShape:
        return ModelShape(
            feature_dim=self.w1.shape[1],
            hidden=self.w1.shape[0],
            classes=self.w2.shape[0],
        )

    def flatten(self) -> ParamVec:
        return paramvec(
            np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])
        )

    @classmethod
    def from_flat(cls, flat: ParamVec, shape: ModelShape) -> "MlpModel":
        if flat.size != shape.param_count:
            raise ValueError(
                f"flat vector has {flat.size} values, shape needs {shape.param_count}"
            )
        w1, b1, w2, b2 = _views(np.array(flat, dtype=np.float64), shape)
        return cls(w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    """Local-training hyperparameters.

    ``prox_mu`` = 0 disables the proximal penalty exactly; ``seed`` is the
    root from which per-round, per-client training streams are derived.
    """

    batch_size: int
    local_epochs: int
    learning_rate: float
    momentum: float
    prox_mu: float
    seed: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be positive")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not (np.isfinite(self.prox_mu) and self.prox_mu >= 0):
            raise ValueError("prox_mu must be finite and non-negative")


@dataclass(frozen=True)
class LocalUpdate:
    """A client's round output: trained-minus-global parameter delta."""

    client_id: int
    delta: ParamVec
    sample_count: int


def init_model(shape: ModelShape, rng: np.random.Generator) -> MlpModel:
    """He-uniform weights, zero biases, drawn in a fixed order from ``rng``."""
    lim1 = np.sqrt(6.0 / shape.feature_dim)
    lim2 = np.sqrt(6.0 / shape.hidden)
    return MlpModel(
        w1=rng.uniform(-lim1, lim1, (shape.hidden, shape.feature_dim)),
        b1=np.zeros(shape.hidden),
        w2=rng.uniform(-lim2, lim2, (shape.classes, shape.hidden)),
        b2=np.zeros(shape.classes),
    )


def forward_loss(
    model: MlpModel,
    batch_features: np.ndarray,
    batch_labels: np.ndarray,
    global_ref: ParamVec | None = None,
    prox_mu: float = 0.0,
) -> tuple[float, int]:
    """Mean cross-entropy (plus optional proximal penalty) and correct count.

    With ``prox_mu`` > 0 the loss gains (mu/2) * ||theta - theta_global||^2,
    pulling local parameters toward ``global_ref``.  A non-finite loss
    signals divergence; callers that own round/client context report it.
    """
    x, y = _check_batch(batch_features, batch_labels, model.shape.classes)
    logits = _logits(model.w1, model.b1, model.w2, model.b2, x)
    loss = _mean_cross_entropy(logits, y)
    if prox_mu > 0.0:
        if global_ref is None:
            raise ValueError("prox_mu > 0 requires a global reference vector")
        diff = np.asarray(model.flatten()) - np.asarray(global_ref)
        loss += 0.5 * prox_mu * float(diff @ diff)
    correct = int(np.count_nonzero(np.argmax(logits, axis=1) == y))
    return loss, correct


def backward(
    model: MlpModel,
    batch_features: np.ndarray,
    batch_labels: np.ndarray,
    global_ref: ParamVec | None = None,
    prox_mu: float = 0.0,
) -> ParamVec:
    """Gradient of ``forward_loss`` w.r.t. all parameters, flattened."""
    x, y = _check_batch(batch_features, batch_labels, model.shape.classes)
    shape = model.shape
    flat = np.asarray(model.flatten(), dtype=np.float64)
    grad = np.zeros_like(flat)
    _fused_step(x, y, *_views(flat, shape), *_views(grad, shape))
    if prox_mu > 0.0:
        if global_ref is None:
            raise ValueError("prox_mu > 0 requires a global reference vector")
        grad += prox_mu * (flat - np.asarray(global_ref))
    return paramvec(grad)


def local_train(
    global_params: ParamVec,
    shard: ClientShard,
    data: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> LocalUpdate:
    """Run local mini-batch SGD with momentum and return the parameter delta.

    Executes ``local_epochs`` passes over the shard, reshuffling batch order
    each epoch from ``rng``; momentum starts at zero for every call.  The
    result is a pure function of (global_params, shard, cfg, rng state).

    Raises:
        DivergenceError: on a non-finite loss or non-finite trained weights.
    """
    if shard.sample_count == 0:
        raise ValueError(f"client {shard.client_id} has an empty shard")
    shape = ModelShape.infer(global_params.size, data.feature_dim, data.classes)
    x_all = data.features[shard.indices]
    y_all = data.labels[shard.indices]
    n = shard.sample_count

    reference = np.asarray(global_params, dtype=np.float64)
    params = reference.copy()
    grad = np.zeros_like(params)
    velocity = np.zeros_like(params)
    param_views = _views(params, shape)
    grad_views = _views(grad, shape)
    mu = cfg.prox_mu

    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = _fused_step(x_all[idx], y_all[idx], *param_views, *grad_views)
            if mu > 0.0:
                diff = params - reference
                grad += mu * diff
                loss += 0.5 * mu * float(diff @ diff)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"client {shard.client_id}: non-finite training loss",
                    client_id=shard.client_id,
                )
            velocity *= cfg.momentum
            velocity += grad
            params -= cfg.learning_rate * velocity

    delta = params - reference
    if not np.all(np.isfinite(delta)):
        raise DivergenceError(
            f"client {shard.client_id}: non-finite trained parameters",
            client_id=shard.client_id,
        )
    return LocalUpdate(
        client_id=shard.client_id, delta=paramvec(delta), sample_count=n
    )


def evaluate(model_params: ParamVec, test: Dataset) -> tuple[float, float]:
    """Accuracy under the argmax decision rule and mean cross-entropy."""
    if test.sample_count == 0:
        raise ValueError("test set must be non-empty")
    shape = ModelShape.infer(model_params.size, test.feature_dim, test.classes)
    w1, b1, w2, b2 = _views(np.asarray(model_params, dtype=np.float64), shape)
    logits = _logits(w1, b1, w2, b2, test.features)
    accuracy = float(
        np.count_nonzero(np.argmax(logits, axis=1) == test.labels) / test.sample_count
    )
    return accuracy, _mean_cross_entropy(logits, test.labels)


def _views(flat: np.ndarray, shape: ModelShape):
    """w1, b1, w2, b2 views into one flat buffer, in flatten order."""
    d, h, k = shape.feature_dim, shape.hidden, shape.classes
    stops = np.cumsum([h * d, h, k * h, k])
    w1 = flat[: stops[0]].reshape(h, d)
    b1 = flat[stops[0] : stops[1]]
    w2 = flat[stops[1] : stops[2]].reshape(k, h)
    b2 = flat[stops[2] : stops[3]]
    return w1, b1, w2, b2


def _logits(w1, b1, w2, b2, x: np.ndarray) -> np.ndarray:
    hidden = np.maximum(x @ w1.T + b1, 0.0)
    return hidden @ w2.T + b2


def _mean_cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_total = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_total - shifted[np.arange(y.size), y]))


def _fused_step(xb, yb, w1, b1, w2, b2, g1, gb1, g2, gb2) -> float:
    """One forward/backward pass writing gradients into the g* views."""
    m = xb.shape[0]
    z1 = xb @ w1.T + b1
    hidden = np.maximum(z1, 0.0)
    logits = hidden @ w2.T + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    total = expz.sum(axis=1, keepdims=True)
    rows = np.arange(m)
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, yb]))
    dlogits = expz / total
    dlogits[rows, yb] -= 1.0
    dlogits /= m
    np.matmul(dlogits.T, hidden, out=g2)
    gb2[:] = dlogits.sum(axis=0)
    dhidden = dlogits @ w2
    dhidden[z1 <= 0.0] = 0.0
    np.matmul(dhidden.T, xb, out=g1)
    gb1[:] = dhidden.sum(axis=0)
    return loss


def _check_batch(features, labels, classes: int):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"inconsistent batch shapes {x.shape} / {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    return x, y
