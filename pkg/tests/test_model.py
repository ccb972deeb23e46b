"""The hand-written MLP: shapes, losses, gradients, training, evaluation."""

import math

import numpy as np
import pytest

from weiavg.datagen import ClientShard, Dataset, entropy_of, generate_synthetic
from weiavg.model import (
    DivergenceError,
    MlpModel,
    ModelShape,
    TrainConfig,
    backward,
    evaluate,
    forward_loss,
    init_model,
    local_train,
)
from weiavg.paramvec import paramvec, zeros


def small_model(seed=0, d=6, h=5, k=3):
    rng = np.random.default_rng(seed)
    return init_model(ModelShape(feature_dim=d, hidden=h, classes=k), rng)


def small_batch(seed=1, n=12, d=6, k=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(0, k, size=n)


def make_shard(ds, indices, client_id=0):
    idx = np.asarray(indices, dtype=np.int64)
    hist = np.bincount(ds.labels[idx], minlength=ds.classes)
    return ClientShard(
        client_id=client_id, indices=idx, label_histogram=hist, entropy=entropy_of(hist)
    )


def train_cfg(**kw):
    base = dict(
        batch_size=4, local_epochs=2, learning_rate=0.1, momentum=0.0, prox_mu=0.0, seed=0
    )
    base.update(kw)
    return TrainConfig(**base)


# --- shapes -------------------------------------------------------------


def test_param_count_and_infer_roundtrip():
    shape = ModelShape(feature_dim=32, hidden=64, classes=10)
    assert shape.param_count == 32 * 64 + 64 + 64 * 10 + 10
    assert ModelShape.infer(shape.param_count, 32, 10) == shape


def test_infer_rejects_impossible_counts():
    with pytest.raises(ValueError):
        ModelShape.infer(2763, 32, 10)
    with pytest.raises(ValueError):
        ModelShape.infer(10, 32, 10)


def test_flatten_order_and_roundtrip():
    shape = ModelShape(feature_dim=2, hidden=3, classes=2)
    flat = paramvec(np.arange(shape.param_count, dtype=np.float64))
    model = MlpModel.from_flat(flat, shape)
    assert np.array_equal(model.w1, np.arange(6.0).reshape(3, 2))
    assert np.array_equal(model.b1, [6.0, 7.0, 8.0])
    assert np.array_equal(model.w2, np.arange(9.0, 15.0).reshape(2, 3))
    assert np.array_equal(model.b2, [15.0, 16.0])
    assert np.array_equal(model.flatten(), flat)


def test_from_flat_length_check():
    with pytest.raises(ValueError):
        MlpModel.from_flat(zeros(5), ModelShape(feature_dim=2, hidden=3, classes=2))


def test_init_model_bounds_and_zero_biases():
    shape = ModelShape(feature_dim=32, hidden=64, classes=10)
    model = init_model(shape, np.random.default_rng(0))
    assert np.all(np.abs(model.w1) <= math.sqrt(6.0 / 32))
    assert np.all(np.abs(model.w2) <= math.sqrt(6.0 / 64))
    assert np.all(model.b1 == 0.0) and np.all(model.b2 == 0.0)
    same = init_model(shape, np.random.default_rng(0))
    assert np.array_equal(model.flatten(), same.flatten())


# --- forward loss -------------------------------------------------------


def test_loss_is_log_k_with_zero_output_layer():
    model = small_model(k=3)
    model.w2[:] = 0.0
    model.b2[:] = 0.0
    x, y = small_batch(k=3)
    loss, _ = forward_loss(model, x, y)
    assert loss == pytest.approx(math.log(3.0), rel=1e-12)


def test_prox_term_vanishes_at_reference():
    model = small_model()
    x, y = small_batch()
    plain, _ = forward_loss(model, x, y)
    at_ref, _ = forward_loss(model, x, y, global_ref=model.flatten(), prox_mu=0.3)
    assert at_ref == pytest.approx(plain, rel=1e-15)


def test_prox_term_value_on_unit_difference():
    model = small_model()
    x, y = small_batch()
    ref = np.asarray(model.flatten()).copy()
    ref[0] -= 1.0  # ||theta - ref|| = 1
    plain, _ = forward_loss(model, x, y)
    prox, _ = forward_loss(model, x, y, global_ref=paramvec(ref), prox_mu=0.05)
    assert prox - plain == pytest.approx(0.025, rel=1e-12)


def test_prox_requires_reference():
    model = small_model()
    x, y = small_batch()
    with pytest.raises(ValueError):
        forward_loss(model, x, y, prox_mu=0.1)
    with pytest.raises(ValueError):
        backward(model, x, y, prox_mu=0.1)


def test_forward_rejects_bad_batches():
    model = small_model(k=3)
    x, y = small_batch(k=3)
    with pytest.raises(ValueError):
        forward_loss(model, x[:0], y[:0])
    with pytest.raises(ValueError):
        forward_loss(model, x, y[:-1])
    with pytest.raises(ValueError):
        forward_loss(model, x, np.full_like(y, 3))


# --- gradients ----------------------------------------------------------


def finite_difference(model, x, y, coord, step, global_ref, prox_mu):
    shape = model.shape
    flat = np.asarray(model.flatten()).copy()
    up, down = flat.copy(), flat.copy()
    up[coord] += step
    down[coord] -= step
    lu, _ = forward_loss(MlpModel.from_flat(paramvec(up), shape), x, y, global_ref, prox_mu)
    ld, _ = forward_loss(MlpModel.from_flat(paramvec(down), shape), x, y, global_ref, prox_mu)
    return (lu - ld) / (2.0 * step)


@pytest.mark.parametrize("prox_mu", [0.0, 0.05])
def test_backward_matches_central_differences(prox_mu):
    model = small_model()
    x, y = small_batch()
    rng = np.random.default_rng(42)
    ref = (
        paramvec(rng.standard_normal(model.shape.param_count) * 0.1)
        if prox_mu > 0
        else None
    )
    grad = np.asarray(backward(model, x, y, ref, prox_mu))
    coords = rng.choice(model.shape.param_count, size=40, replace=False)
    for coord in coords:
        fd = finite_difference(model, x, y, int(coord), 1e-5, ref, prox_mu)
        denom = max(abs(grad[coord]), abs(fd), 1e-6)
        assert abs(grad[coord] - fd) / denom < 1e-4


def test_prox_gradient_is_exactly_linear_in_mu():
    model = small_model()
    x, y = small_batch()
    ref = paramvec(np.asarray(model.flatten()) + 0.5)
    g0 = np.asarray(backward(model, x, y))
    g1 = np.asarray(backward(model, x, y, ref, 0.2))
    diff = np.asarray(model.flatten()) - np.asarray(ref)
    assert np.allclose(g1 - g0, 0.2 * diff, rtol=1e-12, atol=1e-12)


def test_gradient_norm_small_after_convergence():
    # A separable two-point problem driven to convergence has ~zero gradient.
    x = np.array([[-2.0], [2.0]])
    y = np.array([0, 1])
    shape = ModelShape(feature_dim=1, hidden=4, classes=2)
    model = init_model(shape, np.random.default_rng(3))
    flat = np.asarray(model.flatten()).copy()
    for _ in range(4000):
        g = np.asarray(backward(MlpModel.from_flat(paramvec(flat), shape), x, y))
        flat -= 0.5 * g
    final = np.linalg.norm(
        np.asarray(backward(MlpModel.from_flat(paramvec(flat), shape), x, y))
    )
    assert final < 1e-3


# --- local training -----------------------------------------------------


def test_local_train_zero_lr_returns_zero_delta():
    ds = generate_synthetic(classes=3, feature_dim=6, samples=30, seed=2)
    shard = make_shard(ds, np.arange(12))
    start = small_model().flatten()
    update = local_train(
        start, shard, ds, train_cfg(learning_rate=0.0), np.random.default_rng(0)
    )
    assert np.all(np.asarray(update.delta) == 0.0)
    assert update.sample_count == 12
    assert update.client_id == 0


def test_local_train_is_deterministic_and_resets_momentum():
    ds = generate_synthetic(classes=3, feature_dim=6, samples=30, seed=2)
    shard = make_shard(ds, np.arange(15))
    start = small_model().flatten()
    cfg = train_cfg(momentum=0.9)
    a = local_train(start, shard, ds, cfg, np.random.default_rng(7))
    b = local_train(start, shard, ds, cfg, np.random.default_rng(7))
    c = local_train(start, shard, ds, cfg, np.random.default_rng(8))
    assert np.array_equal(a.delta, b.delta)
    assert not np.array_equal(a.delta, c.delta)


def test_local_train_moves_parameters():
    ds = generate_synthetic(classes=3, feature_dim=6, samples=30, seed=2)
    shard = make_shard(ds, np.arange(15))
    start = small_model().flatten()
    update = local_train(start, shard, ds, train_cfg(), np.random.default_rng(0))
    assert np.linalg.norm(np.asarray(update.delta)) > 0.0
    assert np.array_equal(start, small_model().flatten())  # input untouched


def test_local_train_divergence_raises_with_client_id():
    ds = generate_synthetic(classes=3, feature_dim=6, samples=30, seed=2)
    shard = make_shard(ds, np.arange(12), client_id=5)
    start = small_model().flatten()
    cfg = train_cfg(learning_rate=1e200, local_epochs=8)
    with pytest.raises(DivergenceError) as err:
        local_train(start, shard, ds, cfg, np.random.default_rng(0))
    assert err.value.client_id == 5


# --- evaluation ---------------------------------------------------------


def test_evaluate_zero_model_on_balanced_data():
    # All-zero parameters make every logit zero; argmax ties break to class
    # 0, so accuracy equals class 0's share of the test set.
    ds = generate_synthetic(classes=10, feature_dim=4, samples=500, seed=9)
    shape = ModelShape(feature_dim=4, hidden=8, classes=10)
    accuracy, loss = evaluate(zeros(shape.param_count), ds)
    assert accuracy == pytest.approx(0.1, rel=1e-12)
    assert loss == pytest.approx(math.log(10.0), rel=1e-12)


def test_evaluate_perfect_classifier():
    features = np.array([[-1.0], [1.0], [-2.0], [3.0]])
    labels = np.array([0, 1, 0, 1])
    ds = Dataset(features=features, labels=labels, classes=2)
    # Hand-built separator: hidden = relu(x), logits = (-5h, +5h).
    flat = paramvec([1.0, 0.0, -5.0, 5.0, 0.0, 0.0])
    accuracy, _ = evaluate(flat, ds)
    assert accuracy == 1.0


def test_evaluate_is_permutation_invariant():
    ds = generate_synthetic(classes=3, feature_dim=5, samples=60, seed=4)
    shape = ModelShape(feature_dim=5, hidden=6, classes=3)
    params = init_model(shape, np.random.default_rng(1)).flatten()
    perm = np.random.default_rng(2).permutation(ds.sample_count)
    shuffled = Dataset(
        features=ds.features[perm], labels=ds.labels[perm], classes=ds.classes
    )
    assert evaluate(params, ds) == evaluate(params, shuffled)


def test_train_config_validation():
    with pytest.raises(ValueError):
        train_cfg(batch_size=0)
    with pytest.raises(ValueError):
        train_cfg(local_epochs=0)
    with pytest.raises(ValueError):
        train_cfg(learning_rate=-0.1)
    with pytest.raises(ValueError):
        train_cfg(momentum=1.0)
    with pytest.raises(ValueError):
        train_cfg(prox_mu=-1.0)
