"""Forward/backward pass, SGD, and the vector helpers everything else leans on."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.errors import ConfigError
from fedsim.nn import (
    Batch,
    ModelArch,
    TrainHyper,
    forward,
    gradient_check,
    init_params,
    l2_norm,
    loss_and_grad,
    project_l2_ball,
    sgd_train,
)

ARCH = ModelArch.mlp_small((6, 6), 4)


def rand_batch(rng, n, side=6, classes=4):
    return Batch(rng.uniform(0.0, 1.0, (n, side, side)),
                 rng.integers(0, classes, size=n))


def loss_from_logits(params, arch, batch):
    # recomputed from raw logits, independent of loss_and_grad's own backward
    z = forward(params, arch, batch)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(batch)), batch.labels]
    return float(np.mean(lse - picked))


def test_zero_params_give_zero_logits(rng):
    batch = rand_batch(rng, 7)
    logits = forward(np.zeros(ARCH.param_count), ARCH, batch)
    assert logits.shape == (7, 4)
    assert np.all(logits == 0.0)


def test_logit_rows_track_batch_order(rng):
    batch = rand_batch(rng, 9)
    params = init_params(ARCH, rng)
    perm = rng.permutation(9)
    shuffled = Batch(batch.inputs[perm], batch.labels[perm])
    assert np.array_equal(forward(params, ARCH, shuffled),
                          forward(params, ARCH, batch)[perm])


def test_fit_two_examples_then_predict_them(rng):
    batch = rand_batch(rng, 2)
    batch = Batch(batch.inputs, np.array([0, 3]))
    params = init_params(ARCH, rng)
    train_rng = np.random.default_rng(1)
    for _ in range(40):
        params = sgd_train(params, ARCH, batch, TrainHyper(10, 2, 0.1), train_rng)
        loss, _ = loss_and_grad(params, ARCH, batch)
        if loss < 0.01:
            break
    assert loss < 0.01
    assert np.array_equal(np.argmax(forward(params, ARCH, batch), axis=1), batch.labels)


def test_uniform_softmax_loss_is_log_class_count(rng):
    for classes in (4, 10):
        arch = ModelArch.mlp_small((6, 6), classes)
        batch = rand_batch(rng, 11, classes=classes)
        loss, grad = loss_and_grad(np.zeros(arch.param_count), arch, batch)
        assert abs(loss - math.log(classes)) < 1e-12
        assert grad.shape == (arch.param_count,)


def test_grad_matches_central_differences_everywhere(rng):
    """Every coordinate of a small model against the finite-difference oracle."""
    batch = rand_batch(rng, 5)
    params = init_params(ARCH, rng)
    _, grad = loss_and_grad(params, ARCH, batch)
    step = 1e-5
    worst = 0.0
    for i in range(params.size):
        probe = params.copy()
        probe[i] = params[i] + step
        up = loss_from_logits(probe, ARCH, batch)
        probe[i] = params[i] - step
        down = loss_from_logits(probe, ARCH, batch)
        numeric = (up - down) / (2 * step)
        rel = abs(grad[i] - numeric) / max(1e-5, abs(grad[i]), abs(numeric))
        worst = max(worst, rel)
    assert worst < 1e-4


def test_loss_and_grad_unchanged_by_duplicating_batch(rng):
    batch = rand_batch(rng, 6)
    doubled = Batch.concat([batch, batch])
    params = init_params(ARCH, rng)
    loss_a, grad_a = loss_and_grad(params, ARCH, batch)
    loss_b, grad_b = loss_and_grad(params, ARCH, doubled)
    assert abs(loss_a - loss_b) < 1e-12
    assert np.allclose(grad_a, grad_b, rtol=0, atol=1e-12)


def test_sgd_zero_epochs_returns_params_unchanged(rng):
    batch = rand_batch(rng, 8)
    params = init_params(ARCH, rng)
    out = sgd_train(params, ARCH, batch, TrainHyper(0, 4, 0.1), np.random.default_rng(2))
    assert np.array_equal(out, params)


def test_sgd_fits_linearly_separable_data():
    # two well-separated constant images, one per class
    arch = ModelArch.mlp_small((5, 5), 2)
    rng = np.random.default_rng(3)
    inputs = np.concatenate([
        np.full((10, 5, 5), 0.2) + rng.normal(0, 0.01, (10, 5, 5)),
        np.full((10, 5, 5), 0.8) + rng.normal(0, 0.01, (10, 5, 5)),
    ]).clip(0, 1)
    batch = Batch(inputs, np.array([0] * 10 + [1] * 10))
    params = sgd_train(init_params(arch, rng), arch, batch,
                       TrainHyper(50, 5, 0.1), np.random.default_rng(4))
    preds = np.argmax(forward(params, arch, batch), axis=1)
    assert np.array_equal(preds, batch.labels)


def test_sgd_is_bit_reproducible(rng):
    batch = rand_batch(rng, 15)
    params = init_params(ARCH, rng)
    hyper = TrainHyper(3, 4, 0.05)
    a = sgd_train(params, ARCH, batch, hyper, np.random.default_rng(9))
    b = sgd_train(params, ARCH, batch, hyper, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_l2_norm_basics():
    assert l2_norm(np.zeros(12)) == 0.0
    v = np.zeros(8)
    v[0], v[1] = 3.0, 4.0
    assert l2_norm(v) == 5.0


@given(st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=40),
       st.floats(0.0, 1e6))
def test_l2_norm_is_positively_homogeneous(values, c):
    v = np.array(values)
    assert math.isclose(l2_norm(c * v), c * l2_norm(v), rel_tol=1e-9, abs_tol=1e-9)


def test_project_onto_sphere_from_outside():
    point = np.array([3.0, 4.0])
    out = project_l2_ball(point, np.zeros(2), 1.0)
    assert np.allclose(out, [0.6, 0.8], atol=1e-12)


def test_project_inside_ball_is_identity(rng):
    center = rng.normal(size=20)
    point = center + 0.01 * rng.normal(size=20)
    assert np.array_equal(project_l2_ball(point, center, 5.0), point)


def test_projection_radius_bounds_preboost_update(rng):
    # budget 10 shared by a boost of 30 leaves a third of it before boosting
    center = rng.normal(size=50)
    point = center + rng.normal(size=50) * 10.0
    out = project_l2_ball(point, center, 10.0 / 30.0)
    assert l2_norm(out - center) <= 0.3334


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30), st.floats(1e-3, 1e3))
@settings(deadline=None)
def test_projection_is_idempotent_and_within_radius(values, radius):
    point = np.array(values)
    center = np.zeros_like(point)
    once = project_l2_ball(point, center, radius)
    twice = project_l2_ball(once, center, radius)
    assert np.array_equal(once, twice)
    assert l2_norm(once - center) <= radius + 1e-9


def test_gradient_check_helper_stays_tight():
    assert gradient_check(ARCH, num_coords=60, seed=3) < 1e-4


def test_small_step_never_increases_batch_loss():
    """Descent property over 100 random initializations."""
    arch = ModelArch.mlp_small((4, 4), 3)
    rng = np.random.default_rng(7)
    batch = Batch(rng.uniform(0, 1, (6, 4, 4)), rng.integers(0, 3, 6))
    for _ in range(100):
        params = init_params(arch, rng)
        loss0, grad = loss_and_grad(params, arch, batch)
        loss1, _ = loss_and_grad(params - 1e-3 * grad, arch, batch)
        assert loss1 <= loss0 + 1e-12


def test_param_count_matches_layer_arithmetic():
    mlp = ModelArch.mlp_small((6, 6), 4)
    assert mlp.param_count == 36 * 64 + 64 + 64 * 4 + 4

    cnn = ModelArch.cnn_emnist((10, 10), 10)
    conv1 = 32 * 9 + 32
    conv2 = 64 * 32 * 9 + 64
    flat = 3 * 3 * 64  # 10 -> 8 -> 6 by 3x3 convs, then 2x2 pool
    dense = flat * 128 + 128
    out = 128 * 10 + 10
    assert cnn.param_count == conv1 + conv2 + dense + out
    assert init_params(cnn, np.random.default_rng(0)).size == cnn.param_count


def test_cnn_forward_shape(rng):
    cnn = ModelArch.cnn_emnist((10, 10), 10)
    batch = rand_batch(rng, 3, side=10, classes=10)
    logits = forward(init_params(cnn, rng), cnn, batch)
    assert logits.shape == (3, 10)
    assert np.all(np.isfinite(logits))


def test_shape_validation_errors(rng):
    with pytest.raises(ConfigError):
        Batch(np.zeros((4, 6, 6)), np.zeros(3, dtype=np.int64))
    with pytest.raises(ConfigError):
        Batch(np.zeros((4, 36)), np.zeros(4, dtype=np.int64))
    with pytest.raises(ConfigError):
        TrainHyper(-1, 4, 0.1)
    with pytest.raises(ConfigError):
        TrainHyper(1, 0, 0.1)
    with pytest.raises(ConfigError):
        TrainHyper(1, 4, 0.0)
    with pytest.raises(ConfigError):
        ModelArch("resnet", (6, 6), 4)
    with pytest.raises(ConfigError):
        ModelArch.cnn_emnist((4, 4), 10)
    with pytest.raises(ConfigError):
        forward(np.zeros(3), ARCH, rand_batch(rng, 2))
    with pytest.raises(ConfigError):
        bad = Batch(np.zeros((2, 6, 6)), np.array([0, 9]))
        forward(np.zeros(ARCH.param_count), ARCH, bad)
    with pytest.raises(ValueError):
        sgd_train(np.zeros(ARCH.param_count), ARCH,
                  Batch(np.zeros((0, 6, 6)), np.zeros(0, dtype=np.int64)),
                  TrainHyper(1, 2, 0.1), np.random.default_rng(0))
