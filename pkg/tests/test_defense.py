"""Norm clipping and aggregate Gaussian noise."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.defense import DefenseConfig, add_gaussian_noise, clip_update
from fedsim.errors import ConfigError
from fedsim.nn import l2_norm

vectors = st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60).map(np.array)


def test_update_inside_threshold_is_untouched():
    delta = np.array([1.0, 1.0, 1.0, 1.0])  # norm 2
    out = clip_update(delta, 5.0)
    assert out is delta


def test_boosted_update_is_scaled_to_threshold():
    rng = np.random.default_rng(0)
    delta = rng.normal(size=200)
    delta *= 300.0 / l2_norm(delta)
    out = clip_update(delta, 10.0)
    assert abs(l2_norm(out) - 10.0) < 1e-9
    assert np.allclose(out, delta / 30.0, rtol=1e-12)


def test_zero_vector_stays_zero():
    z = np.zeros(7)
    assert np.array_equal(clip_update(z, 3.0), z)


@given(vectors, st.floats(1e-3, 1e3))
@settings(deadline=None)
def test_clip_norm_bound_and_idempotence(delta, max_norm):
    once = clip_update(delta, max_norm)
    assert l2_norm(once) <= max_norm + 1e-9
    assert np.array_equal(clip_update(once, max_norm), once)


@given(vectors, st.floats(1e-3, 1e3))
@settings(deadline=None)
def test_clip_preserves_direction(delta, max_norm):
    out = clip_update(delta, max_norm)
    # out must be a nonnegative multiple of delta
    assert np.allclose(out * l2_norm(delta), delta * l2_norm(out), rtol=1e-9, atol=1e-9)
    assert np.dot(out, delta) >= 0.0


def test_clip_is_scale_free_above_the_threshold():
    rng = np.random.default_rng(1)
    delta = rng.normal(size=50)
    delta *= 20.0 / l2_norm(delta)
    for c in (1.0, 3.0, 750.0):
        assert np.allclose(clip_update(c * delta, 5.0), clip_update(delta, 5.0),
                           rtol=1e-9, atol=1e-12)


def test_noise_sigma_zero_is_identity():
    delta = np.arange(6, dtype=np.float64)
    out = add_gaussian_noise(delta, 0.0, np.random.default_rng(0))
    assert out is delta


def test_noise_is_seed_deterministic():
    delta = np.zeros(30)
    a = add_gaussian_noise(delta, 0.5, np.random.default_rng(11))
    b = add_gaussian_noise(delta, 0.5, np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_noise_energy_matches_chi_squared_mean():
    """E ||noise||^2 = d sigma^2, within 5% over 1000 draws."""
    d, sigma = 400, 0.025
    zero = np.zeros(d)
    total = 0.0
    for k in range(1000):
        noised = add_gaussian_noise(zero, sigma, np.random.default_rng(k))
        total += float(noised @ noised)
    mean = total / 1000
    assert abs(mean - d * sigma * sigma) / (d * sigma * sigma) < 0.05


def test_defense_config_validation():
    with pytest.raises(ConfigError):
        DefenseConfig("median_of_means")
    with pytest.raises(ConfigError):
        DefenseConfig.norm_clip(0.0)
    with pytest.raises(ConfigError):
        DefenseConfig("clip_and_noise", 1.0, -0.1)
    with pytest.raises(ConfigError):
        clip_update(np.ones(3), 0.0)


def test_defense_config_dispatch():
    rng = np.random.default_rng(0)
    big = np.full(16, 10.0)
    assert DefenseConfig.none().apply_update(big) is big
    clipped = DefenseConfig.norm_clip(2.0).apply_update(big)
    assert l2_norm(clipped) <= 2.0 + 1e-9
    agg = DefenseConfig.clip_and_noise(2.0, 0.1).apply_aggregate(np.zeros(16), rng)
    assert np.any(agg != 0.0)
    assert DefenseConfig.norm_clip(2.0).apply_aggregate(big, rng) is big
