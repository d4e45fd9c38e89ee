"""Server-side mitigations: per-update norm clipping and aggregate Gaussian noise.

Clipping rescales any client delta whose l2 norm exceeds the threshold down to
the threshold; noise adds small per-coordinate Gaussian perturbation to the
aggregated delta ("weak differential privacy" - empirical mitigation, no
formal privacy accounting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import l2_norm


@dataclass(frozen=True)
class DefenseConfig:
    """none | norm_clip(max_norm) | clip_and_noise(max_norm, noise_sigma).

    noise_sigma is a per-coordinate standard deviation.
    """

    kind: str
    max_norm: float | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "norm_clip", "clip_and_noise"):
            raise ConfigError(f"unknown defense kind {self.kind!r}")
        if self.kind != "none" and (self.max_norm is None or self.max_norm <= 0):
            raise ConfigError("clipping defense needs max_norm > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @classmethod
    def none(cls) -> "DefenseConfig":
        return cls("none")

    @classmethod
    def norm_clip(cls, max_norm: float) -> "DefenseConfig":
        return cls("norm_clip", max_norm)

    @classmethod
    def clip_and_noise(cls, max_norm: float, noise_sigma: float) -> "DefenseConfig":
        return cls("clip_and_noise", max_norm, noise_sigma)

    def apply_update(self, delta: np.ndarray) -> np.ndarray:
        """Per-update transform, applied before weighting."""
        if self.kind == "none":
            return delta
        return clip_update(delta, self.max_norm)

    def apply_aggregate(self, aggregated: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Aggregate transform, applied after the weighted average."""
        if self.kind == "clip_and_noise":
            return add_gaussian_noise(aggregated, self.noise_sigma, rng)
        return aggregated


def clip_update(delta: np.ndarray, max_norm: float) -> np.ndarray:
    """delta / max(1, ||delta||_2 / max_norm).

    Inputs already within the threshold come back unchanged (same object).
    Outputs are nudged until their recomputed norm is truly within the
    threshold, so clipping is idempotent bit-for-bit.
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be > 0")
    nrm = l2_norm(delta)
    if nrm <= max_norm:
        return delta
    scale = max_norm / nrm
    step = 2.0 ** -52
    for _ in range(80):
        out = scale * delta
        if l2_norm(out) <= max_norm:
            return out
        scale *= 1.0 - step
        step *= 2.0
    raise ArithmeticError("norm clipping failed to settle under the threshold")


def add_gaussian_noise(
    aggregated_delta: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Add iid zero-mean Gaussian noise with scale sigma to each coordinate."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return aggregated_delta
    return aggregated_delta + rng.normal(0.0, sigma, size=aggregated_delta.shape)
