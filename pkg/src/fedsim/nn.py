"""Fixed-architecture neural network core over flat parameter vectors.

All parameters of a model live in one flat float64 vector; layer tensors are
views unpacked on the fly. Two architectures exist: a two-conv CNN for digit
images (conv 32 -> conv 64 -> maxpool -> dense -> dense) and a small two-layer
MLP for fast tests. Every function is pure and deterministic given its inputs
and seed, so repeated calls are bit-identical; parameter vectors are treated
as immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError


@dataclass(frozen=True)
class Batch:
    """A set of labeled image examples: inputs (n, h, w) in [0,1], int labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 3:
            raise ConfigError(f"batch inputs must be (n, h, w), got shape {self.inputs.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ConfigError("inputs and labels disagree on batch dimension")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])

    @staticmethod
    def concat(parts: list["Batch"]) -> "Batch":
        return Batch(
            np.concatenate([p.inputs for p in parts], axis=0),
            np.concatenate([p.labels for p in parts], axis=0),
        )


@dataclass(frozen=True)
class TrainHyper:
    """Local SGD hyperparameters."""

    epochs: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor; parameter layout is fully determined by it.

    The public variants are pinned by the factory methods: cnn_emnist uses
    conv channels (32, 64) and a 128-wide dense layer, mlp_small a 64-wide
    hidden layer. The width fields exist so tests can build reduced variants
    of the same code paths.
    """

    variant: str                    # "cnn_emnist" | "mlp_small"
    input_shape: tuple[int, int]    # (height, width)
    class_count: int
    conv_channels: tuple[int, int] = (32, 64)
    dense_width: int = 128

    def __post_init__(self):
        if self.variant not in ("cnn_emnist", "mlp_small"):
            raise ConfigError(f"unknown architecture variant {self.variant!r}")
        h, w = self.input_shape
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        if self.variant == "cnn_emnist" and (h < 6 or w < 6):
            raise ConfigError("cnn_emnist needs input of at least 6x6")
        if h < 1 or w < 1:
            raise ConfigError("input_shape must be positive")

    @classmethod
    def cnn_emnist(cls, input_shape: tuple[int, int] = (28, 28), class_count: int = 10) -> "ModelArch":
        return cls("cnn_emnist", tuple(input_shape), class_count, (32, 64), 128)

    @classmethod
    def mlp_small(cls, input_shape: tuple[int, int] = (28, 28), class_count: int = 10) -> "ModelArch":
        return cls("mlp_small", tuple(input_shape), class_count, (32, 64), 64)

    def layer_shapes(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Parameter layout as (name, shape) in packing order."""
        h, w = self.input_shape
        if self.variant == "cnn_emnist":
            c1, c2 = self.conv_channels
            h2, w2 = h - 4, w - 4
            ph, pw = h2 // 2, w2 // 2
            flat = ph * pw * c2
            return (
                ("conv1_w", (1, 3, 3, c1)),
                ("conv1_b", (c1,)),
                ("conv2_w", (c1, 3, 3, c2)),
                ("conv2_b", (c2,)),
                ("fc1_w", (flat, self.dense_width)),
                ("fc1_b", (self.dense_width,)),
                ("fc2_w", (self.dense_width, self.class_count)),
                ("fc2_b", (self.class_count,)),
            )
        return (
            ("fc1_w", (h * w, self.dense_width)),
            ("fc1_b", (self.dense_width,)),
            ("fc2_w", (self.dense_width, self.class_count)),
            ("fc2_b", (self.class_count,)),
        )

    @property
    def param_count(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layer_shapes())


def _unpack(params: np.ndarray, arch: ModelArch) -> dict[str, np.ndarray]:
    if params.shape != (arch.param_count,):
        raise ConfigError(
            f"param vector has shape {params.shape}, arch expects ({arch.param_count},)"
        )
    views = {}
    offset = 0
    for name, shape in arch.layer_shapes():
        size = math.prod(shape)
        views[name] = params[offset:offset + size].reshape(shape)
        offset += size
    return views


def init_params(arch: ModelArch, rng: np.random.Generator) -> np.ndarray:
    """Fresh parameter vector: Glorot-uniform weights, zero biases."""
    params = np.zeros(arch.param_count)
    views = _unpack(params, arch)
    for name, shape in arch.layer_shapes():
        if name.endswith("_b"):
            continue
        if name.startswith("conv"):
            ic, kh, kw, oc = shape
            fan_in, fan_out = kh * kw * ic, kh * kw * oc
        else:
            fan_in, fan_out = shape
        s = math.sqrt(6.0 / (fan_in + fan_out))
        views[name][...] = rng.uniform(-s, s, size=shape)
    return params


def _check_batch(arch: ModelArch, batch: Batch):
    if len(batch) == 0:
        raise ConfigError("batch is empty")
    if batch.inputs.shape[1:] != arch.input_shape:
        raise ConfigError(
            f"batch images are {batch.inputs.shape[1:]}, arch expects {arch.input_shape}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= arch.class_count:
        raise ConfigError("labels out of range for architecture class count")


def _conv_patches(x: np.ndarray, k: int = 3) -> np.ndarray:
    # (b, h, w, c) -> (b, h-k+1, w-k+1, c, k, k) window view, flattened for matmul
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    b, oh, ow = win.shape[:3]
    return win.reshape(b, oh, ow, -1)


def _forward_cnn(v: dict[str, np.ndarray], x: np.ndarray, need_cache: bool):
    b = x.shape[0]
    c1, c2 = v["conv1_b"].shape[0], v["conv2_b"].shape[0]
    a0 = x[..., None]
    p1 = _conv_patches(a0)
    z1 = p1 @ v["conv1_w"].reshape(9, c1) + v["conv1_b"]
    a1 = np.maximum(z1, 0.0)
    p2 = _conv_patches(a1)
    z2 = p2 @ v["conv2_w"].reshape(9 * c1, c2) + v["conv2_b"]
    a2 = np.maximum(z2, 0.0)
    h2, w2 = a2.shape[1], a2.shape[2]
    ph, pw = h2 // 2, w2 // 2
    win = (
        a2[:, : 2 * ph, : 2 * pw, :]
        .reshape(b, ph, 2, pw, 2, c2)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, ph, pw, c2, 4)
    )
    # argmax routes each pooling window's gradient to its first maximum
    idx = win.argmax(axis=-1)
    pooled = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    f = pooled.reshape(b, -1)
    zh = f @ v["fc1_w"] + v["fc1_b"]
    ah = np.maximum(zh, 0.0)
    logits = ah @ v["fc2_w"] + v["fc2_b"]
    cache = (p1, z1, a1, p2, z2, idx, f, ah) if need_cache else None
    return logits, cache


def _backward_cnn(v, g, dlogits, cache):
    p1, z1, a1, p2, z2, idx, f, ah = cache
    b = dlogits.shape[0]
    c1, c2 = v["conv1_b"].shape[0], v["conv2_b"].shape[0]
    h2, w2 = z2.shape[1], z2.shape[2]
    ph, pw = h2 // 2, w2 // 2

    g["fc2_w"][...] = ah.T @ dlogits
    g["fc2_b"][...] = dlogits.sum(axis=0)
    dah = dlogits @ v["fc2_w"].T
    dzh = dah * (ah > 0)
    g["fc1_w"][...] = f.T @ dzh
    g["fc1_b"][...] = dzh.sum(axis=0)
    df = dzh @ v["fc1_w"].T

    dpooled = df.reshape(b, ph, pw, c2)
    dwin = np.zeros((b, ph, pw, c2, 4))
    np.put_along_axis(dwin, idx[..., None], dpooled[..., None], axis=-1)
    da2 = np.zeros_like(z2)
    da2[:, : 2 * ph, : 2 * pw, :] = (
        dwin.reshape(b, ph, pw, c2, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, 2 * ph, 2 * pw, c2)
    )
    dz2 = da2 * (z2 > 0)

    g["conv2_w"][...] = np.tensordot(p2, dz2, axes=([0, 1, 2], [0, 1, 2])).reshape(c1, 3, 3, c2)
    g["conv2_b"][...] = dz2.sum(axis=(0, 1, 2))
    dp2 = dz2 @ v["conv2_w"].reshape(9 * c1, c2).T
    oh2, ow2 = dz2.shape[1], dz2.shape[2]
    dp2 = dp2.reshape(b, oh2, ow2, c1, 3, 3)
    da1 = np.zeros_like(z1)
    for i in range(3):
        for j in range(3):
            da1[:, i : i + oh2, j : j + ow2, :] += dp2[:, :, :, :, i, j]
    dz1 = da1 * (z1 > 0)

    g["conv1_w"][...] = np.tensordot(p1, dz1, axes=([0, 1, 2], [0, 1, 2])).reshape(1, 3, 3, c1)
    g["conv1_b"][...] = dz1.sum(axis=(0, 1, 2))


def _forward_mlp(v: dict[str, np.ndarray], x: np.ndarray, need_cache: bool):
    f = x.reshape(x.shape[0], -1)
    zh = f @ v["fc1_w"] + v["fc1_b"]
    ah = np.maximum(zh, 0.0)
    logits = ah @ v["fc2_w"] + v["fc2_b"]
    cache = (f, ah) if need_cache else None
    return logits, cache


def _backward_mlp(v, g, dlogits, cache):
    f, ah = cache
    g["fc2_w"][...] = ah.T @ dlogits
    g["fc2_b"][...] = dlogits.sum(axis=0)
    dah = dlogits @ v["fc2_w"].T
    dzh = dah * (ah > 0)
    g["fc1_w"][...] = f.T @ dzh
    g["fc1_b"][...] = dzh.sum(axis=0)


def forward(params: np.ndarray, arch: ModelArch, batch: Batch) -> np.ndarray:
    """Logits matrix (batch x class count) for a parameter vector."""
    _check_batch(arch, batch)
    v = _unpack(params, arch)
    if arch.variant == "cnn_emnist":
        logits, _ = _forward_cnn(v, batch.inputs, need_cache=False)
    else:
        logits, _ = _forward_mlp(v, batch.inputs, need_cache=False)
    if not np.isfinite(logits).all():
        raise ArithmeticError("non-finite logits")
    return logits


def loss_and_grad(params: np.ndarray, arch: ModelArch, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    _check_batch(arch, batch)
    v = _unpack(params, arch)
    fwd, bwd = (
        (_forward_cnn, _backward_cnn)
        if arch.variant == "cnn_emnist"
        else (_forward_mlp, _backward_mlp)
    )
    logits, cache = fwd(v, batch.inputs, need_cache=True)

    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    sez = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(sez[:, 0]) - shifted[rows, batch.labels]))
    dlogits = ez / sez
    dlogits[rows, batch.labels] -= 1.0
    dlogits /= n

    grad = np.zeros_like(params)
    g = _unpack(grad, arch)
    bwd(v, g, dlogits, cache)
    if not (math.isfinite(loss) and np.isfinite(grad).all()):
        raise ArithmeticError("non-finite loss or gradient")
    return loss, grad


def gradient_check(
    arch: ModelArch,
    num_coords: int = 200,
    seed: int = 0,
    step: float = 1e-5,
    batch_size: int = 8,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    Samples num_coords parameter coordinates; the numeric side recomputes the
    loss from forward() logits, so a backward-pass bug cannot hide in it.
    Relative error uses a 1e-5 floor in the denominator for near-zero pairs.
    """
    from .seeding import make_rng

    rng = make_rng(seed, "gradcheck", arch.variant)
    x = rng.uniform(0.0, 1.0, (batch_size,) + arch.input_shape)
    y = rng.integers(0, arch.class_count, batch_size)
    data = Batch(x, y)
    w = init_params(arch, rng)
    _, grad = loss_and_grad(w, arch, data)

    def loss_at(vec: np.ndarray) -> float:
        logits = forward(vec, arch, data)
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        return float(np.mean(lse - shifted[np.arange(len(data)), data.labels]))

    coords = rng.choice(w.size, size=min(num_coords, w.size), replace=False)
    worst = 0.0
    for i in coords:
        wp = w.copy()
        wp[i] += step
        wm = w.copy()
        wm[i] -= step
        numeric = (loss_at(wp) - loss_at(wm)) / (2.0 * step)
        denom = max(1e-5, abs(numeric), abs(grad[i]))
        worst = max(worst, abs(numeric - grad[i]) / denom)
    return worst


def sgd_train(
    params: np.ndarray,
    arch: ModelArch,
    data: Batch,
    hyper: TrainHyper,
    rng: np.random.Generator,
) -> np.ndarray:
    """Plain mini-batch SGD; one fresh shuffle per epoch drawn from rng."""
    if len(data) == 0:
        raise ValueError("training data is empty")
    n = len(data)
    steps = math.ceil(n / hyper.batch_size)
    w = params
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for s in range(steps):
            take = order[s * hyper.batch_size : (s + 1) * hyper.batch_size]
            _, grad = loss_and_grad(w, arch, data.subset(take))
            w = w - hyper.learning_rate * grad
    return w


def l2_norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def project_l2_ball(point: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of point onto the ball of given radius around center.

    Points inside the ball come back unchanged (same object). The projected
    result is nudged until its recomputed distance from center is truly within
    the radius, so projecting twice is bit-identical to projecting once.
    """
    if point.shape != center.shape:
        raise ConfigError("point and center have different lengths")
    diff = point - center
    nrm = l2_norm(diff)
    if nrm <= radius:
        return point
    shrink = radius / nrm
    step = 2.0 ** -52
    for _ in range(80):
        out = center + shrink * diff
        if l2_norm(out - center) <= radius:
            return out
        shrink *= 1.0 - step
        step *= 2.0
    raise ArithmeticError("l2 projection failed to settle inside the ball")
