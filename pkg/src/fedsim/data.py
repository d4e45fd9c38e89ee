"""Federated dataset ingestion, synthetic data generation, and backdoor task construction.

Datasets are writer-partitioned: one small example set per client plus one
global holdout. Real data comes in as LEAF-style JSON; the synthetic generator
produces a desk-scale non-iid stand-in where each client applies a private
style (intensity bias + 1-pixel shift) to shared class prototypes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError
from .nn import Batch


@dataclass(frozen=True)
class ClientDataset:
    client_id: str
    examples: Batch

    @property
    def num_samples(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class FederatedDataset:
    clients: tuple[ClientDataset, ...]
    holdout_main: Batch
    class_count: int
    input_shape: tuple[int, int]

    def __post_init__(self):
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise IngestionError("duplicate client ids in dataset")

    @property
    def client_ids(self) -> list[str]:
        return [c.client_id for c in self.clients]

    def client_by_id(self, client_id: str) -> ClientDataset:
        for c in self.clients:
            if c.client_id == client_id:
                return c
        raise KeyError(client_id)


@dataclass(frozen=True)
class BackdoorSpec:
    """Which clients' source-label examples get flipped to the target label."""

    target_client_ids: tuple[str, ...]
    source_label: int = 7
    target_label: int = 1

    def __post_init__(self):
        if self.source_label == self.target_label:
            raise ConfigError("source and target label must differ")
        if not self.target_client_ids:
            raise ConfigError("at least one target client is required")


@dataclass(frozen=True)
class BackdoorTask:
    """The attacker's data: mislabeled backdoor sets and a clean training set."""

    mal_train: Batch
    mal_eval: Batch
    attacker_clean: Batch
    target_label: int


def load_leaf_json(path: str | Path, holdout_fraction: float = 0.1) -> FederatedDataset:
    """Read a LEAF-schema JSON file into a FederatedDataset.

    Schema: {"users": [...], "num_samples": [...], "user_data":
    {user: {"x": [flat pixel rows], "y": [labels]}}}. Pixels may be [0,1]
    reals or [0,255] ints (auto-detected). Per client, the last
    floor(n * holdout_fraction) examples are withheld into the global holdout.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict) or "users" not in raw or "user_data" not in raw:
        raise IngestionError(f"{path} does not follow the LEAF schema")

    users = list(raw["users"])
    if len(set(users)) != len(users):
        dup = sorted({u for u in users if users.count(u) > 1})[0]
        raise IngestionError(f"duplicate user id {dup!r}")

    side = None
    clients = []
    holdout_parts = []
    max_label = 0
    for user in sorted(users):
        try:
            entry = raw["user_data"][user]
            x = np.asarray(entry["x"], dtype=np.float64)
            y = np.asarray(entry["y"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad user_data for user {user!r}: {exc}") from exc
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise IngestionError(f"user {user!r} has mismatched x/y shapes")
        if x.shape[0] == 0:
            raise IngestionError(f"user {user!r} has zero samples")
        if y.min() < 0:
            raise IngestionError(f"user {user!r} has a negative label")
        s = math.isqrt(x.shape[1])
        if s * s != x.shape[1]:
            raise IngestionError(f"user {user!r}: {x.shape[1]} pixels is not a square image")
        if side is None:
            side = s
        elif s != side:
            raise IngestionError(f"user {user!r} has image side {s}, expected {side}")
        if x.size and x.max() > 1.5:
            x = x / 255.0
        if x.size and (x.min() < 0 or x.max() > 1.0):
            raise IngestionError(f"user {user!r} has pixel values outside [0, 1] after scaling")
        max_label = max(max_label, int(y.max()))
        images = x.reshape(-1, s, s)
        n_hold = math.floor(x.shape[0] * holdout_fraction)
        n_train = x.shape[0] - n_hold
        clients.append(ClientDataset(user, Batch(images[:n_train], y[:n_train])))
        if n_hold:
            holdout_parts.append(Batch(images[n_train:], y[n_train:]))

    class_count = max_label + 1
    if class_count < 2:
        raise IngestionError("dataset needs at least two label classes")
    if holdout_parts:
        holdout = Batch.concat(holdout_parts)
    else:
        holdout = Batch(np.zeros((0, side, side)), np.zeros(0, dtype=np.int64))
    return FederatedDataset(tuple(clients), holdout, class_count, (side, side))


def save_leaf_json(fed: FederatedDataset, path: str | Path):
    """Write a FederatedDataset back out in the LEAF schema (training sets only)."""
    users = fed.client_ids
    payload = {
        "users": users,
        "num_samples": [c.num_samples for c in fed.clients],
        "user_data": {
            c.client_id: {
                "x": c.examples.inputs.reshape(c.num_samples, -1).tolist(),
                "y": c.examples.labels.tolist(),
            }
            for c in fed.clients
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def _box_blur(img: np.ndarray) -> np.ndarray:
    # 3x3 mean filter with edge replication
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += padded[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out / 9.0


def _stretch(img: np.ndarray, lo: float = 0.15, hi: float = 0.85) -> np.ndarray:
    span = img.max() - img.min()
    if span == 0:
        return np.full_like(img, (lo + hi) / 2)
    return lo + (hi - lo) * (img - img.min()) / span


def generate_synthetic(
    seed: int,
    num_clients: int,
    samples_per_client: int,
    class_count: int = 10,
    input_side: int = 8,
    holdout_per_class: int = 20,
) -> FederatedDataset:
    """Deterministic non-iid synthetic dataset.

    Each class has a global prototype (a smoothed random blob). Each client
    owns a private style: a pixel-intensity bias, a 1-pixel cyclic
    translation, and a per-client watermark pattern blended into every
    example at weight 0.3. The watermark is what makes one client's examples
    of a class separable from another's; bias and translation alone leave
    client identity too faint for a targeted mislabeling attack to persist
    between rounds. Labels are balanced per client. The holdout is generated
    without client styles, 20 examples per class by default.
    """
    if num_clients < 1 or samples_per_client < 1 or input_side < 1:
        raise ConfigError("counts must be positive")
    if class_count < 2:
        raise ConfigError("class_count must be >= 2")
    proto_w, stamp_w, noise_sd = 0.7, 0.3, 0.05
    rng = np.random.default_rng(seed)
    protos = np.stack(
        [
            _stretch(_box_blur(rng.uniform(0, 1, (input_side, input_side))), 0.0, 1.0)
            for _ in range(class_count)
        ]
    )

    width = len(str(num_clients - 1))
    clients = []
    for k in range(num_clients):
        stamp = rng.uniform(0.0, 1.0, (input_side, input_side))
        bias = rng.uniform(-0.1, 0.1)
        dx, dy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
        labels = np.arange(samples_per_client, dtype=np.int64) % class_count
        base = np.roll(protos[labels], shift=(dy, dx), axis=(1, 2))
        imgs = proto_w * base + stamp_w * stamp + bias
        inputs = np.clip(imgs + rng.normal(0.0, noise_sd, size=imgs.shape), 0.0, 1.0)
        clients.append(ClientDataset(f"client_{k:0{width}d}", Batch(inputs, labels)))

    hold_labels = np.repeat(np.arange(class_count, dtype=np.int64), holdout_per_class)
    hold_inputs = np.clip(
        protos[hold_labels]
        + rng.normal(0.0, noise_sd, size=(len(hold_labels), input_side, input_side)),
        0.0,
        1.0,
    )
    holdout = Batch(hold_inputs, hold_labels)
    return FederatedDataset(tuple(clients), holdout, class_count, (input_side, input_side))


def build_backdoor_task(
    fed: FederatedDataset,
    spec: BackdoorSpec,
    eval_fraction: float = 0.2,
    attacker_clean_size: int = 400,
    rng: np.random.Generator | None = None,
) -> BackdoorTask:
    """Collect the target clients' source-label examples, relabel them, and split.

    The split into attacker train/eval sets happens per target client so every
    target writer's style is represented in evaluation (at least one example
    each). The original correctly-labeled examples stay untouched in the
    clients' datasets. The attacker's clean set is a uniform seeded sample of
    examples across all clients with true labels kept, except the relabeled
    inputs themselves; the attacker does not train against its own poison.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not 0 < eval_fraction < 1:
        raise ConfigError("eval_fraction must be in (0, 1)")
    train_parts, eval_parts = [], []
    for cid in spec.target_client_ids:
        try:
            client = fed.client_by_id(cid)
        except KeyError:
            raise ConfigError(f"target client {cid!r} not in dataset") from None
        mask = client.examples.labels == spec.source_label
        n_src = int(mask.sum())
        if n_src < 2:
            raise ConfigError(
                f"target client {cid!r} has {n_src} examples with label "
                f"{spec.source_label}; need at least 2"
            )
        sources = client.examples.inputs[mask]
        order = rng.permutation(n_src)
        n_eval = max(1, math.floor(n_src * eval_fraction))
        flipped = np.full(n_src, spec.target_label, dtype=np.int64)
        eval_parts.append(Batch(sources[order[:n_eval]], flipped[:n_eval]))
        train_parts.append(Batch(sources[order[n_eval:]], flipped[n_eval:]))

    pool_parts = []
    for c in fed.clients:
        if c.client_id in spec.target_client_ids:
            keep = np.flatnonzero(c.examples.labels != spec.source_label)
            if keep.size:
                pool_parts.append(c.examples.subset(keep))
        else:
            pool_parts.append(c.examples)
    pool = Batch.concat(pool_parts)
    take = min(attacker_clean_size, len(pool))
    picks = np.sort(rng.choice(len(pool), size=take, replace=False))
    return BackdoorTask(
        mal_train=Batch.concat(train_parts),
        mal_eval=Batch.concat(eval_parts),
        attacker_clean=pool.subset(picks),
        target_label=spec.target_label,
    )
