"""Adversary presence models and malicious update crafting.

Two presence models: a fixed-frequency attacker that replaces the first
selected slot every `period` rounds, and a random-sampling model where a fixed
seeded fraction of the population is compromised and attacks whenever
selected. Crafted updates follow the model-replacement scheme: train a
backdoored model from the current global model, then boost the difference so
aggregation installs it wholesale. The norm-bounded variant keeps the boosted
update inside a given l2 budget via projected gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BackdoorTask
from .defense import clip_update
from .errors import ConfigError
from .nn import Batch, ModelArch, TrainHyper, project_l2_ball, sgd_train
from .seeding import make_rng


@dataclass(frozen=True)
class FixedFrequency:
    """One adversary in every round t with t % period == 0, none otherwise."""

    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError("period must be >= 1")

    @classmethod
    def for_epsilon(cls, epsilon: float, clients_per_round: int) -> "FixedFrequency":
        """Period matching a compromised fraction: round(1 / (epsilon * m))."""
        if not 0 < epsilon < 1:
            raise ConfigError("epsilon must be in (0, 1)")
        return cls(max(1, round(1.0 / (epsilon * clients_per_round))))


@dataclass(frozen=True)
class RandomSampling:
    """A fixed compromised subset; a selected client attacks iff compromised."""

    epsilon: float
    compromised_ids: frozenset[str]

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must be in (0, 1)")

    @classmethod
    def create(cls, epsilon: float, client_ids: list[str], seed: int) -> "RandomSampling":
        """Compromise a seeded uniform subset of floor(epsilon * K) clients."""
        if not 0 < epsilon < 1:
            raise ConfigError("epsilon must be in (0, 1)")
        count = int(epsilon * len(client_ids))
        rng = make_rng(seed, "compromised")
        picks = rng.choice(len(client_ids), size=count, replace=False)
        return cls(epsilon, frozenset(client_ids[i] for i in picks))


AttackSchedule = FixedFrequency | RandomSampling


@dataclass(frozen=True)
class AttackerConfig:
    """What the attacker trains on and how the malicious delta is crafted."""

    task: BackdoorTask
    variant: str = "unconstrained"        # "unconstrained" | "norm_bounded"
    mal_hyper: TrainHyper = TrainHyper(5, 20, 0.1)
    mal_repeat: int = 1                   # multiset weight of the mislabeled set
    norm_bound: float | None = None       # post-boost l2 budget, norm_bounded only
    pgd_rounds: int = 5
    reported_num_samples: int | None = None   # None -> median benign size in the round
    estimated_sum_n: int | None = None        # override round-total knowledge

    def __post_init__(self):
        if self.variant not in ("unconstrained", "norm_bounded"):
            raise ConfigError(f"unknown attack variant {self.variant!r}")
        if self.mal_repeat < 1:
            raise ConfigError("mal_repeat must be >= 1")
        if self.variant == "norm_bounded":
            if self.norm_bound is None or self.norm_bound <= 0:
                raise ConfigError("norm_bounded attack needs norm_bound > 0")
            if self.pgd_rounds < 1:
                raise ConfigError("pgd_rounds must be >= 1")


def schedule_adversaries(
    t: int, selected_ids: list[str], schedule: AttackSchedule
) -> list[int]:
    """Slot indices within the selection that are adversarial this round."""
    if not selected_ids:
        raise ConfigError("selection is empty")
    if isinstance(schedule, FixedFrequency):
        return [0] if t % schedule.period == 0 else []
    return [i for i, cid in enumerate(selected_ids) if cid in schedule.compromised_ids]


def compute_boost_factor(sum_n: int, eta: float, n_attacker: int) -> float:
    """Boost so the weighted aggregate installs the attacker's model: sum_n / (eta * n)."""
    if sum_n <= 0 or eta <= 0 or n_attacker <= 0:
        raise ConfigError("boost factor inputs must be positive")
    return sum_n / (eta * n_attacker)


def _attack_data(task: BackdoorTask, mal_repeat: int) -> Batch:
    # the mislabeled set is tiny next to the clean set; repeating it keeps the
    # backdoor from being drowned out during the attacker's local training
    return Batch.concat([task.attacker_clean] + [task.mal_train] * mal_repeat)


def craft_unconstrained(
    w_t: np.ndarray,
    arch: ModelArch,
    cfg: AttackerConfig,
    beta: float,
    seed: int,
) -> np.ndarray:
    """Boosted model-replacement delta: beta * (w_star - w_t).

    w_star is trained from w_t on the attacker's clean set plus the mislabeled
    backdoor set, with no constraint on the result.
    """
    if beta < 1:
        raise ConfigError("beta must be >= 1")
    rng = make_rng(seed, "craft")
    w_star = sgd_train(w_t, arch, _attack_data(cfg.task, cfg.mal_repeat), cfg.mal_hyper, rng)
    return beta * (w_star - w_t)


def craft_norm_bounded(
    w_t: np.ndarray,
    arch: ModelArch,
    cfg: AttackerConfig,
    max_norm: float,
    beta: float,
    seed: int,
) -> np.ndarray:
    """Norm-bounded attack: PGD on the backdoor objective inside an l2 ball.

    Each PGD round trains unconstrained for mal_hyper.epochs, then projects
    back onto the ball of radius max_norm / beta around w_t. The returned
    boosted delta always has l2 norm <= max_norm, so it passes a norm-clipping
    defense at that threshold unchanged.
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be > 0")
    if beta < 1:
        raise ConfigError("beta must be >= 1")
    radius = max_norm / beta
    data = _attack_data(cfg.task, cfg.mal_repeat)
    rng = make_rng(seed, "craft")
    w = w_t
    for _ in range(cfg.pgd_rounds):
        w = sgd_train(w, arch, data, cfg.mal_hyper, rng)
        w = project_l2_ball(w, w_t, radius)
    # the boost multiply can land an ulp above the budget; trim it
    return clip_update(beta * (w - w_t), max_norm)


def craft_malicious_delta(
    w_t: np.ndarray,
    arch: ModelArch,
    cfg: AttackerConfig,
    beta: float,
    seed: int,
) -> np.ndarray:
    if cfg.variant == "norm_bounded":
        return craft_norm_bounded(w_t, arch, cfg, cfg.norm_bound, beta, seed)
    return craft_unconstrained(w_t, arch, cfg, beta, seed)


def split_among_attackers(total_delta: np.ndarray, count: int) -> list[np.ndarray]:
    """Divide one crafted update evenly among coordinating attackers."""
    if count < 1:
        raise ConfigError("attacker count must be >= 1")
    if count == 1:
        return [total_delta]
    share = total_delta / count
    return [share.copy() for _ in range(count)]
