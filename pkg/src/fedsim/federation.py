"""The server-side round loop: selection, local training, weighted aggregation.

One round selects m of K clients uniformly, runs local SGD on each, and
applies the sample-weighted average of their deltas with a server learning
rate. Adversarial slots are replaced per the attack schedule; the defense's
per-update clip runs before weighting and its aggregate noise after averaging.
All randomness derives from (root_seed, role, round, client), so results are
independent of execution order; client updates may run in a thread pool.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adversary import (
    AttackerConfig,
    AttackSchedule,
    compute_boost_factor,
    craft_malicious_delta,
    schedule_adversaries,
    split_among_attackers,
)
from .data import ClientDataset, FederatedDataset
from .defense import DefenseConfig
from .errors import ConfigError
from .metrics import RoundReport, evaluate_backdoor, evaluate_main, norm_percentiles
from .nn import ModelArch, TrainHyper, l2_norm, sgd_train
from .seeding import derive_seed, make_rng


@dataclass(frozen=True)
class FedConfig:
    total_clients: int
    clients_per_round: int
    server_lr: float
    client_hyper: TrainHyper

    def __post_init__(self):
        if not 1 <= self.clients_per_round <= self.total_clients:
            raise ConfigError("need 1 <= clients_per_round <= total_clients")
        if self.server_lr <= 0:
            raise ConfigError("server_lr must be > 0")


@dataclass
class ServerState:
    round_index: int
    params: np.ndarray
    arch: ModelArch


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    delta: np.ndarray
    num_samples: int
    is_malicious: bool = False  # metrics only; aggregation never reads it

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")


def select_clients(rng: np.random.Generator, total: int, count: int) -> list[int]:
    """Uniform sample without replacement, sorted ascending."""
    if count > total:
        raise ConfigError(f"cannot select {count} of {total} clients")
    picks = rng.choice(total, size=count, replace=False)
    return sorted(int(i) for i in picks)


def client_update(
    w_t: np.ndarray,
    arch: ModelArch,
    client: ClientDataset,
    hyper: TrainHyper,
    seed: int,
) -> ClientUpdate:
    """Honest local training: delta = sgd_train(w_t, local data) - w_t."""
    trained = sgd_train(w_t, arch, client.examples, hyper, np.random.default_rng(seed))
    return ClientUpdate(client.client_id, trained - w_t, client.num_samples)


def aggregate(
    state: ServerState,
    updates: list[ClientUpdate],
    cfg: FedConfig,
    defense: DefenseConfig,
    rng: np.random.Generator,
) -> ServerState:
    """w_{t+1} = w_t + eta * (noised(weighted mean of clipped deltas)).

    Updates are reduced in sorted-client-id order so the result does not
    depend on list order or on how the updates were computed.
    """
    if not updates:
        raise ConfigError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    for u in ordered:
        if u.delta.shape != state.params.shape:
            raise AssertionError(
                f"update from {u.client_id!r} has wrong length {u.delta.shape}"
            )
    deltas = np.stack([defense.apply_update(u.delta) for u in ordered])
    weights = np.array([u.num_samples for u in ordered], dtype=np.float64)
    mean = (weights[:, None] * deltas).sum(axis=0) / weights.sum()
    mean = defense.apply_aggregate(mean, rng)
    return ServerState(
        round_index=state.round_index + 1,
        params=state.params + cfg.server_lr * mean,
        arch=state.arch,
    )


def _median_benign_size(benign: list[ClientDataset], fed: FederatedDataset) -> int:
    sizes = [c.num_samples for c in benign] or [c.num_samples for c in fed.clients]
    return int(statistics.median_low(sizes))


def run_round(
    state: ServerState,
    fed: FederatedDataset,
    cfg: FedConfig,
    schedule: AttackSchedule | None,
    attacker: AttackerConfig,
    defense: DefenseConfig,
    root_seed: int,
    *,
    prior_backdoor_sum: float = 0.0,
    workers: int = 1,
    evaluate: bool = True,
) -> tuple[ServerState, RoundReport]:
    """One full federated round, including metrics.

    schedule=None means no adversary ever. prior_backdoor_sum is the sum of
    backdoor accuracies over rounds 0..t-1, used for the cumulative mean.
    """
    t = state.round_index
    if cfg.total_clients != len(fed.clients):
        raise ConfigError("FedConfig.total_clients disagrees with the dataset")
    sel_rng = make_rng(root_seed, "select", t)
    picked = select_clients(sel_rng, cfg.total_clients, cfg.clients_per_round)
    selected = [fed.clients[i] for i in picked]
    selected_ids = [c.client_id for c in selected]
    adv_slots = (
        set(schedule_adversaries(t, selected_ids, schedule)) if schedule is not None else set()
    )
    benign = [c for pos, c in enumerate(selected) if pos not in adv_slots]

    def train_one(client: ClientDataset) -> ClientUpdate:
        seed = derive_seed(root_seed, "client", t, client.client_id)
        return client_update(state.params, state.arch, client, cfg.client_hyper, seed)

    if workers > 1 and len(benign) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(train_one, benign))
    else:
        updates = [train_one(c) for c in benign]

    attacker_norm = None
    if adv_slots:
        reported_n = attacker.reported_num_samples or _median_benign_size(benign, fed)
        sum_n = attacker.estimated_sum_n or (
            sum(u.num_samples for u in updates) + len(adv_slots) * reported_n
        )
        beta = compute_boost_factor(sum_n, cfg.server_lr, reported_n)
        total = craft_malicious_delta(
            state.params, state.arch, attacker, beta, derive_seed(root_seed, "attack", t)
        )
        attacker_norm = l2_norm(total)
        for slot, part in zip(sorted(adv_slots), split_among_attackers(total, len(adv_slots))):
            updates.append(
                ClientUpdate(selected_ids[slot], part, reported_n, is_malicious=True)
            )

    benign_norms = [l2_norm(u.delta) for u in updates if not u.is_malicious]
    p50, p90 = norm_percentiles(benign_norms)
    new_state = aggregate(state, updates, cfg, defense, make_rng(root_seed, "noise", t))

    if evaluate:
        main_acc = evaluate_main(new_state.params, state.arch, fed.holdout_main)
        bd_acc = evaluate_backdoor(new_state.params, state.arch, attacker.task.mal_eval)
        cummean = (prior_backdoor_sum + bd_acc) / (t + 1)
    else:
        main_acc = bd_acc = cummean = float("nan")
    report = RoundReport(
        round_index=t,
        main_accuracy=main_acc,
        backdoor_accuracy=bd_acc,
        backdoor_cummean=cummean,
        adversary_count=len(adv_slots),
        benign_norm_p50=p50,
        benign_norm_p90=p90,
        attacker_norm=attacker_norm,
    )
    return new_state, report
