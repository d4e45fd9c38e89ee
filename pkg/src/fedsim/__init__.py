"""Federated averaging simulator with model poisoning attacks and defenses."""

from .adversary import (
    AttackerConfig,
    AttackSchedule,
    FixedFrequency,
    RandomSampling,
    compute_boost_factor,
    craft_malicious_delta,
    schedule_adversaries,
)
from .data import (
    BackdoorSpec,
    BackdoorTask,
    ClientDataset,
    FederatedDataset,
    build_backdoor_task,
    generate_synthetic,
    load_leaf_json,
    save_leaf_json,
)
from .defense import DefenseConfig, add_gaussian_noise, clip_update
from .errors import ConfigError, IngestionError
from .experiment import ExperimentConfig, load_config, run_experiment
from .federation import ClientUpdate, FedConfig, ServerState, aggregate, run_round
from .metrics import (
    RoundReport,
    cumulative_mean,
    evaluate_backdoor,
    evaluate_main,
)
from .nn import (
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
from .seeding import derive_seed, make_rng

__version__ = "0.1.0"
