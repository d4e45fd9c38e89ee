"""Config-driven experiment runner.

A TOML file describes one run: data source, model, federation schedule,
attack, defense, outputs. Everything has a default; the fully merged config
is echoed to config.resolved next to metrics.csv and curves.svg so a run
directory is self-describing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:          # 3.10
    import tomli as tomllib

import numpy as np

from .adversary import AttackerConfig, AttackSchedule, FixedFrequency, RandomSampling
from .data import (
    BackdoorSpec,
    FederatedDataset,
    build_backdoor_task,
    generate_synthetic,
    load_leaf_json,
)
from .defense import DefenseConfig
from .errors import ConfigError
from .federation import FedConfig, ServerState, run_round
from .metrics import RoundReport
from .nn import ModelArch, TrainHyper, init_params
from .plot import render_curves
from .seeding import derive_seed, make_rng

CSV_COLUMNS = (
    "round",
    "main_acc",
    "backdoor_acc",
    "backdoor_cummean",
    "adversary_count",
    "benign_norm_p50",
    "benign_norm_p90",
    "attacker_norm",
)

_DEFAULTS: dict = {
    "seed": 42,
    "rounds": 100,
    "eval_every": 1,
    "workers": 1,
    "output_dir": "out",
    "data": {
        "source": "synthetic",       # "synthetic" | "leaf_json"
        "path": "",                  # leaf_json only
        "holdout_fraction": 0.1,     # leaf_json: per-client tail withheld for eval
        "num_clients": 100,
        "samples_per_client": 50,
        "class_count": 10,
        "input_side": 8,
        "holdout_per_class": 20,
    },
    "model": {
        "variant": "mlp_small",      # "mlp_small" | "cnn_emnist"
    },
    "federation": {
        "clients_per_round": 10,
        "server_lr": 1.0,
        "epochs": 5,
        "batch_size": 20,
        "learning_rate": 0.1,
    },
    "attack": {
        "enabled": False,
        "variant": "unconstrained",  # "unconstrained" | "norm_bounded"
        "schedule": "fixed_frequency",   # "none" | "fixed_frequency" | "random_sampling"
        "period": 1,                 # fixed_frequency; 0 -> derive from epsilon
        "epsilon": 0.0,              # compromised fraction
        "target_clients": 10,        # seeded pick; ignored when ids given
        "target_client_ids": [],
        "source_label": 7,
        "target_label": 1,
        "eval_fraction": 0.2,
        "attacker_clean_size": 400,
        "mal_repeat": 1,
        "epochs": 5,
        "batch_size": 20,
        "learning_rate": 0.1,
        "norm_bound": 0.0,           # norm_bounded: post-boost l2 budget
        "pgd_rounds": 5,
        "reported_num_samples": 0,   # 0 -> median benign size in the round
    },
    "defense": {
        "kind": "none",              # "none" | "norm_clip" | "clip_and_noise"
        "max_norm": 0.0,
        "noise_sigma": 0.0,
    },
}


def _merge(defaults: dict, override: dict, where: str) -> dict:
    out = {}
    for key, base in defaults.items():
        if key not in override:
            out[key] = base
        elif isinstance(base, dict):
            sub = override[key]
            if not isinstance(sub, dict):
                raise ConfigError(f"{where}{key} must be a table")
            out[key] = _merge(base, sub, f"{where}{key}.")
        else:
            out[key] = override[key]
    for key in override:
        if key not in defaults:
            raise ConfigError(f"unknown config key {where}{key}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved run description. Build via from_dict or load_config."""

    raw: dict

    def __post_init__(self):
        _validate(self.raw)

    @classmethod
    def from_dict(cls, override: dict) -> "ExperimentConfig":
        merged = _merge(_DEFAULTS, override, "")
        _derive(merged)
        return cls(merged)

    def with_overrides(
        self, output_dir: str | None = None, seed: int | None = None
    ) -> "ExperimentConfig":
        raw = {k: dict(v) if isinstance(v, dict) else v for k, v in self.raw.items()}
        if output_dir is not None:
            raw["output_dir"] = output_dir
        if seed is not None:
            raw["seed"] = seed
        return ExperimentConfig(raw)

    def __getitem__(self, key):
        return self.raw[key]

    def resolved_toml(self) -> str:
        return _format_toml(self.raw)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def _derive(cfg: dict) -> None:
    """Fill values that depend on other settings, so the echo records them."""
    att = cfg["attack"]
    if att["schedule"] == "fixed_frequency" and att["period"] == 0:
        if not 0 < att["epsilon"] < 1:
            raise ConfigError("period 0 needs epsilon in (0, 1) to derive from")
        m = cfg["federation"]["clients_per_round"]
        att["period"] = FixedFrequency.for_epsilon(att["epsilon"], m).period


def _validate(cfg: dict) -> None:
    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative int")
    need(cfg["rounds"] >= 1, "rounds must be >= 1")
    need(cfg["eval_every"] >= 1, "eval_every must be >= 1")
    need(cfg["workers"] >= 1, "workers must be >= 1")

    data = cfg["data"]
    need(data["source"] in ("synthetic", "leaf_json"),
         f"unknown data.source {data['source']!r}")
    if data["source"] == "leaf_json":
        need(bool(data["path"]), "data.source leaf_json needs data.path")
        need(0 < data["holdout_fraction"] < 1, "data.holdout_fraction must be in (0, 1)")
    else:
        need(data["num_clients"] >= 1, "data.num_clients must be >= 1")
        need(data["samples_per_client"] >= 1, "data.samples_per_client must be >= 1")
        need(data["class_count"] >= 2, "data.class_count must be >= 2")
        need(data["input_side"] >= 2, "data.input_side must be >= 2")

    need(cfg["model"]["variant"] in ("mlp_small", "cnn_emnist"),
         f"unknown model.variant {cfg['model']['variant']!r}")

    fed = cfg["federation"]
    need(fed["clients_per_round"] >= 1, "federation.clients_per_round must be >= 1")
    need(fed["server_lr"] > 0, "federation.server_lr must be > 0")
    TrainHyper(fed["epochs"], fed["batch_size"], fed["learning_rate"])

    att = cfg["attack"]
    need(att["schedule"] in ("none", "fixed_frequency", "random_sampling"),
         f"unknown attack.schedule {att['schedule']!r}")
    if att["enabled"] and att["schedule"] == "fixed_frequency":
        need(att["period"] >= 1, "attack.period must be >= 1 (0 only with epsilon set)")
    if att["enabled"] and att["schedule"] == "random_sampling":
        need(0 < att["epsilon"] < 1, "attack.schedule random_sampling needs epsilon in (0, 1)")
    need(att["variant"] in ("unconstrained", "norm_bounded"),
         f"unknown attack.variant {att['variant']!r}")
    if att["enabled"] and att["variant"] == "norm_bounded":
        need(att["norm_bound"] > 0, "norm_bounded attack needs attack.norm_bound > 0")
        need(att["pgd_rounds"] >= 1, "attack.pgd_rounds must be >= 1")
    if not att["target_client_ids"]:
        need(att["target_clients"] >= 1, "attack.target_clients must be >= 1")
    need(0 < att["eval_fraction"] < 1, "attack.eval_fraction must be in (0, 1)")
    need(att["attacker_clean_size"] >= 0, "attack.attacker_clean_size must be >= 0")
    need(att["mal_repeat"] >= 1, "attack.mal_repeat must be >= 1")
    need(att["source_label"] != att["target_label"],
         "attack.source_label and target_label must differ")
    TrainHyper(att["epochs"], att["batch_size"], att["learning_rate"])

    dfs = cfg["defense"]
    need(dfs["kind"] in ("none", "norm_clip", "clip_and_noise"),
         f"unknown defense.kind {dfs['kind']!r}")
    if dfs["kind"] in ("norm_clip", "clip_and_noise"):
        need(dfs["max_norm"] > 0, f"defense.kind {dfs['kind']} needs max_norm > 0")
    if dfs["kind"] == "clip_and_noise":
        need(dfs["noise_sigma"] >= 0, "defense.noise_sigma must be >= 0")


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def _format_toml(cfg: dict) -> str:
    lines = []
    for key, val in cfg.items():
        if not isinstance(val, dict):
            lines.append(f"{key} = {_toml_scalar(val)}")
    for key, val in cfg.items():
        if isinstance(val, dict):
            lines.append("")
            lines.append(f"[{key}]")
            for k, v in val.items():
                lines.append(f"{k} = {_toml_scalar(v)}")
    return "\n".join(lines) + "\n"


def _load_dataset(cfg: ExperimentConfig) -> FederatedDataset:
    data = cfg["data"]
    if data["source"] == "leaf_json":
        return load_leaf_json(data["path"], holdout_fraction=data["holdout_fraction"])
    return generate_synthetic(
        seed=derive_seed(cfg["seed"], "data"),
        num_clients=data["num_clients"],
        samples_per_client=data["samples_per_client"],
        class_count=data["class_count"],
        input_side=data["input_side"],
        holdout_per_class=data["holdout_per_class"],
    )


def _pick_targets(cfg: ExperimentConfig, fed: FederatedDataset) -> list[str]:
    att = cfg["attack"]
    if att["target_client_ids"]:
        return sorted(att["target_client_ids"])
    label = att["source_label"]
    eligible = [
        c.client_id for c in fed.clients
        if int(np.sum(c.examples.labels == label)) >= 2
    ]
    count = att["target_clients"]
    if len(eligible) < count:
        raise ConfigError(
            f"only {len(eligible)} clients hold >= 2 examples of label {label}, "
            f"need {count} targets"
        )
    rng = make_rng(cfg["seed"], "targets")
    picks = rng.choice(len(eligible), size=count, replace=False)
    return sorted(eligible[i] for i in picks)


@dataclass(frozen=True)
class _World:
    """Everything run_experiment needs, resolved from config + data."""

    fed: FederatedDataset
    arch: ModelArch
    fedcfg: FedConfig
    schedule: AttackSchedule | None
    attacker: AttackerConfig
    defense: DefenseConfig


def build_world(cfg: ExperimentConfig) -> _World:
    fed = _load_dataset(cfg)
    input_shape = fed.input_shape
    if cfg["model"]["variant"] == "cnn_emnist":
        arch = ModelArch.cnn_emnist(input_shape, fed.class_count)
    else:
        arch = ModelArch.mlp_small(input_shape, fed.class_count)

    f = cfg["federation"]
    fedcfg = FedConfig(
        total_clients=len(fed.clients),
        clients_per_round=f["clients_per_round"],
        server_lr=f["server_lr"],
        client_hyper=TrainHyper(f["epochs"], f["batch_size"], f["learning_rate"]),
    )

    att = cfg["attack"]
    spec = BackdoorSpec(
        target_client_ids=tuple(_pick_targets(cfg, fed)),
        source_label=att["source_label"],
        target_label=att["target_label"],
    )
    # the backdoor eval set exists even for unattacked runs, so baseline and
    # attacked curves measure the same thing
    task = build_backdoor_task(
        fed,
        spec,
        eval_fraction=att["eval_fraction"],
        attacker_clean_size=att["attacker_clean_size"],
        rng=make_rng(cfg["seed"], "task"),
    )
    attacker = AttackerConfig(
        task=task,
        variant=att["variant"],
        mal_hyper=TrainHyper(att["epochs"], att["batch_size"], att["learning_rate"]),
        mal_repeat=att["mal_repeat"],
        norm_bound=att["norm_bound"] if att["variant"] == "norm_bounded" else None,
        pgd_rounds=att["pgd_rounds"],
        reported_num_samples=att["reported_num_samples"] or None,
    )

    schedule: AttackSchedule | None = None
    if att["enabled"] and att["schedule"] != "none":
        if att["schedule"] == "fixed_frequency":
            schedule = FixedFrequency(att["period"])
        else:
            schedule = RandomSampling.create(
                att["epsilon"], list(fed.client_ids), derive_seed(cfg["seed"], "adv")
            )

    dfs = cfg["defense"]
    if dfs["kind"] == "none":
        defense = DefenseConfig.none()
    elif dfs["kind"] == "norm_clip":
        defense = DefenseConfig.norm_clip(dfs["max_norm"])
    else:
        defense = DefenseConfig.clip_and_noise(dfs["max_norm"], dfs["noise_sigma"])

    return _World(fed, arch, fedcfg, schedule, attacker, defense)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    progress=None,
) -> list[RoundReport]:
    """Run the configured rounds; write metrics.csv, config.resolved, curves.svg.

    out_dir overrides cfg's output_dir; progress, if given, is called with
    each RoundReport as it is produced. On rounds skipped by eval_every the
    accuracies repeat the last evaluated values so every CSV row is populated
    and the cumulative mean stays consistent with the column as written.
    """
    world = build_world(cfg)
    rounds = cfg["rounds"]
    eval_every = cfg["eval_every"]
    workers = cfg["workers"]

    params = init_params(world.arch, make_rng(cfg["seed"], "init"))
    state = ServerState(0, params, world.arch)

    reports: list[RoundReport] = []
    bd_sum = 0.0
    last_main = math.nan
    last_bd = math.nan
    for t in range(rounds):
        do_eval = (t % eval_every == 0) or (t == rounds - 1)
        state, rep = run_round(
            state,
            world.fed,
            world.fedcfg,
            world.schedule,
            world.attacker,
            world.defense,
            root_seed=cfg["seed"],
            prior_backdoor_sum=bd_sum,
            workers=workers,
            evaluate=do_eval,
        )
        if do_eval:
            last_main = rep.main_accuracy
            last_bd = rep.backdoor_accuracy
        else:
            rep.main_accuracy = last_main
            rep.backdoor_accuracy = last_bd
            rep.backdoor_cummean = (bd_sum + last_bd) / (t + 1)
        bd_sum += last_bd
        reports.append(rep)
        if progress is not None:
            progress(rep)

    target = Path(out_dir if out_dir is not None else cfg["output_dir"])
    target.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(target / "metrics.csv", reports)
    (target / "config.resolved").write_text(cfg.resolved_toml(), encoding="utf-8")
    (target / "curves.svg").write_text(render_curves(reports), encoding="utf-8")
    return reports


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(path: str | Path, reports: list[RoundReport]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(",".join([
            _csv_cell(r.round_index),
            _csv_cell(r.main_accuracy),
            _csv_cell(r.backdoor_accuracy),
            _csv_cell(r.backdoor_cummean),
            _csv_cell(r.adversary_count),
            _csv_cell(r.benign_norm_p50),
            _csv_cell(r.benign_norm_p90),
            _csv_cell(r.attacker_norm),
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
