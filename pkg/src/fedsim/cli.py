"""Command line front end: run experiments, emit synthetic data, gradcheck."""

from __future__ import annotations

import argparse
import sys

from .data import generate_synthetic, save_leaf_json
from .errors import ConfigError, IngestionError
from .experiment import load_config, run_experiment
from .nn import ModelArch, gradient_check

GRADCHECK_TOLERANCE = 1e-4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fedsim",
        description="Federated averaging simulator with model poisoning attacks.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a TOML config")
    run.add_argument("--config", required=True, help="path to the TOML config file")
    run.add_argument("--out", default=None, help="output directory (overrides config)")
    run.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")

    synth = sub.add_parser("synth", help="write a synthetic federated dataset as JSON")
    synth.add_argument("--out", required=True, help="output JSON path")
    synth.add_argument("--clients", type=int, required=True)
    synth.add_argument("--samples", type=int, required=True, help="examples per client")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--classes", type=int, default=10)
    synth.add_argument("--side", type=int, default=8, help="square image side length")

    sub.add_parser("gradcheck", help="finite-difference check of both architectures")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(args.out, args.seed)
    rounds = cfg["rounds"]
    stride = max(1, rounds // 10)

    def progress(rep):
        if rep.round_index % stride == 0 or rep.round_index == rounds - 1:
            print(
                f"round {rep.round_index:4d}  main {rep.main_accuracy:.3f}  "
                f"backdoor {rep.backdoor_accuracy:.3f}  "
                f"cummean {rep.backdoor_cummean:.3f}  adv {rep.adversary_count}"
            )

    run_experiment(cfg, progress=progress)
    out = cfg["output_dir"]
    print(f"wrote {out}/metrics.csv {out}/config.resolved {out}/curves.svg")
    return 0


def _cmd_synth(args) -> int:
    fed = generate_synthetic(
        seed=args.seed,
        num_clients=args.clients,
        samples_per_client=args.samples,
        class_count=args.classes,
        input_side=args.side,
    )
    save_leaf_json(fed, args.out)
    print(f"wrote {args.out}: {len(fed.clients)} clients, "
          f"{sum(c.num_samples for c in fed.clients)} examples")
    return 0


def _cmd_gradcheck(_args) -> int:
    # small inputs keep the runtime down; the layer code is size-agnostic
    archs = [
        ModelArch.mlp_small((8, 8), 10),
        ModelArch.cnn_emnist((10, 10), 10),
    ]
    ok = True
    for arch in archs:
        err = gradient_check(arch)
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{arch.variant}: max relative error {err:.3e}  [{status}]")
        ok = ok and err < GRADCHECK_TOLERANCE
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_gradcheck(args)
    except (ConfigError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
