"""Command-line entry point: ``qunet {train,protocol,gradcheck,params,simulate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import load_dataset, make_partitions, synth_dataset
from .harness import aggregate_stats, run_protocol, train, write_results
from .models import ModelConfig, build_model, format_reconciliation, reconcile_params

log = logging.getLogger("qunet")

# training settings that may appear in a config file next to ModelConfig fields
RUN_KEYS = {"epochs", "batch_size", "lr", "seed", "partitions", "train_fraction", "synthetic", "data_dir", "jobs"}
MODEL_KEYS = {f.name for f in fields(ModelConfig)}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with ModelConfig and run settings")
    p.add_argument("--variant", choices=["unet", "qunet-8-1", "qunet-4-2"])
    p.add_argument("--scale", choices=["tiny", "small", "medium"])
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--upsample-kernel", dest="upsample_kernel", type=int, choices=[2, 3])
    p.add_argument("--bottleneck-convs", dest="bottleneck_convs", type=int)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data-dir", dest="data_dir", type=Path,
                     help="directory holding images/ and masks/ with matching stems")
    src.add_argument("--synthetic", type=int, metavar="N", help="use N generated samples")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help="partition / model seed")
    p.add_argument("--out", type=Path, default=Path("results"))


def _settings(args) -> dict:
    """Config file values overridden by any flag given on the command line."""
    settings = {"variant": "unet", "scale": "tiny", "input_size": 64, "epochs": 10,
                "batch_size": 64, "lr": 1e-3, "seed": 0, "partitions": 10, "train_fraction": 0.8, "jobs": 1}
    if args.config:
        loaded = json.loads(args.config.read_text())
        unknown = set(loaded) - RUN_KEYS - MODEL_KEYS
        if unknown:
            raise SystemExit(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(loaded)
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "out", "command", "func"):
            settings[key] = value
    return settings


def _model_config(s: dict) -> ModelConfig:
    return ModelConfig(**{k: v for k, v in s.items() if k in MODEL_KEYS})


def _dataset(s: dict, size: int):
    if s.get("data_dir"):
        root = Path(s["data_dir"])
        return load_dataset(root / "images", root / "masks", size=size)
    return synth_dataset(int(s.get("synthetic") or 200), size=size, seed=s.get("seed", 0))


def cmd_train(args) -> int:
    s = _settings(args)
    config = _model_config(s)
    dataset = _dataset(s, config.input_size)
    part = make_partitions([d.id for d in dataset], s["seed"] + 1, s["train_fraction"])[s["seed"]]
    model = build_model(config, seed=s["seed"])
    result = train(model, part, dataset, s["epochs"], s["batch_size"], s["lr"])
    meta = {"config": config.to_dict(), "epochs": s["epochs"], "batch_size": s["batch_size"], "lr": s["lr"],
            "iou": "per-image mean over the test split, threshold 0.5"}
    write_results(args.out, [result], aggregate_stats([result.test_iou]), meta)
    model.save(args.out / "model")
    print(f"{result.model} {result.scale} seed={result.seed} test_iou={result.test_iou:.4f}")
    return 0


def cmd_protocol(args) -> int:
    s = _settings(args)
    config = _model_config(s)
    dataset = _dataset(s, config.input_size)
    results, stats = run_protocol(
        config, dataset, s["partitions"], s["train_fraction"], s["epochs"], s["batch_size"], s["lr"],
        out_dir=args.out, n_jobs=s["jobs"],
    )
    for r in results:
        print(f"seed={r.seed} test_iou={r.test_iou:.4f}")
    print(f"median={stats.median:.4f} mean={stats.mean:.4f} iqr={stats.iqr:.4f} outliers={stats.outliers}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(seed=args.seed)
    for r in results:
        print(r)
    return 0 if all(r.passed for r in results) else 1


def cmd_params(args) -> int:
    print(format_reconciliation(reconcile_params(), "default build (3x3 upsampling, one bottleneck conv)"))
    print()
    print(format_reconciliation(
        reconcile_params(upsample_kernel=2, bottleneck_convs=2),
        "literal build (2x2 upsampling, two bottleneck convs); residuals itemized per layer",
    ))
    return 0


def cmd_simulate(args) -> int:
    from .qsim import run_circuit
    from .qufex import build_template

    tpl = build_template(args.qubits, args.layer, args.closing_hadamard)
    theta = np.asarray(args.theta if args.theta else [0.0] * tpl.n_trainable, dtype=float)
    values = np.asarray(args.inputs if args.inputs else [0.0] * tpl.n_encoding, dtype=float)
    angles = values if args.raw_angles else np.pi * values
    out = run_circuit(tpl, theta, angles)
    print(f"template {tpl.name}: {len(tpl.gates)} gates, {tpl.n_trainable} trainable, {tpl.n_encoding} encoding")
    for q, v in enumerate(out):
        print(f"<Z_{q}> = {v:+.12f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qunet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model on one partition")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("protocol", help="train over repeated random partitions")
    _add_common(p)
    p.add_argument("--partitions", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("gradcheck", help="run every finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts against the reference table")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("simulate", help="run a QuFeX circuit template and print <Z> per qubit")
    p.add_argument("--qubits", type=int, default=4, choices=[4, 8])
    p.add_argument("--layer", type=int, default=1, choices=[1, 2])
    p.add_argument("--theta", type=float, nargs=4)
    p.add_argument("--inputs", type=float, nargs="+", help="activations v (encoded as pi*v)")
    p.add_argument("--raw-angles", action="store_true", help="treat --inputs as angles, not activations")
    p.add_argument("--closing-hadamard", action="store_true", help="encode layer 2 as H RZ H")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
