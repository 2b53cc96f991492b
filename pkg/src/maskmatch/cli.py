"""Command-line surface: train, eval, ablate, and sweep subcommands.

Every trainer and model knob is a kebab-case flag; a JSON config file
(``--config``) can set any of them, with explicit flags taking
precedence. Each run directory receives a ``manifest.json`` (the fully
resolved configuration, seed, artifact paths, timestamp, and source
revision), a line-per-iteration ``metrics.jsonl``, and a final
``checkpoint.mmck``, so re-running from a manifest reproduces the run.

Exit codes: 0 success, 2 usage error, 3 runtime failure. The environment
variable ``MASKMATCH_OUT`` overrides the default output root.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .checkpoint import config_to_plain, load_checkpoint
from .data import DatasetSpec, load_dataset
from .errors import MaskMatchError
from .model import ModelConfig, init_params
from .trainer import TrainerConfig, evaluate, run_training

DATASET_DEFAULTS = {
    "source": "synthetic",
    "num_classes": 4,
    "labels_per_class": 4,
    "seed": None,  # falls back to the trainer seed
    "per_class": 500,
    "test_per_class": 100,
    "image_size": 32,
    "channels": 3,
    "path": None,
    "train_file": None,
    "test_file": None,
}

ABLATION_ROWS = (
    ("baseline", {"disable_mae": True, "disable_sdt": True}),
    ("w_mae", {"disable_sdt": True}),
    ("w_sdt", {"disable_mae": True}),
    ("w_mixup_aug", {"disable_mae": True, "sdt_mode": "mixup_only"}),
    ("maskmatch_low_init", {"threshold_mode": "freematch"}),
    ("maskmatch", {}),
)

# (flag, nested config path, type)
_FLAG_MAP = [
    ("dataset", ("dataset", "source"), str),
    ("classes", ("dataset", "num_classes"), int),
    ("labels-per-class", ("dataset", "labels_per_class"), int),
    ("per-class", ("dataset", "per_class"), int),
    ("test-per-class", ("dataset", "test_per_class"), int),
    ("image-size", ("dataset", "image_size"), int),
    ("channels", ("dataset", "channels"), int),
    ("data-path", ("dataset", "path"), str),
    ("train-file", ("dataset", "train_file"), str),
    ("test-file", ("dataset", "test_file"), str),
    ("data-seed", ("dataset", "seed"), int),
    ("iters", ("trainer", "total_iterations"), int),
    ("eval-every", ("trainer", "eval_every"), int),
    ("lr", ("trainer", "lr"), float),
    ("weight-decay", ("trainer", "weight_decay"), float),
    ("beta1", ("trainer", "beta1"), float),
    ("beta2", ("trainer", "beta2"), float),
    ("warmup-frac", ("trainer", "warmup_frac"), float),
    ("batch-labeled", ("trainer", "batch_labeled"), int),
    ("batch-unlabeled", ("trainer", "batch_unlabeled"), int),
    ("lambda-u", ("trainer", "lambda_u"), float),
    ("lambda-mae", ("trainer", "lambda_mae"), float),
    ("lambda-sdt", ("trainer", "lambda_sdt"), float),
    ("mask-ratio", ("trainer", "mask_ratio"), float),
    ("normalize-pixels", ("trainer", "normalize_pixels"), bool),
    ("threshold-mode", ("trainer", "threshold_mode"), str),
    ("threshold-momentum", ("trainer", "threshold_momentum"), float),
    ("fixed-threshold", ("trainer", "fixed_threshold"), float),
    ("update-before-mask", ("trainer", "update_before_mask"), bool),
    ("disable-mae", ("trainer", "disable_mae"), bool),
    ("disable-sdt", ("trainer", "disable_sdt"), bool),
    ("sdt-mode", ("trainer", "sdt_mode"), str),
    ("seed", ("trainer", "seed"), int),
    ("checkpoint-every", ("trainer", "checkpoint_every"), int),
    ("patch-size", ("model", "patch_size"), int),
    ("embed-dim", ("model", "embed_dim"), int),
    ("encoder-depth", ("model", "depth"), int),
    ("num-heads", ("model", "num_heads"), int),
    ("mlp-ratio", ("model", "mlp_ratio"), float),
    ("decoder-embed-dim", ("model", "decoder_embed_dim"), int),
    ("decoder-depth", ("model", "decoder_depth"), int),
    ("decoder-heads", ("model", "decoder_num_heads"), int),
    ("dtype", ("model", "dtype"), str),
]


def _config_parser():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON config or manifest to start from")
    parent.add_argument("--out", help="output directory "
                        "(default: $MASKMATCH_OUT or ./runs, plus a timestamp)")
    for flag, _, kind in _FLAG_MAP:
        if kind is bool:
            parent.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction,
                                default=None)
        else:
            parent.add_argument(f"--{flag}", type=kind, default=None)
    return parent


def build_parser():
    parser = argparse.ArgumentParser(
        prog="maskmatch",
        description="Semi-supervised training with full unlabeled-data "
                    "utilization: adaptive-threshold pseudo-labeling plus "
                    "masked-reconstruction and mixup-synthetic objectives.")
    sub = parser.add_subparsers(dest="command", required=True)
    cfg = _config_parser()

    sub.add_parser("train", parents=[cfg], help="run one training job")

    p_eval = sub.add_parser("eval", parents=[cfg],
                            help="evaluate a checkpoint on the test pool")
    p_eval.add_argument("--checkpoint", required=True)

    p_abl = sub.add_parser("ablate", parents=[cfg],
                           help="run the six-configuration ablation matrix")
    p_abl.add_argument("--parallel", type=int, default=1)

    p_sweep = sub.add_parser("sweep", parents=[cfg],
                             help="sweep one configuration axis")
    p_sweep.add_argument("--axis", required=True,
                         choices=["mask-ratio", "decoder-depth"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list of axis values")
    p_sweep.add_argument("--parallel", type=int, default=1)
    return parser


def resolve_config(args):
    """Defaults, then config file, then explicit flags."""
    resolved = {
        "dataset": dict(DATASET_DEFAULTS),
        "trainer": {k: v for k, v in config_to_plain(TrainerConfig()).items()
                    if k != "model"},
        "model": dataclasses.asdict(ModelConfig()),
    }
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        if "config" in loaded:  # a manifest
            loaded = loaded["config"]
        for section in ("dataset", "trainer", "model"):
            resolved[section].update(loaded.get(section, {}))
    for flag, (section, key), _ in _FLAG_MAP:
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            resolved[section][key] = value
    return resolved


def build_objects(resolved):
    dataset = dict(resolved["dataset"])
    if dataset.get("seed") is None:
        dataset["seed"] = resolved["trainer"]["seed"]
    model_fields = dict(resolved["model"])
    model_fields["num_classes"] = dataset["num_classes"]
    model_fields["image_size"] = dataset["image_size"]
    model_fields["channels"] = dataset["channels"]
    spec = DatasetSpec(**dataset)
    config = TrainerConfig(model=ModelConfig(**model_fields),
                           **resolved["trainer"])
    return spec, config


def _source_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def default_out_dir(name):
    root = os.environ.get("MASKMATCH_OUT", "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return os.path.join(root, f"{name}-{stamp}")


def write_manifest(out_dir, spec, config, artifacts):
    manifest = {
        "config": {
            "dataset": dataclasses.asdict(spec),
            "trainer": {k: v for k, v in config_to_plain(config).items()
                        if k != "model"},
            "model": config_to_plain(config)["model"],
        },
        "seed": config.seed,
        "artifacts": artifacts,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "revision": _source_revision(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _run_single(spec, config, out_dir):
    """One training run with the standard artifact layout."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = {"metrics": "metrics.jsonl", "checkpoint": "checkpoint.mmck"}
    write_manifest(out_dir, spec, config, artifacts)
    pools = load_dataset(spec)
    result = run_training(config, pools,
                          metrics_path=os.path.join(out_dir, "metrics.jsonl"),
                          checkpoint_dir=out_dir)
    return result


def _matrix_worker(item):
    name, spec_dict, trainer_dict, model_dict, out_dir = item
    spec = DatasetSpec(**spec_dict)
    config = TrainerConfig(model=ModelConfig(**model_dict), **trainer_dict)
    result = _run_single(spec, config, out_dir)
    return name, result.final_error


def _run_matrix(jobs, parallel):
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_matrix_worker, jobs))
    return [_matrix_worker(job) for job in jobs]


def cmd_train(args):
    spec, config = build_objects(resolve_config(args))
    out_dir = args.out or default_out_dir("train")
    result = _run_single(spec, config, out_dir)
    if result.final_error is not None:
        print(f"final error rate: {result.final_error:.4f}")
    check = result.coefficient_check
    if check["applicable"] and not check["ok"]:
        print(f"warning: lambda_mae={check['lambda_mae']} >= converged loss "
              f"ratio {check['ratio']:.3g}; reconstruction term dominates",
              file=sys.stderr)
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args):
    spec, config = build_objects(resolve_config(args))
    pools = load_dataset(spec)
    expect = {k: v.shape for k, v in init_params(config.model,
                                                 seed=config.seed).items()}
    ckpt = load_checkpoint(args.checkpoint, expect_param_shapes=expect)
    error = evaluate(ckpt.params, config.model, pools.test_images,
                     pools.test_labels)
    print(f"error rate: {error:.4f}")
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval.json"), "w") as fh:
        json.dump({"checkpoint": args.checkpoint, "error_rate": error}, fh)
    return 0


def _matrix_jobs(resolved, out_dir, rows):
    jobs = []
    for name, overrides in rows:
        spec_dict = dict(resolved["dataset"])
        if spec_dict.get("seed") is None:
            spec_dict["seed"] = resolved["trainer"]["seed"]
        trainer_dict = dict(resolved["trainer"])
        model_dict = dict(resolved["model"])
        model_dict["num_classes"] = spec_dict["num_classes"]
        model_dict["image_size"] = spec_dict["image_size"]
        model_dict["channels"] = spec_dict["channels"]
        for key, value in overrides.items():
            if key in ("decoder_depth",):
                model_dict[key] = value
            else:
                trainer_dict[key] = value
        jobs.append((name, spec_dict, trainer_dict, model_dict,
                     os.path.join(out_dir, name)))
    return jobs


def cmd_ablate(args):
    resolved = resolve_config(args)
    out_dir = args.out or default_out_dir("ablate")
    os.makedirs(out_dir, exist_ok=True)
    jobs = _matrix_jobs(resolved, out_dir, ABLATION_ROWS)
    results = _run_matrix(jobs, args.parallel)
    table_path = os.path.join(out_dir, "ablation.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "error_rate"])
        for name, error in results:
            writer.writerow([name, error])
            print(f"{name}: {error:.4f}")
    print(f"ablation table: {table_path}")
    return 0


def cmd_sweep(args):
    resolved = resolve_config(args)
    out_dir = args.out or default_out_dir("sweep")
    os.makedirs(out_dir, exist_ok=True)
    raw_values = [v for v in args.values.split(",") if v]
    if args.axis == "mask-ratio":
        rows = [(f"mask-ratio_{v}", {"mask_ratio": float(v)}) for v in raw_values]
    else:
        rows = [(f"decoder-depth_{v}", {"decoder_depth": int(v)})
                for v in raw_values]
    jobs = _matrix_jobs(resolved, out_dir, rows)
    results = _run_matrix(jobs, args.parallel)
    table_path = os.path.join(out_dir, "sweep.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.axis.replace("-", "_"), "error_rate"])
        for (name, error), value in zip(results, raw_values):
            writer.writerow([value, error])
            print(f"{args.axis}={value}: {error:.4f}")
    print(f"sweep table: {table_path}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MaskMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
