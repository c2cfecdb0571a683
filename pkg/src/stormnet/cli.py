"""Command-line entry point.

Subcommands: generate, train, search, eval, explain. Every run writes a
resolved_config.json (defaults < config file < explicit flags) into its
output directory so it can be replayed. Exit codes: 0 ok, 2 usage or
incompatible arguments, 3 I/O failure, 4 numeric/training failure.

The default seed comes from --seed, else the STORMNET_SEED environment
variable, else 0.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels, tasks, xai
from .container import ContainerError, atomic_write_text, write_blob_file
from .data import CalibrationError, DataSplit, Dataset, generate
from .errors import NumericError, TrainingError
from .metrics import evaluate_scalar, evaluate_unet
from .models import Model, build
from .rng import derive_seed
from .train import hyperparameter_search, train

MODEL_FILE = "model.bin"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _default_seed() -> int:
    env = os.environ.get("STORMNET_SEED")
    return int(env) if env else 0


def _load_file_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """Precedence: defaults < config file < explicitly passed flags."""
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        resolved[key] = value
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _write_resolved(out_dir: Path, command: str, resolved: dict) -> None:
    payload = dict(resolved)
    payload["command"] = command
    payload["backend"] = kernels.active_backend()
    atomic_write_text(
        out_dir / "resolved_config.json",
        json.dumps(payload, sort_keys=True, indent=2) + "\n",
    )


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path, only=None) -> Dataset:
    try:
        return Dataset.load(path, only=only)
    except FileNotFoundError as exc:
        raise ContainerError(f"dataset not found under {path}: {exc}") from exc


def _load_model(path) -> Model:
    try:
        return Model.load(path)
    except FileNotFoundError as exc:
        raise ContainerError(f"model file not found: {path}") from exc


def cmd_generate(args) -> int:
    resolved = _resolve(
        {"seed": _default_seed(), "train": 2000, "val": 400, "test": 400, "pos_rate": 0.01},
        {},
        {"seed": args.seed, "train": args.train, "val": args.val,
         "test": args.test, "pos_rate": args.pos_rate},
    )
    try:
        dataset = generate(
            resolved["seed"],
            n_train=resolved["train"],
            n_val=resolved["val"],
            n_test=resolved["test"],
            pixel_pos_rate_target=resolved["pos_rate"],
        )
    except (ValueError, CalibrationError) as exc:
        raise UsageError(str(exc)) from exc
    out = _prepare_out(args.out)
    dataset.save(out)
    _write_resolved(out, "generate", resolved)
    counts = dataset.meta["counts"]
    print(f"generated train={counts['train']} val={counts['val']} test={counts['test']}")
    print(f"achieved pixel-positive rate {dataset.meta['achieved_pixel_pos_rate']:.5f}")
    return EXIT_OK


def _assemble(args, file_cfg, seed):
    model_kind = args.model
    task = args.task
    if not tasks.compatible(model_kind, task):
        raise UsageError(
            f"model {model_kind!r} is incompatible with task {task!r}: "
            f"seg_* tasks require --model unet and unet supports only seg_* tasks"
        )
    dataset = _load_dataset(args.data)
    td = tasks.TaskData(model_kind, task, dataset)
    spec = tasks.default_spec(model_kind, task, seed, file_cfg)
    cfg = tasks.default_train_config(model_kind, task, seed, file_cfg)
    return dataset, td, spec, cfg


def _evaluate_for_task(model, td, split_name):
    x, y = td.arrays(split_name)
    task_kind = "classification" if td.classification else "regression"
    if td.model_kind == "unet":
        return evaluate_unet(model, _split_view(td, split_name), "pixel", task_kind)
    return evaluate_scalar(model, x, y[:, 0], task_kind)


def _split_view(td, split_name):
    # seg tasks never filter, so the raw split is the evaluation view
    x = td.inputs[split_name]
    y = td.targets[split_name]
    return DataSplit(x, y[..., 0])


def cmd_train(args) -> int:
    file_cfg = _load_file_config(args.config)
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", _default_seed()))
    dataset, td, spec, cfg = _assemble(args, file_cfg, seed)
    model = build(spec)
    train_x, train_y = td.arrays("train")
    val_x, val_y = td.arrays("val")
    model, log = train(
        model, train_x, train_y, val_x, val_y, cfg,
        augment_fn=td.augment_fn, metric_fn=td.metric_fn,
    )
    out = _prepare_out(args.out)
    model.save(out / MODEL_FILE)
    atomic_write_text(out / "train_log.csv", log.to_csv())
    report = _evaluate_for_task(model, td, "val")
    atomic_write_text(out / "eval_val.json", report.to_json() + "\n")
    resolved = {
        "seed": seed, "model": args.model, "task": args.task, "data": str(args.data),
        "spec": spec.to_dict(), "train_config": {
            k: getattr(cfg, k) for k in cfg.__dataclass_fields__
        },
        "train_samples_used": td.kept_counts["train"],
        "val_samples_used": td.kept_counts["val"],
        "stopping_reason": log.stopping_reason,
    }
    _write_resolved(out, "train", resolved)
    metric = report.auc if td.classification else report.regression["mae"]
    name = "val_auc" if td.classification else "val_mae"
    print(f"trained {args.model}/{args.task}: epochs={len(log.rows)} "
          f"stop={log.stopping_reason} {name}={metric:.4f}")
    return EXIT_OK


def cmd_search(args) -> int:
    file_cfg = _load_file_config(args.config)
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", _default_seed()))
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    dataset, td, _, base_cfg = _assemble(args, file_cfg, seed)
    train_x, train_y = td.arrays("train")
    val_x, val_y = td.arrays("val")
    space = tasks.search_space(args.model, args.task)

    def run_trial(config, trial_seed):
        spec = tasks.default_spec(args.model, args.task, trial_seed, config)
        overrides = dict(file_cfg)
        overrides.update(config)
        cfg = tasks.default_train_config(args.model, args.task, trial_seed, overrides)
        model = build(spec)
        model, log = train(model, train_x, train_y, val_x, val_y, cfg,
                           augment_fn=td.augment_fn, metric_fn=td.metric_fn)
        metric = log.rows[-1]["val_metric"] if log.rows else float("-inf")
        return metric, {"spec": spec.to_dict()}, model

    results, best_model = hyperparameter_search(space, args.trials, run_trial, seed)
    out = _prepare_out(args.out)
    atomic_write_text(out / "search.json", json.dumps(results, sort_keys=True, indent=2) + "\n")
    if best_model is not None:
        best_model.save(out / MODEL_FILE)
    _write_resolved(out, "search", {
        "seed": seed, "model": args.model, "task": args.task,
        "data": str(args.data), "trials": args.trials,
    })
    ok = sum(1 for r in results if r["status"] == "ok")
    print(f"search finished: {ok}/{args.trials} trials ok; "
          f"best metric {results[0]['metric']}" if ok else "search finished: all trials failed")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    scalar = model.spec.output.endswith("-scalar")
    if scalar and args.mode != "image":
        raise UsageError(f"mode {args.mode!r} requires a map-output model")
    if not scalar and args.mode == "image":
        raise UsageError("mode 'image' requires a scalar-output model; use pixel or image_sum")
    if not 0.0 < args.sweep_step <= 1.0:
        raise UsageError(f"--sweep-step must be in (0, 1], got {args.sweep_step}")
    task_kind = "classification" if model.spec.output.startswith("sigmoid") else "regression"
    dataset = _load_dataset(args.data, only=(args.split,))
    split = dataset.splits[args.split]
    if scalar:
        feature_model = len(model.spec.input_shape) == 1
        if task_kind == "classification":
            x = split.percentile_features() if feature_model else split.images
            y = split.labels_any()
        else:
            keep = np.nonzero(split.flash_counts() >= 1.0)[0]
            split = split.subset(keep)
            x = split.percentile_features() if feature_model else split.images
            y = split.flash_counts()
        report = evaluate_scalar(model, x, y, task_kind, args.sweep_step)
    else:
        report = evaluate_unet(model, split, args.mode, task_kind, args.sweep_step)

    out = _prepare_out(args.out)
    stem = f"eval_{args.split}_{args.mode}"
    atomic_write_text(out / f"{stem}.json", report.to_json() + "\n")
    if task_kind == "classification":
        atomic_write_text(out / f"{stem}_sweep.csv", report.sweep_csv())
        atomic_write_text(out / f"{stem}_roc.csv", report.roc_csv())
    _write_resolved(out, "eval", {
        "model": str(args.model), "data": str(args.data), "split": args.split,
        "mode": args.mode, "sweep_step": args.sweep_step, "task": task_kind,
    })
    if task_kind == "classification":
        print(f"{stem}: auc={report.auc:.4f} best_csi_threshold={report.best_csi_threshold}")
    else:
        r = report.regression
        print(f"{stem}: mae={r['mae']:.4f} rmse={r['rmse']:.4f} "
              f"bias={r['bias']:.4f} r2={r['r2']:.4f}")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = _load_model(args.model)
    feature_model = len(model.spec.input_shape) == 1
    classification = model.spec.output.startswith("sigmoid")
    seed = args.seed if args.seed is not None else _default_seed()
    out = _prepare_out(args.out)

    if args.method == "perm":
        dataset = _load_dataset(args.data, only=(args.split,))
        split = dataset.splits[args.split]
        if classification:
            labels = split.labels_any()
            metric = "auc"
        else:
            keep = np.nonzero(split.flash_counts() >= 1.0)[0]
            split = split.subset(keep)
            labels = split.flash_counts()
            metric = "neg_mae"
        if feature_model:
            inputs = split.percentile_features()
            groups = {name: tuple(range(c * 9, c * 9 + 9))
                      for c, name in enumerate(("vil", "ir", "wv", "vis"))}
            kind = "feature"
        else:
            inputs = split.images
            groups = None
            kind = "image"
        if args.sample_size > len(split):
            raise UsageError(
                f"--sample-size {args.sample_size} exceeds the {args.split} split size "
                f"{len(split)}; pass a smaller --sample-size"
            )
        result = xai.permutation_importance(
            lambda x: model.predict(x)[:, 0], inputs, labels, metric=metric,
            groups=groups, mode=args.mode, n_resamples=args.resamples,
            sample_size=args.sample_size, seed=seed, input_kind=kind,
        )
        atomic_write_text(out / "importance.json", result.to_json() + "\n")
        atomic_write_text(out / "importance.csv", result.to_csv())
        print(f"permutation importance ({args.mode}): "
              + ", ".join(f"{g}={result.importance_mean[g]:.4f}" for g in result.group_names))
    else:
        dataset = _load_dataset(args.data, only=(args.split, "train"))
        split = dataset.splits[args.split]
        train_split = dataset.splits["train"]
        n_explain = min(args.sample_size, len(split))
        inputs = split.percentile_features() if feature_model else split.images
        bg_source = train_split.percentile_features() if feature_model else train_split.images
        background = bg_source[: args.background]
        results = []
        for i in range(n_explain):
            results.append(xai.attribute(
                model, inputs[i], background, n_steps=args.steps,
                seed=derive_seed(seed, i),
            ))
        ratios = xai.aggregate_attributions(results)
        summary = {
            "samples": [r.summary() for r in results],
            "global": ratios,
            "n_steps": args.steps,
            "background_size": int(background.shape[0]),
        }
        atomic_write_text(out / "channel_sums.json",
                          json.dumps(summary, sort_keys=True, indent=2) + "\n")
        maps = np.stack([r.attribution for r in results])
        write_blob_file(out / "attributions.bin",
                        {"kind": "attribution_maps", "split": args.split},
                        {"attributions": maps})
        worst = max(r.completeness_residual for r in results)
        print(f"attributed {n_explain} samples; worst completeness residual {worst:.5f}")

    _write_resolved(out, "explain", {
        "model": str(args.model), "data": str(args.data), "method": args.method,
        "split": args.split, "mode": args.mode, "resamples": args.resamples,
        "sample_size": args.sample_size, "steps": args.steps,
        "background": args.background, "seed": seed,
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormnet",
        description="Storm-image lightning models: data generation, training, "
                    "evaluation, and explainability.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=None)
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.add_argument("--pos-rate", dest="pos_rate", type=float, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on one task")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=tasks.MODEL_KINDS)
    p.add_argument("--task", required=True, choices=tasks.TASKS)
    p.add_argument("--config", default=None, help="JSON file with spec/training overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=tasks.MODEL_KINDS)
    p.add_argument("--task", required=True, choices=tasks.TASKS)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="evaluate a model file on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("val", "test"))
    p.add_argument("--sweep-step", dest="sweep_step", type=float, default=0.05)
    p.add_argument("--mode", default="image", choices=("image", "pixel", "image_sum"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="permutation importance or attribution maps")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=("perm", "attr"))
    p.add_argument("--split", default=None)
    p.add_argument("--mode", default="single", choices=("single", "multi"),
                   help="perm only: single- or multi-pass")
    p.add_argument("--resamples", type=int, default=30)
    p.add_argument("--sample-size", dest="sample_size", type=int, default=250)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--background", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "explain" and args.split is None:
        args.split = "train" if args.method == "perm" else "val"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContainerError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
