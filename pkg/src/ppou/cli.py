"""Command-line entry point: ``ppou <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data, trainer
from .config import GENERATOR_PARAMS, ConfigError, RunConfig, load_config
from .estimator import PPOURegressor
from .io import ModelFileError, load_model, save_model
from .mixture import Z95

MODEL_FILE = "model.ppou"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset_overrides(args) -> dict:
    """Translate dataset flags into config overrides."""
    out = {}
    if getattr(args, "data", None):
        out["dataset.csv"] = args.data
        out["dataset.generator"] = None
    if getattr(args, "dataset", None):
        out["dataset.generator"] = args.dataset
        out["dataset.csv"] = None
    for flag, key in (("n", "n"), ("alpha", "alpha"), ("dim", "d"), ("rings", "n_rings")):
        value = getattr(args, flag, None)
        if value is not None:
            out[f"dataset.params.{key}"] = value
    return out


def _overrides(args) -> dict:
    out = _dataset_overrides(args)
    for flag in ("seed", "workers", "out"):
        value = getattr(args, flag, None)
        if value is not None:
            out[flag] = value
    if getattr(args, "max_iter", None) is not None:
        out["train.max_iter"] = args.max_iter
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, "--set expects KEY=VALUE")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _run_config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _load_dataset(cfg: RunConfig) -> data.Dataset:
    ds = cfg.dataset
    if ds.csv is not None:
        return data.load_csv(ds.csv)
    params = dict(ds.params)
    if "seed" in GENERATOR_PARAMS.get(ds.generator, ()) and "seed" not in params:
        params["seed"] = cfg.seed
    return data.generate(ds.generator, **params)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    name = args.dataset
    if name is None:
        raise ConfigError("dataset", "--dataset is required")
    if name not in data.GENERATORS:
        raise ConfigError("dataset", f"unknown generator {name!r}; choose from {sorted(data.GENERATORS)}")
    params = {k: v for k, v in _dataset_overrides(args).items() if k.startswith("dataset.params.")}
    params = {k.rsplit(".", 1)[1]: v for k, v in params.items()}
    if "seed" in GENERATOR_PARAMS[name]:
        params["seed"] = args.seed if args.seed is not None else 0
    dataset = data.generate(name, **params)
    out = _out_dir(args.out or ".")
    csv_path = out / f"{name}.csv"
    data.save_csv(dataset, csv_path)
    _write_json(out / f"{name}.provenance.json", {"generator": name, "params": params, "rows": len(dataset),
                                                  "columns": dataset.n_features})
    print(csv_path)
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = _load_dataset(cfg)
    if cfg.dataset.test_fraction is None:
        train_ds, test_ds = dataset, None
    else:
        train_ds, test_ds = data.split(dataset, 1 - cfg.dataset.test_fraction, cfg.dataset.split_seed)
    out = _out_dir(cfg.out)
    est = cfg.build_estimator()
    with open(out / "metrics.jsonl", "w") as metrics:
        def stream(record):
            metrics.write(json.dumps(record, sort_keys=True) + "\n")
            metrics.flush()

        est.fit(
            train_ds.X, train_ds.y,
            noise_floor=train_ds.noise_floor,
            X_test=None if test_ds is None else test_ds.X,
            y_test=None if test_ds is None else test_ds.y,
            callback=stream,
        )
    save_model(out / MODEL_FILE, est.model_, cfg.to_dict())
    summary = {
        "iterations": est.n_iter_,
        "converged": est.converged_,
        "train": est.evaluate(train_ds.X, train_ds.y, reference=train_ds.y_true),
    }
    if test_ds is not None:
        summary["test"] = est.evaluate(test_ds.X, test_ds.y, reference=test_ds.y_true)
    summary["reference"] = "y_true" if dataset.y_true is not None else "y"
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k]["rel_l2"] for k in ("train", "test") if k in summary}))
    return 0


def _model_and_inputs(args):
    model, config = load_model(args.model)
    dataset = data.load_csv(args.data, require_target=args.command == "eval")
    if dataset.n_features != model.input_dim:
        raise ModelFileError(
            f"{args.data}: has {dataset.n_features} input columns, model expects {model.input_dim}"
        )
    return PPOURegressor.from_model(model), dataset


def cmd_predict(args) -> int:
    est, dataset = _model_and_inputs(args)
    mean, var = est.model_.predict_moments(dataset.X)
    sd = np.sqrt(var)
    part = est.predict_partition(dataset.X)
    out = _out_dir(args.out or ".")
    path = out / "predictions.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mean", "variance", "ci_lo", "ci_hi", "argmax_partition"])
        for i in range(len(mean)):
            w.writerow([_fmt(mean[i]), _fmt(var[i]), _fmt(mean[i] - Z95 * sd[i]), _fmt(mean[i] + Z95 * sd[i]),
                        str(int(part[i]))])
    print(path)
    return 0


def cmd_eval(args) -> int:
    est, dataset = _model_and_inputs(args)
    reference = None
    if args.clean is not None:
        clean = data.load_csv(args.data, target=args.clean)
        reference = clean.y
    metrics = est.evaluate(dataset.X, dataset.y, reference=reference)
    metrics["reference"] = args.clean or "y"
    out = _out_dir(args.out or ".")
    _write_json(out / "eval.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_crossval(args) -> int:
    cfg = _run_config(args)
    dataset = _load_dataset(cfg)
    result = trainer.cross_validate(
        cfg.build_estimator(), dataset.X, dataset.y, k=args.k, seed=cfg.seed, reference=dataset.y_true
    )
    result["k"] = args.k
    out = _out_dir(cfg.out)
    _write_json(out / "crossval.json", result)
    print(json.dumps(result["test_rel_l2"]))
    return 0


def cmd_baseline(args) -> int:
    if args.data is not None:
        dataset = data.load_csv(args.data)
    else:
        cfg = _run_config(args)
        dataset = _load_dataset(cfg)
    fit = trainer.fit_global_poly(dataset.X, dataset.y, args.degree, reference=dataset.y_true)
    row = fit.to_dict()
    row["reference"] = "y_true" if dataset.y_true is not None else "y"
    out = _out_dir(args.out or ".")
    _write_json(out / "baseline.json", row)
    print(json.dumps({"degree": fit.degree, "rel_l2": fit.rel_l2}))
    return 0


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, run: bool = True) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    if run:
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. model.n_partitions=8")


def _dataset_flags(p: argparse.ArgumentParser, csv_flag: bool = True) -> None:
    p.add_argument("--dataset", help=f"generator name: {', '.join(sorted(data.GENERATORS))}")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--alpha", type=float, help="sine noise slope")
    p.add_argument("--dim", type=int, help="rings ambient dimension")
    p.add_argument("--rings", type=int, help="number of rings")
    if csv_flag:
        p.add_argument("--data", help="dataset CSV instead of a generator")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppou", description="Probabilistic partition-of-unity regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark CSV")
    _common(p, run=False)
    _dataset_flags(p, csv_flag=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a model and write model file, metrics and summary")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--max-iter", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("predict", cmd_predict, "predictive moments for a CSV of inputs"),
                              ("eval", cmd_eval, "error metrics of a saved model on a CSV")):
        p = sub.add_parser(name, help=help_)
        _common(p, run=False)
        p.add_argument("--model", required=True, help="model file")
        p.add_argument("--data", required=True, help="input CSV")
        if name == "eval":
            p.add_argument("--clean", help="column holding the noise-free reference signal")
        p.set_defaults(func=func)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--max-iter", type=int)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("baseline", help="global Chebyshev least-squares fit on 1D data")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--degree", type=int, default=3)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data.DataError, ModelFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
