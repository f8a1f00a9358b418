"""Command-line surface.

Subcommands: train, finetune, eval, inspect-correlation, synth. Run
configuration comes from a key=value text file (--config); command-line
flags override file values. Exit codes: 0 success, 1 configuration error,
2 IO/format error, 3 numeric error.
"""
import argparse
import csv
import io
import os
import sys
from dataclasses import fields as dc_fields

import numpy as np

from . import covariance as cov
from . import data, metrics, trainer
from .checkpoint import write_atomic
from .errors import ConfigError, FormatError, NumericError
from .network import NetConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

_TRAIN_KEYS = {f.name: f.type for f in dc_fields(trainer.TrainConfig)}
_NET_KEYS = ("net.input_side", "net.layers", "net.feature_dim", "net.init_mode")
_PATH_KEYS = ("manifest", "out", "log_dir", "checkpoint")
_BOOLS = {"true": True, "false": False, "1": True, "0": False}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _parse_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read config {path}: {e}") from e
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _TRAIN_KEYS and key not in _NET_KEYS and key not in _PATH_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _coerce(key, raw):
    if key in ("batch_size", "epochs", "cov_update_every", "tau",
               "strip_sample_every", "strip_smoothing", "seed"):
        return int(raw)
    if key in ("eta1", "eta2", "epsilon", "rho", "validation_fraction",
               "eta1_decay", "divergence_factor", "early_stop_threshold"):
        return float(raw)
    if key == "dynamic_lambda":
        low = str(raw).lower()
        if low not in _BOOLS:
            raise ConfigError(f"dynamic_lambda must be true/false, got {raw!r}")
        return _BOOLS[low]
    return raw


def _build_configs(args, need_manifest=True):
    """Merge config file and CLI overrides into (TrainConfig, NetConfig, paths)."""
    values = _parse_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "mode": args.mode, "cov_update_every": args.cov_update_every,
        "rho": args.rho, "tau": args.tau, "epsilon": args.epsilon, "eta1": args.eta1,
        "eta2": args.eta2, "batch_size": args.batch, "epochs": args.epochs,
    }
    if getattr(args, "dynamic_lambda", None) is not None:
        overrides["dynamic_lambda"] = args.dynamic_lambda
    train_kwargs = {}
    for key, raw in values.items():
        if key in _TRAIN_KEYS:
            train_kwargs[key] = _coerce(key, raw)
    for key, value in overrides.items():
        if value is not None:
            train_kwargs[key] = value
    try:
        config = trainer.TrainConfig(**train_kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e

    net_text = []
    for key in _NET_KEYS:
        if key in values:
            net_text.append(f"{key.split('.', 1)[1]}={values[key]}")
    net_config = NetConfig.from_text("\n".join(net_text)) if net_text else NetConfig()

    paths = {k: values.get(k) for k in _PATH_KEYS}
    if args.out:
        paths["out"] = args.out
    if getattr(args, "log_dir", None):
        paths["log_dir"] = args.log_dir
    if getattr(args, "manifest", None):
        paths["manifest"] = args.manifest
    if getattr(args, "checkpoint", None):
        paths["checkpoint"] = args.checkpoint
    if need_manifest and not paths.get("manifest"):
        raise ConfigError("a manifest is required (flag --manifest or config key manifest=)")
    for key in ("manifest", "checkpoint"):
        if paths.get(key) and not os.path.exists(paths[key]):
            if key == "manifest":
                raise FormatError(f"manifest not found: {paths[key]}")
            raise FormatError(f"checkpoint not found: {paths[key]}")
    return config, net_config, paths


def _csv_bytes(rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def _write_log(paths, log, name):
    if paths.get("log_dir"):
        os.makedirs(paths["log_dir"], exist_ok=True)
        write_atomic(os.path.join(paths["log_dir"], name), log.to_csv().encode("utf-8"))


def _cmd_train(args):
    config, net_config, paths = _build_configs(args)
    dataset = data.load_manifest(paths["manifest"])
    if len(dataset) == 0:
        raise ConfigError("manifest lists no samples")
    if dataset[0].image.shape[1] != net_config.input_side:
        raise ConfigError(f"manifest images are {dataset[0].image.shape[1]} px, "
                          f"net config expects {net_config.input_side}")
    checkpoint_obj, log = trainer.train(dataset, config, net_config)
    out = paths.get("out") or "model.tcmt"
    trainer.save_checkpoint(out, checkpoint_obj)
    _write_log(paths, log, "train_log.csv")
    print(f"wrote checkpoint {out} after {checkpoint_obj.iteration} iterations")
    return EXIT_OK


def _cmd_finetune(args):
    config, _, paths = _build_configs(args)
    if not paths.get("checkpoint"):
        raise ConfigError("finetune needs --checkpoint")
    checkpoint_in = trainer.load_checkpoint(paths["checkpoint"])
    dataset = data.load_manifest(paths["manifest"])
    if len(dataset) == 0:
        raise ConfigError("manifest lists no samples")
    checkpoint_out, log = trainer.fine_tune(checkpoint_in, dataset, config)
    out = paths.get("out") or "model_finetuned.tcmt"
    trainer.save_checkpoint(out, checkpoint_out)
    _write_log(paths, log, "finetune_log.csv")
    print(f"wrote checkpoint {out} (M={checkpoint_out.state.layout.n_landmark})")
    return EXIT_OK


def _cmd_eval(args):
    config, _, paths = _build_configs(args)
    if not paths.get("checkpoint"):
        raise ConfigError("eval needs --checkpoint")
    checkpoint_obj = trainer.load_checkpoint(paths["checkpoint"])
    state = checkpoint_obj.state
    dataset = data.load_manifest(paths["manifest"])
    if len(dataset) == 0:
        raise ConfigError("manifest lists no samples to evaluate")
    if dataset.layout.n_landmark != state.layout.n_landmark:
        raise ConfigError(f"manifest has M={dataset.layout.n_landmark}, "
                          f"checkpoint expects M={state.layout.n_landmark}")
    predictions = []
    truths = []
    for sample in dataset:
        if sample.image.shape[1] != state.net_config.input_side:
            raise ConfigError(f"image size {sample.image.shape[1]} px does not match "
                              f"the checkpoint input side {state.net_config.input_side}")
        predictions.append(state.predict_landmarks(sample.image))
        truths.append(sample.landmarks)
    report = metrics.evaluate(np.stack(predictions), np.stack(truths),
                              dataset.layout.eye_points)
    out_dir = paths.get("out") or "."
    os.makedirs(out_dir, exist_ok=True)
    write_atomic(os.path.join(out_dir, "report.csv"), _csv_bytes(report.rows()))
    write_atomic(os.path.join(out_dir, "curve.csv"), _csv_bytes(report.curve_rows()))
    print(f"mean_error={report.overall_mean:.6f} failure_rate={report.failure_rate:.4f}")
    return EXIT_OK


def _cmd_inspect_correlation(args):
    _, _, paths = _build_configs(args, need_manifest=False)
    if not paths.get("checkpoint"):
        raise ConfigError("inspect-correlation needs --checkpoint")
    checkpoint_obj = trainer.load_checkpoint(paths["checkpoint"])
    state = checkpoint_obj.state
    corr = cov.correlation_matrix(state.covariance.upsilon)
    out_dir = paths.get("out") or "."
    os.makedirs(out_dir, exist_ok=True)
    task_names = [f"coord_{i}" for i in range(state.layout.n_landmark)] + \
        list(state.layout.attr_names)
    rows = [["task"] + task_names]
    for name, row in zip(task_names, corr):
        rows.append([name] + [repr(float(v)) for v in row])
    write_atomic(os.path.join(out_dir, "correlation.csv"), _csv_bytes(rows))
    if state.layout.n_attr:
        report = cov.group_correlation_report(corr, state.layout)
        write_atomic(os.path.join(out_dir, "group_report.csv"), _csv_bytes(report.rows()))
        print(f"wrote correlation.csv and group_report.csv to {out_dir}")
    else:
        print(f"wrote correlation.csv to {out_dir} (no attribute tasks)")
    return EXIT_OK


def _cmd_synth(args):
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read synth spec {args.spec}: {e}") from e
    spec = data.synth_spec_from_text(text)
    if args.seed is not None:
        spec.seed = args.seed
    manifest = data.write_synthetic(spec, args.out or "synth_data")
    print(f"wrote {spec.n_samples} samples, manifest {manifest}")
    return EXIT_OK


def _add_run_flags(parser, checkpoint_flag=False):
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--manifest", help="dataset manifest CSV")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", help="joint | fld_only | fld_plus_group:<g> | "
                                       "fld_plus_random | baseline_early_stopping")
    parser.add_argument("--out", help="output path (checkpoint or report directory)")
    parser.add_argument("--log-dir", dest="log_dir", help="directory for the training log CSV")
    parser.add_argument("--cov-update-every", dest="cov_update_every", type=int)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--tau", type=int)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--eta1", type=float)
    parser.add_argument("--eta2", type=float)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--dynamic-lambda", dest="dynamic_lambda", default=None,
                        action="store_true", help="force dynamic coefficients on")
    parser.add_argument("--fixed-lambda", dest="dynamic_lambda", default=None,
                        action="store_false", help="freeze all coefficients at 1")
    if checkpoint_flag:
        parser.add_argument("--checkpoint", help="input checkpoint path")


def build_parser():
    parser = _Parser(prog="tcmtl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a joint landmark/attribute model")
    _add_run_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("finetune", help="transfer a checkpoint to a denser landmark set")
    _add_run_flags(p, checkpoint_flag=True)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_run_flags(p, checkpoint_flag=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("inspect-correlation",
                       help="emit the task correlation matrix and group report")
    _add_run_flags(p, checkpoint_flag=True)
    p.set_defaults(fn=_cmd_inspect_correlation)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec file")
    p.add_argument("--spec", required=True, help="key=value synth spec file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
