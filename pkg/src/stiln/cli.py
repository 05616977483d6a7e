"""Command-line front end.

Subcommands: synth, preprocess, train, loocv, sweep, ablate, describe,
export-topo. The STILN_SEED environment variable overrides any default
seed; an explicit --seed flag wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import ConfigError, StilnError
from .harness import (
    EvalReport,
    TrainConfig,
    evaluate,
    run_ablation,
    run_loocv,
    run_sweep,
    train_model,
)
from .model import STILN, ModelConfig, VARIANTS, describe
from .optim import save_checkpoint
from .signal import BAND_NAMES, PreprocessConfig, preprocess_trial
from .topomap import MapOperator, write_pgm, write_png


def _env_seed(default: int = 0) -> int:
    raw = os.environ.get("STILN_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"STILN_SEED must be an integer, got {raw!r}") from e


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", default="NET0", choices=sorted(VARIANTS))
    p.add_argument(
        "--widths",
        default=None,
        help="five conv widths, comma separated (default 32,64,64,64,64)",
    )
    p.add_argument("--hidden", type=int, default=64, help="recurrent state width")
    p.add_argument("--fc-hidden", type=int, default=128)
    p.add_argument("--se-ratio", type=int, default=4)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=None, help="default STILN_SEED or 0")
    p.add_argument("--max-steps", type=int, default=None)


def _model_config(args) -> ModelConfig:
    kwargs = {
        "variant": args.variant,
        "lstm_hidden": args.hidden,
        "fc_hidden": args.fc_hidden,
        "se_ratio": args.se_ratio,
    }
    if args.widths:
        widths = tuple(int(w) for w in args.widths.split(","))
        kwargs["conv_widths"] = widths
    cfg = ModelConfig(**kwargs)
    cfg.validate()
    return cfg


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=_env_seed(0) if args.seed is None else args.seed,
        max_steps=args.max_steps,
    )
    cfg.validate()
    return cfg


def _ensure_parent(path: str) -> None:
    parent = Path(path).parent
    if parent and not parent.exists():
        parent.mkdir(parents=True, exist_ok=True)


def _write_report(path: str | None, payload: str) -> None:
    if path:
        _ensure_parent(path)
        Path(path).write_text(payload, encoding="utf-8")
        print(f"report written to {path}")


def _load_samples_arg(path: str) -> list:
    samples = data_mod.load_samples(path)
    print(f"loaded {len(samples)} samples from {path}")
    return samples


def cmd_synth(args) -> int:
    spec = data_mod.SynthSpec(
        subjects=args.subjects,
        trials_per_subject=args.trials,
        fs=args.fs,
        seconds=args.seconds,
        noise=args.noise,
        seed=_env_seed(0) if args.seed is None else args.seed,
    )
    spec.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for s in range(spec.subjects):
        for t in range(spec.trials_per_subject):
            trial = data_mod.synth_trial(spec, s, t)
            name = f"trial_s{s:02d}_t{t:02d}.bin"
            data_mod.save_trial(out / name, trial)
            files.append(name)
    manifest = {
        "format": "stiln-manifest",
        "spec": {
            "subjects": spec.subjects,
            "trials_per_subject": spec.trials_per_subject,
            "fs": spec.fs,
            "seconds": spec.seconds,
            "noise": spec.noise,
            "seed": spec.seed,
        },
        "trials": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files)} trials to {out}")
    return 0


def _trial_paths(root: Path) -> list[Path]:
    manifest = root / "manifest.json"
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        return [root / name for name in meta["trials"]]
    return sorted(root.glob("trial_*.bin"))


def cmd_preprocess(args) -> int:
    root = Path(args.trials)
    paths = _trial_paths(root)
    if not paths:
        raise ConfigError(f"no trial files under {root}")
    trials = [data_mod.load_trial(p) for p in paths]
    pre = PreprocessConfig(
        target_fs=args.target_fs,
        baseline_seconds=args.baseline,
        log_power=args.log_power,
    )
    pre.validate()
    samples = data_mod.build_samples(trials, task=args.task, preprocess=pre)
    if not samples:
        raise ConfigError("preprocessing produced no samples (all trials discarded?)")
    data_mod.save_samples(args.out, samples)
    labels = [s.label for s in samples]
    print(
        f"wrote {len(samples)} samples ({labels.count(1)} high / {labels.count(0)} low) "
        f"to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    samples = _load_samples_arg(args.data)
    x, y = data_mod.stack_samples(samples)
    model_cfg = _model_config(args)
    train_cfg = _train_config(args)
    model = STILN(model_cfg, seed=train_cfg.seed)
    losses = train_model(
        model, x, y, train_cfg,
        progress=(lambda step, v: print(f"step {step}: loss {v:.4f}"))
        if args.verbose else None,
    )
    result = evaluate(model, x, y)
    print(
        f"final loss {losses[-1]:.4f}; training-set accuracy {result['accuracy']:.4f} "
        f"f1 {result['f1']:.4f}"
    )
    if args.checkpoint:
        _ensure_parent(args.checkpoint)
        save_checkpoint(args.checkpoint, model.state())
        print(f"checkpoint written to {args.checkpoint}")
    if args.report:
        payload = json.dumps(
            {
                "model_config": json.loads(model_cfg.to_json()),
                "train_config": {
                    "lr": train_cfg.lr,
                    "batch_size": train_cfg.batch_size,
                    "epochs": train_cfg.epochs,
                    "seed": train_cfg.seed,
                },
                "losses": losses,
                "train_metrics": result,
            },
            sort_keys=True,
            indent=2,
        ) + "\n"
        _write_report(args.report, payload)
    return 0


def cmd_loocv(args) -> int:
    samples = _load_samples_arg(args.data)
    report = run_loocv(
        samples,
        _model_config(args),
        _train_config(args),
        task=args.task,
        progress=print if args.verbose else None,
    )
    s = report.summary()
    print(f"accuracy {s['accuracy']}  f1 {s['f1']}  over {s['folds']} folds")
    _write_report(args.report, report.to_json())
    return 0


def cmd_sweep(args) -> int:
    samples = _load_samples_arg(args.data)
    values = [v for v in args.values.split(",") if v]
    result = run_sweep(
        samples,
        _model_config(args),
        _train_config(args),
        parameter=args.param,
        values=values,
        task=args.task,
        progress=print if args.verbose else None,
    )
    print(result["table"])
    _write_report(args.report, json.dumps(result, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_ablate(args) -> int:
    samples = _load_samples_arg(args.data)
    variants = args.variants.split(",") if args.variants else None
    result = run_ablation(
        samples,
        _model_config(args),
        _train_config(args),
        variants=variants,
        task=args.task,
        progress=print if args.verbose else None,
    )
    print(result["table"])
    _write_report(args.report, json.dumps(result, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_describe(args) -> int:
    print(describe(_model_config(args)))
    return 0


def cmd_export_topo(args) -> int:
    trial = data_mod.load_trial(args.trial)
    powers = preprocess_trial(trial.data, trial.fs, PreprocessConfig())
    w, s = args.window, args.subsegment
    if not 0 <= w < powers.shape[0] or not 0 <= s < powers.shape[1]:
        raise ConfigError(
            f"window/subsegment ({w}, {s}) outside available "
            f"({powers.shape[0]}, {powers.shape[1]})"
        )
    op = MapOperator()
    frames = op(np.moveaxis(powers[w, s], 0, 1))  # (bands, 32, 32)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    writer = write_png if args.format == "png" else write_pgm
    for bi, band in enumerate(BAND_NAMES):
        path = out / f"s{trial.subject:02d}_t{trial.trial:02d}_w{w}_{band}.{args.format}"
        writer(path, frames[bi])
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stiln",
        description="EEG emotion recognition over topographic band-power maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw-trial corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--fs", type=float, default=128.0)
    p.add_argument("--seconds", type=float, default=63.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="trials -> labeled frame-stack cache")
    p.add_argument("--trials", required=True, help="directory of trial files")
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="valence", choices=data_mod.TASKS)
    p.add_argument("--target-fs", type=float, default=128.0)
    p.add_argument("--baseline", type=float, default=3.0)
    p.add_argument("--log-power", action="store_true")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="fit one model on every sample (no split)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--report")
    p.add_argument("--verbose", action="store_true")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("loocv", help="leave-one-subject-out evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--task", default="valence", choices=data_mod.TASKS)
    p.add_argument("--report")
    p.add_argument("--verbose", action="store_true")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(fn=cmd_loocv)

    p = sub.add_parser("sweep", help="repeat loocv across one knob")
    p.add_argument("--data", required=True)
    p.add_argument("--param", required=True, choices=("hidden", "lr"))
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--task", default="valence", choices=data_mod.TASKS)
    p.add_argument("--report")
    p.add_argument("--verbose", action="store_true")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="repeat loocv across network variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", help="comma separated subset (default all)")
    p.add_argument("--task", default="valence", choices=data_mod.TASKS)
    p.add_argument("--report")
    p.add_argument("--verbose", action="store_true")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("describe", help="print the layer/parameter table")
    _add_model_args(p)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("export-topo", help="render one window's band maps")
    p.add_argument("--trial", required=True, help="a trial file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--subsegment", type=int, default=0)
    p.add_argument("--format", default="pgm", choices=("pgm", "png"))
    p.set_defaults(fn=cmd_export_topo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (StilnError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
