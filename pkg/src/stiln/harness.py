"""Training, evaluation, leave-one-subject-out runs, sweeps, ablations.

Everything here is deterministic given its seeds: per-fold model and
shuffle seeds derive from the run seed and the held-out subject id, fold
results carry no timestamps, and reports serialize with sorted keys, so two
identical runs produce byte-identical JSON.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import (
    HIGH,
    LabeledSample,
    loocv_split,
    split_by_subject,
    stack_samples,
)
from .errors import ConfigError, TrainingDivergedError
from .model import STILN, ModelConfig, VARIANTS, ablation_config
from .ops import bce_loss
from .optim import Adam
from .tensor import Tape, Tensor, backward


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True
    max_steps: int | None = None
    target_loss: float | None = None

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive when set")
        if self.target_loss is not None and self.target_loss <= 0:
            raise ConfigError("target_loss must be positive when set")


def one_hot(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigError(f"labels outside [0, {n_classes}) in {np.unique(labels)}")
    return np.eye(n_classes, dtype=np.float32)[labels]


def _fold_seed(base_seed: int, subject: int, stream: int) -> int:
    return int(np.random.SeedSequence([base_seed, subject, stream]).generate_state(1)[0])


def train_model(
    model: STILN,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    progress: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Minibatch Adam on binary cross-entropy; returns per-step losses.

    Stops early once a step's loss falls below ``target_loss`` or after
    ``max_steps`` steps, whichever is configured and comes first.
    """
    cfg.validate()
    targets = one_hot(y, model.config.n_classes)
    opt = Adam(model.params.values(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    losses: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = Tensor(x[idx], dtype=model.dtype)
            tb = Tensor(targets[idx], dtype=model.dtype)
            opt.zero_grad()
            with Tape():
                loss = bce_loss(model.forward(xb, training=True), tb)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at step {step}")
            backward(loss)
            opt.step()
            losses.append(value)
            step += 1
            if progress is not None:
                progress(step, value)
            if cfg.target_loss is not None and value < cfg.target_loss:
                return losses
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return losses
    return losses


def evaluate(
    model: STILN, x: np.ndarray, y: np.ndarray, batch_size: int = 64
) -> dict:
    """Accuracy, F1 for the high class, mean loss, and the confusion matrix
    (rows true, columns predicted)."""
    y = np.asarray(y, dtype=np.int64)
    targets = one_hot(y, model.config.n_classes)
    n = x.shape[0]
    preds = np.empty(n, dtype=np.int64)
    total_loss = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = model.forward(Tensor(x[lo:hi], dtype=model.dtype), training=False)
        preds[lo:hi] = out.data.argmax(axis=1)
        chunk_loss = bce_loss(out, Tensor(targets[lo:hi], dtype=model.dtype)).item()
        total_loss += chunk_loss * (hi - lo)
    confusion = np.zeros((2, 2), dtype=np.int64)
    for t, p in zip(y, preds):
        confusion[t, p] += 1
    tp = int(confusion[HIGH, HIGH])
    fp = int(confusion[1 - HIGH, HIGH])
    fn = int(confusion[HIGH, 1 - HIGH])
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": float((preds == y).mean()),
        "f1": float(f1),
        "loss": float(total_loss / n),
        "confusion": confusion.tolist(),
        "n": int(n),
    }


def format_mean_std(values: Sequence[float]) -> str:
    """Population mean (std) with four decimals, e.g. '0.6831 (0.1124)'."""
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.4f} ({arr.std():.4f})"


@dataclass
class EvalReport:
    """One cross-validation run; serializes deterministically."""

    task: str
    variant: str
    model_config: dict
    train_config: dict
    folds: list[dict]
    split: list[list]

    @property
    def accuracies(self) -> list[float]:
        return [f["accuracy"] for f in self.folds]

    @property
    def f1_scores(self) -> list[float]:
        return [f["f1"] for f in self.folds]

    def summary(self) -> dict:
        acc = np.asarray(self.accuracies)
        f1 = np.asarray(self.f1_scores)
        return {
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "accuracy": format_mean_std(acc),
            "f1_mean": float(f1.mean()),
            "f1_std": float(f1.std()),
            "f1": format_mean_std(f1),
            "folds": len(self.folds),
        }

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "split": self.split,
            "folds": self.folds,
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_loocv(
    samples: Sequence[LabeledSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    task: str = "valence",
    progress: Callable[[str], None] | None = None,
) -> EvalReport:
    """Leave-one-subject-out evaluation. Every fold builds a fresh model
    from a seed derived from (run seed, held-out subject)."""
    model_cfg.validate()
    train_cfg.validate()
    subjects = sorted({s.subject for s in samples})
    plan = loocv_split(subjects)
    folds: list[dict] = []
    for held, _train_subjects in plan.folds:
        train, test = split_by_subject(samples, held)
        x_tr, y_tr = stack_samples(train)
        x_te, y_te = stack_samples(test)
        model = STILN(model_cfg, seed=_fold_seed(train_cfg.seed, held, 0))
        fold_train = dataclasses.replace(train_cfg, seed=_fold_seed(train_cfg.seed, held, 1))
        losses = train_model(model, x_tr, y_tr, fold_train)
        result = evaluate(model, x_te, y_te)
        result.update(
            subject=int(held),
            train_samples=int(x_tr.shape[0]),
            final_train_loss=float(losses[-1]) if losses else None,
        )
        folds.append(result)
        if progress is not None:
            progress(
                f"fold subject={held}: accuracy={result['accuracy']:.4f} "
                f"f1={result['f1']:.4f} n={result['n']}"
            )
    return EvalReport(
        task=task,
        variant=model_cfg.variant,
        model_config=dataclasses.asdict(model_cfg),
        train_config=dataclasses.asdict(train_cfg),
        folds=folds,
        split=[[held, list(tr)] for held, tr in plan.folds],
    )


def run_sweep(
    samples: Sequence[LabeledSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    parameter: str,
    values: Sequence,
    task: str = "valence",
    progress: Callable[[str], None] | None = None,
) -> dict:
    """Re-run the cross-validation for each value of one knob.

    ``parameter`` is either ``hidden`` (recurrent width) or ``lr``.
    """
    if parameter not in ("hidden", "lr"):
        raise ConfigError(f"sweep parameter must be 'hidden' or 'lr', got {parameter!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    runs = {}
    for v in values:
        if parameter == "hidden":
            mc = dataclasses.replace(model_cfg, lstm_hidden=int(v))
            tc = train_cfg
            key = str(int(v))
        else:
            mc = model_cfg
            tc = dataclasses.replace(train_cfg, lr=float(v))
            key = format(float(v), "g")
        if progress is not None:
            progress(f"sweep {parameter}={key}")
        runs[key] = run_loocv(samples, mc, tc, task=task, progress=progress)
    return {
        "parameter": parameter,
        "task": task,
        "runs": {k: r.to_dict() for k, r in runs.items()},
        "table": sweep_table(parameter, runs),
    }


def sweep_table(parameter: str, runs: dict[str, EvalReport]) -> str:
    """Markdown table with 'mean (std)' cells, one row per swept value."""
    lines = [
        f"| {parameter} | accuracy | f1 |",
        "| --- | --- | --- |",
    ]
    for key, report in runs.items():
        s = report.summary()
        lines.append(f"| {key} | {s['accuracy']} | {s['f1']} |")
    return "\n".join(lines)


def run_ablation(
    samples: Sequence[LabeledSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variants: Sequence[str] | None = None,
    task: str = "valence",
    progress: Callable[[str], None] | None = None,
) -> dict:
    """Cross-validate each network variant from the same base config."""
    variants = tuple(variants) if variants else tuple(VARIANTS)
    runs: dict[str, EvalReport] = {}
    for v in variants:
        cfg = ablation_config(v, model_cfg)
        if progress is not None:
            progress(f"ablation {v}: {VARIANTS[v]}")
        runs[v] = run_loocv(samples, cfg, train_cfg, task=task, progress=progress)
    return {
        "task": task,
        "variants": {v: VARIANTS[v] for v in variants},
        "runs": {v: r.to_dict() for v, r in runs.items()},
        "table": ablation_table(runs),
    }


def ablation_table(runs: dict[str, EvalReport]) -> str:
    """Markdown table with 'mean (std)' cells, one row per variant."""
    lines = [
        "| variant | accuracy | f1 | description |",
        "| --- | --- | --- | --- |",
    ]
    for v, report in runs.items():
        s = report.summary()
        lines.append(f"| {v} | {s['accuracy']} | {s['f1']} | {VARIANTS.get(v, '')} |")
    return "\n".join(lines)
