"""Labels, cross-validation splits, synthetic EEG, and dataset assembly.

Trials carry 32-channel raw signals plus continuous 1-9 affect ratings.
Ratings below the midpoint map to "low" (0), above it to "high" (1), and
exactly 5 is discarded. Evaluation splits are leave-one-subject-out: every
subject takes one turn as the held-out test set.

The synthetic generator writes class structure into band space: high-class
trials push beta everywhere and gamma frontally while damping alpha; low
ones push alpha posteriorly and damp beta/gamma. Subject-level gain offsets
and per-trial jitter keep the folds from being trivially separable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .signal import BAND_NAMES, PreprocessConfig, preprocess_trial
from .topomap import CHANNEL_NAMES, MapOperator, N_CHANNELS

LOW, HIGH = 0, 1

RATING_MIN, RATING_MID, RATING_MAX = 1.0, 5.0, 9.0

TASKS = ("valence", "arousal")


def map_label(score: float) -> int | None:
    """1-9 rating -> 0 (low), 1 (high), or None for the discarded midpoint."""
    score = float(score)
    if not np.isfinite(score) or not RATING_MIN <= score <= RATING_MAX:
        raise ConfigError(f"rating must lie in [{RATING_MIN}, {RATING_MAX}], got {score}")
    if score < RATING_MID:
        return LOW
    if score > RATING_MID:
        return HIGH
    return None


@dataclass(frozen=True)
class SplitPlan:
    """Ordered leave-one-subject-out folds: (held-out subject, training
    subjects)."""

    folds: tuple[tuple[int, tuple[int, ...]], ...]

    def __len__(self) -> int:
        return len(self.folds)


def loocv_split(subjects: Sequence[int]) -> SplitPlan:
    subjects = [int(s) for s in subjects]
    if len(subjects) < 2:
        raise ConfigError(f"leave-one-out needs at least 2 subjects, got {len(subjects)}")
    if len(set(subjects)) != len(subjects):
        raise ConfigError(f"duplicate subject ids in {subjects}")
    folds = tuple(
        (held, tuple(s for s in subjects if s != held)) for held in subjects
    )
    return SplitPlan(folds)


# ---------------------------------------------------------------------------
# synthetic EEG


@dataclass(frozen=True)
class SynthSpec:
    subjects: int = 2
    trials_per_subject: int = 4
    fs: float = 128.0
    seconds: float = 63.0
    noise: float = 0.3
    subject_sigma: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.subjects < 1 or self.trials_per_subject < 1:
            raise ConfigError("need at least one subject and one trial")
        if self.fs <= 0 or self.seconds <= 0:
            raise ConfigError("fs and seconds must be positive")
        if self.noise < 0 or self.subject_sigma < 0:
            raise ConfigError("noise and subject_sigma must be non-negative")


@dataclass
class RawTrial:
    subject: int
    trial: int
    fs: float
    ratings: dict[str, float]
    data: np.ndarray  # (32, n) float32


# two tones per band, comfortably inside each band's interval
_BAND_TONES = {
    "delta": (2.0, 3.0),
    "theta": (5.0, 6.5),
    "alpha": (9.0, 10.5),
    "beta": (14.0, 17.0),
    "gamma": (25.0, 35.0),
}

_FRONTAL = tuple(
    i for i, n in enumerate(CHANNEL_NAMES)
    if n.startswith(("Fp", "AF")) or (n.startswith("F") and not n.startswith("FC"))
)
_POSTERIOR = tuple(
    i for i, n in enumerate(CHANNEL_NAMES) if n.startswith(("P", "PO", "O"))
)


def _band_gains(label: int) -> dict[str, np.ndarray]:
    """Per-band channel gain vectors encoding the class signature."""
    gains = {name: np.ones(N_CHANNELS) for name in BAND_NAMES}
    if label == HIGH:
        gains["beta"] *= 3.0
        gains["gamma"][list(_FRONTAL)] *= 3.5
        gains["alpha"] *= 0.8
    else:
        gains["alpha"][list(_POSTERIOR)] *= 3.0
        gains["beta"] *= 0.8
        gains["gamma"] *= 0.8
    return gains


def synth_trial(spec: SynthSpec, subject: int, trial: int) -> RawTrial:
    """One deterministic trial; identical for any subset regeneration."""
    spec.validate()
    label = HIGH if trial % 2 else LOW
    rating = 8.0 if label == HIGH else 2.0
    subj_rng = np.random.default_rng([spec.seed, subject])
    subj_gain = {
        name: float(np.exp(spec.subject_sigma * subj_rng.standard_normal()))
        for name in BAND_NAMES
    }
    rng = np.random.default_rng([spec.seed, subject, trial])
    n = int(round(spec.seconds * spec.fs))
    t = np.arange(n) / spec.fs
    gains = _band_gains(label)
    x = np.zeros((N_CHANNELS, n))
    for name in BAND_NAMES:
        jitter = rng.uniform(0.9, 1.1)
        amp = 0.5 * subj_gain[name] * jitter
        for freq in _BAND_TONES[name]:
            phases = rng.uniform(0.0, 2.0 * np.pi, N_CHANNELS)
            x += (amp * gains[name])[:, None] * np.sin(
                2.0 * np.pi * freq * t[None, :] + phases[:, None]
            )
    if spec.noise > 0:
        x += spec.noise * rng.standard_normal((N_CHANNELS, n))
    return RawTrial(
        subject=subject,
        trial=trial,
        fs=spec.fs,
        ratings={"valence": rating, "arousal": rating},
        data=x.astype(np.float32),
    )


def synth_dataset(spec: SynthSpec) -> list[RawTrial]:
    spec.validate()
    return [
        synth_trial(spec, s, t)
        for s in range(spec.subjects)
        for t in range(spec.trials_per_subject)
    ]


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class LabeledSample:
    frames: np.ndarray  # (frames, 32, 32, bands) float32
    label: int
    subject: int
    trial: int


def build_samples(
    trials: Sequence[RawTrial],
    task: str = "valence",
    preprocess: PreprocessConfig | None = None,
    operator: MapOperator | None = None,
) -> list[LabeledSample]:
    """Preprocess trials into labeled frame stacks, one sample per analysis
    window. Trials whose rating sits exactly on the midpoint are dropped."""
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    operator = operator or MapOperator()
    out: list[LabeledSample] = []
    for tr in trials:
        label = map_label(tr.ratings[task])
        if label is None:
            continue
        powers = preprocess_trial(tr.data, tr.fs, preprocess)  # (W, S, C, B)
        frames = operator(np.moveaxis(powers, 2, 3))  # (W, S, B, 32, 32)
        frames = np.moveaxis(frames, 2, 4)  # (W, S, 32, 32, B)
        for wi in range(frames.shape[0]):
            out.append(
                LabeledSample(
                    frames=np.ascontiguousarray(frames[wi]),
                    label=label,
                    subject=tr.subject,
                    trial=tr.trial,
                )
            )
    return out


def split_by_subject(
    samples: Sequence[LabeledSample], held_out: int
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    train = [s for s in samples if s.subject != held_out]
    test = [s for s in samples if s.subject == held_out]
    if not test:
        raise ConfigError(f"no samples for held-out subject {held_out}")
    if not train:
        raise ConfigError(f"no training samples when holding out subject {held_out}")
    return train, test


def stack_samples(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """(N, frames, 32, 32, bands) float32 inputs and (N,) int labels."""
    if not samples:
        raise ShapeError("no samples to stack")
    x = np.stack([s.frames for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# file formats

_TRIAL_MAGIC = "stiln-trial"
_FRAMES_MAGIC = "stiln-frames"


def save_trial(path, trial: RawTrial) -> None:
    """One JSON header line, then the (32, n) signal as row-major little-
    endian float32."""
    data = np.ascontiguousarray(trial.data, dtype="<f4")
    if data.ndim != 2 or data.shape[0] != N_CHANNELS:
        raise ShapeError(f"trial data must be ({N_CHANNELS}, n), got {data.shape}")
    header = json.dumps(
        {
            "format": _TRIAL_MAGIC,
            "version": 1,
            "subject": trial.subject,
            "trial": trial.trial,
            "fs": trial.fs,
            "ratings": trial.ratings,
            "channels": list(CHANNEL_NAMES),
            "shape": list(data.shape),
            "dtype": "<f4",
        }
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        fh.write(data.tobytes())


def load_trial(path) -> RawTrial:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: not a trial file") from e
    if header.get("format") != _TRIAL_MAGIC:
        raise ConfigError(f"{path}: not a trial file")
    shape = tuple(header["shape"])
    data = np.frombuffer(blob, dtype="<f4")
    if data.size != shape[0] * shape[1]:
        raise ConfigError(
            f"{path}: payload holds {data.size} values, header promises {shape}"
        )
    return RawTrial(
        subject=int(header["subject"]),
        trial=int(header["trial"]),
        fs=float(header["fs"]),
        ratings={k: float(v) for k, v in header["ratings"].items()},
        data=data.reshape(shape).copy(),
    )


def save_samples(path, samples: Sequence[LabeledSample]) -> None:
    """Frame-stack cache: JSON header line plus concatenated little-endian
    float32 frame stacks."""
    if not samples:
        raise ShapeError("refusing to write an empty sample cache")
    shape = samples[0].frames.shape
    entries = []
    for s in samples:
        if s.frames.shape != shape:
            raise ShapeError(
                f"inconsistent frame shapes in cache: {s.frames.shape} vs {shape}"
            )
        entries.append({"label": int(s.label), "subject": int(s.subject), "trial": int(s.trial)})
    header = json.dumps(
        {
            "format": _FRAMES_MAGIC,
            "version": 1,
            "frame_shape": list(shape),
            "dtype": "<f4",
            "entries": entries,
        }
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for s in samples:
            fh.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())


def load_samples(path) -> list[LabeledSample]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: not a sample cache") from e
    if header.get("format") != _FRAMES_MAGIC:
        raise ConfigError(f"{path}: not a sample cache")
    shape = tuple(header["frame_shape"])
    per = int(np.prod(shape))
    flat = np.frombuffer(blob, dtype="<f4")
    entries = header["entries"]
    if flat.size != per * len(entries):
        raise ConfigError(f"{path}: payload size does not match the header")
    out = []
    for i, e in enumerate(entries):
        out.append(
            LabeledSample(
                frames=flat[i * per : (i + 1) * per].reshape(shape).copy(),
                label=int(e["label"]),
                subject=int(e["subject"]),
                trial=int(e["trial"]),
            )
        )
    return out
