"""Adam optimizer and flat-buffer checkpoint I/O.

Checkpoint layout: one UTF-8 JSON header line, then a newline, then every
parameter concatenated as little-endian float32. The header's ``index`` maps
parameter name to ``[offset, shape]`` where ``offset`` counts float32
elements into the flat buffer. Writing the same parameters twice produces
byte-identical files.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor

_MAGIC = "stiln-checkpoint"


class Adam:
    """Adam with bias correction. Moment state and update math run in
    float64; the updated value is cast back to each parameter's dtype, so
    float64 parameters step exactly like a scalar float64 reference."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam needs at least one parameter")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError("Adam.step: parameter has no gradient buffer")
            g = p.grad.astype(np.float64, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.epsilon)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def save_checkpoint(path, params: Mapping[str, Tensor]) -> None:
    index: dict[str, list] = {}
    chunks: list[np.ndarray] = []
    offset = 0
    for name, p in params.items():
        arr = np.asarray(p.data, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        index[name] = [offset, list(arr.shape)]
        chunks.append(np.ascontiguousarray(arr).reshape(-1))
        offset += arr.size
    header = json.dumps(
        {"format": _MAGIC, "version": 1, "dtype": "<f4", "index": index}
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for chunk in chunks:
            fh.write(chunk.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContractError(f"{path}: not a checkpoint file") from e
    if header.get("format") != _MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    flat = np.frombuffer(blob, dtype="<f4")
    out: dict[str, np.ndarray] = {}
    for name, (offset, shape) in header["index"].items():
        size = int(np.prod(shape)) if shape else 1
        if offset + size > flat.size:
            raise ContractError(f"{path}: truncated buffer for {name!r}")
        out[name] = flat[offset : offset + size].reshape(shape).copy()
    return out


def load_state(params: Mapping[str, Tensor], path) -> None:
    """Copy checkpoint values into existing parameter tensors in place."""
    state = load_checkpoint(path)
    missing = set(params) - set(state)
    extra = set(state) - set(params)
    if missing or extra:
        raise ContractError(
            f"checkpoint does not match model: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}"
        )
    for name, p in params.items():
        arr = state[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise ShapeError(
                f"checkpoint {name!r} has shape {arr.shape}, model expects {p.shape}"
            )
        p.data[...] = arr.astype(p.data.dtype)
