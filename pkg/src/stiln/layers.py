"""Parameterized layers: weight init plus thin wrappers over the ops.

Every layer draws its weights from the generator passed in, in a fixed
order, so a model built twice from the same seed is bit-identical. Batch
norm running statistics live in non-trainable tensors so they ride along in
checkpoints.
"""

from __future__ import annotations

import numpy as np

from .ops import conv1d, conv2d, dense, lstm_cell, norm_batch, norm_instance
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


class Conv2dLayer:
    def __init__(self, rng, cin: int, cout: int, k: int, padding: int = 0,
                 stride: int = 1, dtype=np.float32) -> None:
        self.stride = stride
        self.padding = padding
        self.w = kaiming_uniform(rng, (k, k, cin, cout), k * k * cin, dtype)
        self.b = zeros_param(cout, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class DenseLayer:
    def __init__(self, rng, din: int, dout: int, bias: bool = True, dtype=np.float32) -> None:
        self.w = kaiming_uniform(rng, (din, dout), din, dtype)
        self.b = zeros_param(dout, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)

    def params(self) -> dict[str, Tensor]:
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        return out


class BatchNormLayer:
    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32) -> None:
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c), requires_grad=True, dtype=dtype)
        self.beta = zeros_param(c, dtype)
        self.running_mean = Tensor(np.zeros(c), dtype=dtype)
        self.running_var = Tensor(np.ones(c), dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return norm_batch(
            x, self.gamma, self.beta,
            self.running_mean.data, self.running_var.data,
            training=training, momentum=self.momentum, eps=self.eps,
        )

    def params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, Tensor]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class InstanceNormLayer:
    def __init__(self, c: int, eps: float = 1e-5, dtype=np.float32) -> None:
        self.eps = eps
        self.gamma = Tensor(np.ones(c), requires_grad=True, dtype=dtype)
        self.beta = zeros_param(c, dtype)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return norm_instance(x, self.gamma, self.beta, eps=self.eps)

    def params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, Tensor]:
        return {}


class LstmLayer:
    """Single-direction recurrent cell; gate layout [input, forget, cell,
    output] with the forget bias lifted to +1 so memory survives early
    training."""

    def __init__(self, rng, din: int, d: int, dtype=np.float32) -> None:
        self.d = d
        bound = 1.0 / float(np.sqrt(d))
        self.wx = Tensor(rng.uniform(-bound, bound, (din, 4 * d)), requires_grad=True, dtype=dtype)
        self.wh = Tensor(rng.uniform(-bound, bound, (d, 4 * d)), requires_grad=True, dtype=dtype)
        b = np.zeros(4 * d)
        b[d : 2 * d] = 1.0
        self.b = Tensor(b, requires_grad=True, dtype=dtype)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_cell(x, h, c, self.wx, self.wh, self.b)

    def initial_state(self, batch: int, dtype=np.float32) -> tuple[Tensor, Tensor]:
        return (
            Tensor(np.zeros((batch, self.d)), dtype=dtype),
            Tensor(np.zeros((batch, self.d)), dtype=dtype),
        )

    def params(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


class Conv1dLayer:
    """Single-scalar strided kernel; the weight starts near +1 because its
    inputs are post-ReLU non-negative and a negative start would park the
    whole branch behind a dead ReLU."""

    def __init__(self, rng, stride: int, dtype=np.float32) -> None:
        self.stride = stride
        self.w = Tensor(rng.uniform(0.9, 1.1, (1,)), requires_grad=True, dtype=dtype)
        self.b = zeros_param((1,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.w, self.b, stride=self.stride)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}
