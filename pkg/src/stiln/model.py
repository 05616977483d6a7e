"""The spatial-temporal network: config, attention blocks, full model.

Input is a batch of samples shaped (B, frames, size, size, bands); frames
unroll into the batch axis for the convolutional trunk, re-group for the
recurrent half, and the two feature streams concatenate into a small fully
connected head with per-class sigmoid outputs.

Ablation variants:
    NET0  full model
    NET1  convolutional attention (channel + spatial gates) removed
    NET2  early instance norms replaced with batch norm
    NET3  residual fusion replaced with a plain conv block
    NET4  squeeze-excitation gate removed
    NET5  bidirectional recurrence reduced to a single direction
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    BatchNormLayer,
    Conv1dLayer,
    Conv2dLayer,
    DenseLayer,
    InstanceNormLayer,
    LstmLayer,
    kaiming_uniform,
    zeros_param,
)
from .ops import conv2d, pool2d
from .tensor import (
    Tensor,
    concat,
    matmul,
    mul,
    narrow,
    reduce_max,
    reduce_mean,
    relu,
    reshape,
    sigmoid,
)

VARIANTS: dict[str, str] = {
    "NET0": "full model",
    "NET1": "without convolutional attention",
    "NET2": "instance norm replaced with batch norm",
    "NET3": "residual fusion replaced with plain conv",
    "NET4": "without squeeze-excitation",
    "NET5": "single-direction recurrence",
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "NET0"
    input_size: int = 32
    in_channels: int = 5
    frames: int = 6
    conv_widths: tuple[int, int, int, int, int] = (32, 64, 64, 64, 64)
    cbam_ratio: int = 1
    cbam_kernel: int = 7
    se_ratio: int = 4
    lstm_hidden: int = 64
    fc_hidden: int = 128
    head_stride: int = 48
    n_classes: int = 2

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}"
            )
        if len(self.conv_widths) != 5 or any(w < 1 for w in self.conv_widths):
            raise ConfigError(f"conv_widths needs 5 positive entries, got {self.conv_widths}")
        if self.input_size < 4 or self.input_size % 4:
            raise ConfigError(
                f"input_size must be a positive multiple of 4 (two 2x2 pools), got {self.input_size}"
            )
        if self.in_channels < 1 or self.frames < 1 or self.n_classes < 1:
            raise ConfigError("in_channels, frames and n_classes must be positive")
        if self.variant != "NET1":
            if self.cbam_ratio < 1 or self.in_channels % self.cbam_ratio:
                raise ConfigError(
                    f"channel-attention ratio {self.cbam_ratio} must divide "
                    f"in_channels {self.in_channels}"
                )
            if self.cbam_kernel < 1 or self.cbam_kernel % 2 == 0:
                raise ConfigError(f"cbam_kernel must be odd, got {self.cbam_kernel}")
        if self.variant != "NET4":
            if self.se_ratio < 1 or self.conv_widths[4] % self.se_ratio:
                raise ConfigError(
                    f"se_ratio {self.se_ratio} must divide conv width {self.conv_widths[4]}"
                )
        if self.lstm_hidden < 1 or self.fc_hidden < 1 or self.head_stride < 1:
            raise ConfigError("lstm_hidden, fc_hidden and head_stride must be positive")

    # derived dimensions
    @property
    def feat_size(self) -> int:
        return self.input_size // 4

    @property
    def feat_dim(self) -> int:
        return self.feat_size * self.feat_size * self.conv_widths[4]

    @property
    def spatial_dim(self) -> int:
        return self.frames * self.feat_dim

    @property
    def head_width(self) -> int:
        return (self.spatial_dim - 1) // self.head_stride + 1

    @property
    def temporal_dim(self) -> int:
        per_step = self.lstm_hidden if self.variant == "NET5" else 2 * self.lstm_hidden
        return self.frames * per_step

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["conv_widths"] = tuple(raw["conv_widths"])
        cfg = cls(**raw)
        cfg.validate()
        return cfg


def ablation_config(variant: str, base: ModelConfig | None = None) -> ModelConfig:
    """The same architecture with one component switched off."""
    base = base or ModelConfig()
    cfg = dataclasses.replace(base, variant=variant)
    cfg.validate()
    return cfg


class ChannelGate:
    """Per-channel gate from global average and max summaries pushed through
    a shared two-layer MLP; the two paths add before the sigmoid."""

    def __init__(self, rng, c: int, ratio: int, dtype=np.float32) -> None:
        hidden = c // ratio
        self.w1 = kaiming_uniform(rng, (c, hidden), c, dtype)
        self.b1 = zeros_param(hidden, dtype)
        self.w2 = kaiming_uniform(rng, (hidden, c), hidden, dtype)
        self.b2 = zeros_param(c, dtype)
        self.c = c

    def __call__(self, x: Tensor) -> Tensor:
        bsz = x.shape[0]

        def mlp(v: Tensor) -> Tensor:
            flat = reshape(v, (bsz, self.c))
            h = relu(matmul(flat, self.w1) + self.b1)
            return matmul(h, self.w2) + self.b2

        avg = reduce_mean(x, axis=(1, 2), keepdims=True)
        mx = reduce_max(x, axis=(1, 2), keepdims=True)
        gate = sigmoid(mlp(avg) + mlp(mx))
        return mul(x, reshape(gate, (bsz, 1, 1, self.c)))

    def params(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


class SpatialGate:
    """Per-pixel gate from channel-mean and channel-max maps through one
    wide convolution."""

    def __init__(self, rng, k: int, dtype=np.float32) -> None:
        self.k = k
        self.w = kaiming_uniform(rng, (k, k, 2, 1), k * k * 2, dtype)
        self.b = zeros_param(1, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        avg = reduce_mean(x, axis=3, keepdims=True)
        mx = reduce_max(x, axis=3, keepdims=True)
        m = concat([avg, mx], axis=3)
        gate = sigmoid(conv2d(m, self.w, self.b, padding=self.k // 2))
        return mul(x, gate)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class SqueezeExcite:
    """Channel re-weighting from globally averaged features through a
    bias-free bottleneck MLP."""

    def __init__(self, rng, c: int, ratio: int, dtype=np.float32) -> None:
        hidden = c // ratio
        self.w1 = kaiming_uniform(rng, (c, hidden), c, dtype)
        self.w2 = kaiming_uniform(rng, (hidden, c), hidden, dtype)
        self.c = c

    def __call__(self, x: Tensor) -> Tensor:
        bsz = x.shape[0]
        s = reshape(reduce_mean(x, axis=(1, 2), keepdims=True), (bsz, self.c))
        e = sigmoid(matmul(relu(matmul(s, self.w1)), self.w2))
        return mul(x, reshape(e, (bsz, 1, 1, self.c)))

    def params(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "w2": self.w2}


def bilstm(
    frames: list[Tensor], forward_cell: LstmLayer, backward_cell: LstmLayer | None
) -> Tensor:
    """Run the frame sequence through one or two recurrent directions and
    concatenate every step's output into (B, frames * width)."""
    if not frames:
        raise ShapeError("bilstm needs a non-empty frame sequence")
    bsz = frames[0].shape[0]
    dtype = frames[0].dtype
    h, c = forward_cell.initial_state(bsz, dtype)
    fwd = []
    for x in frames:
        h, c = forward_cell.step(x, h, c)
        fwd.append(h)
    if backward_cell is None:
        return concat(fwd, axis=1)
    h, c = backward_cell.initial_state(bsz, dtype)
    bwd: list[Tensor | None] = [None] * len(frames)
    for t in range(len(frames) - 1, -1, -1):
        h, c = backward_cell.step(frames[t], h, c)
        bwd[t] = h
    steps = [concat([fwd[t], bwd[t]], axis=1) for t in range(len(frames))]
    return concat(steps, axis=1)


class STILN:
    """Spatial-temporal network over topographic band-power frame stacks."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32) -> None:
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        cfg = config
        w = cfg.conv_widths
        self.use_cbam = cfg.variant != "NET1"
        self.early_batchnorm = cfg.variant == "NET2"
        self.residual_fusion = cfg.variant != "NET3"
        self.use_se = cfg.variant != "NET4"
        self.bidirectional = cfg.variant != "NET5"

        self.channel_gate = (
            ChannelGate(rng, cfg.in_channels, cfg.cbam_ratio, dtype) if self.use_cbam else None
        )
        self.spatial_gate = SpatialGate(rng, cfg.cbam_kernel, dtype) if self.use_cbam else None
        self.conv1 = Conv2dLayer(rng, cfg.in_channels, w[0], 5, padding=2, dtype=dtype)
        self.norm1 = BatchNormLayer(w[0], dtype=dtype) if self.early_batchnorm else InstanceNormLayer(w[0], dtype=dtype)
        self.conv2 = Conv2dLayer(rng, w[0], w[1], 5, padding=2, dtype=dtype)
        self.norm2 = BatchNormLayer(w[1], dtype=dtype) if self.early_batchnorm else InstanceNormLayer(w[1], dtype=dtype)
        self.conv3 = Conv2dLayer(rng, w[1], w[2], 3, padding=1, dtype=dtype)
        self.norm3 = BatchNormLayer(w[2], dtype=dtype)
        self.conv4 = Conv2dLayer(rng, w[2], w[3], 3, padding=1, dtype=dtype)
        self.norm4 = BatchNormLayer(w[3], dtype=dtype)
        self.conv5 = Conv2dLayer(rng, w[3], w[4], 3, padding=1, dtype=dtype)
        self.norm5 = BatchNormLayer(w[4], dtype=dtype)
        self.fusion = Conv2dLayer(rng, w[4], w[4], 3, padding=1, dtype=dtype)
        self.se = SqueezeExcite(rng, w[4], cfg.se_ratio, dtype) if self.use_se else None
        self.lstm_f = LstmLayer(rng, cfg.feat_dim, cfg.lstm_hidden, dtype)
        self.lstm_b = LstmLayer(rng, cfg.feat_dim, cfg.lstm_hidden, dtype) if self.bidirectional else None
        self.head_conv = Conv1dLayer(rng, cfg.head_stride, dtype)
        self.fc1 = DenseLayer(rng, cfg.head_width + cfg.temporal_dim, cfg.fc_hidden, dtype=dtype)
        self.fc2 = DenseLayer(rng, cfg.fc_hidden, cfg.n_classes, dtype=dtype)

        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}
        named = [
            ("channel_gate", self.channel_gate),
            ("spatial_gate", self.spatial_gate),
            ("conv1", self.conv1), ("norm1", self.norm1),
            ("conv2", self.conv2), ("norm2", self.norm2),
            ("conv3", self.conv3), ("norm3", self.norm3),
            ("conv4", self.conv4), ("norm4", self.norm4),
            ("conv5", self.conv5), ("norm5", self.norm5),
            ("fusion", self.fusion), ("se", self.se),
            ("lstm_f", self.lstm_f), ("lstm_b", self.lstm_b),
            ("head_conv", self.head_conv), ("fc1", self.fc1), ("fc2", self.fc2),
        ]
        for prefix, layer in named:
            if layer is None:
                continue
            for key, p in layer.params().items():
                self.params[f"{prefix}.{key}"] = p
            if hasattr(layer, "buffers"):
                for key, buft in layer.buffers().items():
                    self.buffers[f"{prefix}.{key}"] = buft

    def state(self) -> dict[str, Tensor]:
        """Trainable parameters plus norm running statistics, in layer order."""
        return {**self.params, **self.buffers}

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def _trunk(self, y: Tensor, training: bool) -> Tensor:
        if self.use_cbam:
            y = self.channel_gate(y)
            y = self.spatial_gate(y)
        y = relu(self.norm1(self.conv1(y), training))
        y = relu(self.norm2(self.conv2(y), training))
        y = pool2d(y, 2, "max")
        y = relu(self.norm3(self.conv3(y), training))
        y = relu(self.norm4(self.conv4(y), training))
        y = pool2d(y, 2, "max")
        y = relu(self.norm5(self.conv5(y), training))
        if self.residual_fusion:
            y = relu(y + self.fusion(y))
        else:
            y = relu(self.fusion(y))
        if self.use_se:
            y = self.se(y)
        return y

    def forward(self, x, training: bool = False) -> Tensor:
        """(B, frames, size, size, bands) -> (B, n_classes) sigmoid scores."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        expect = (cfg.frames, cfg.input_size, cfg.input_size, cfg.in_channels)
        if x.data.ndim != 5 or x.shape[1:] != expect:
            raise ShapeError(
                f"forward expects (B, {expect[0]}, {expect[1]}, {expect[2]}, "
                f"{expect[3]}), got {x.shape}"
            )
        bsz = x.shape[0]
        merged = reshape(x, (bsz * cfg.frames,) + expect[1:])
        feat = self._trunk(merged, training)
        flat = reshape(feat, (bsz * cfg.frames, cfg.feat_dim))
        seq = reshape(flat, (bsz, cfg.frames, cfg.feat_dim))
        spatial = reshape(flat, (bsz, cfg.spatial_dim))
        head_spatial = relu(self.head_conv(spatial))
        frames = [
            reshape(narrow(seq, 1, t, 1), (bsz, cfg.feat_dim)) for t in range(cfg.frames)
        ]
        temporal = bilstm(frames, self.lstm_f, self.lstm_b)
        merged_head = concat([head_spatial, temporal], axis=1)
        hidden = relu(self.fc1(merged_head))
        return sigmoid(self.fc2(hidden))

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Class indices via argmax over the per-class scores."""
        return self.forward(x, training=False).data.argmax(axis=1)


def describe(config: ModelConfig) -> str:
    """Human-readable layer table with parameter counts."""
    config.validate()
    model = STILN(config, seed=0)
    lines = [
        f"variant {config.variant}: {VARIANTS[config.variant]}",
        f"input (frames={config.frames}, {config.input_size}x{config.input_size}, "
        f"bands={config.in_channels})",
        "",
        f"{'parameter':<28}{'shape':<20}{'count':>10}",
    ]
    total = 0
    for name, p in model.params.items():
        shape = "x".join(str(s) for s in p.shape) or "1"
        lines.append(f"{name:<28}{shape:<20}{p.size:>10}")
        total += p.size
    lines.append(f"{'total':<48}{total:>10}")
    lines.append("")
    lines.append(
        f"feature map {config.feat_size}x{config.feat_size}x{config.conv_widths[4]}"
        f" -> spatial head {config.head_width}, temporal {config.temporal_dim},"
        f" fc {config.fc_hidden} -> {config.n_classes} classes"
    )
    return "\n".join(lines)
