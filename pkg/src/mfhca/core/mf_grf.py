"""Multi-Spatial Fusion encoder built from Global Receptive Field blocks.

Shapes follow the N×C×H×W convention with H the time axis and W the
frequency axis of the spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module, ModuleList
from .ops import (
    avg_pool2d,
    bilinear_upsample,
    concat,
    max_pool2d,
    same_padding,
    sigmoid,
    split,
    swish,
)

RATIO_GRID = (2, 4, 8, 16)


@dataclass(frozen=True)
class GrfConfig:
    """One GRF block. ``ratio`` is the pooling denominator, i.e. r = 1/ratio."""

    channels: int
    reduction: int = 8
    ratio: int = 4
    min_reduced: int = 8

    @property
    def reduced_channels(self) -> int:
        return max(self.min_reduced, self.channels // self.reduction, 1)


@dataclass(frozen=True)
class MfConfig:
    grf_channels: tuple[int, ...] = (16, 32, 48)
    time_kernel: tuple[int, int] = (10, 2)
    freq_kernel: tuple[int, int] = (2, 8)
    ratio: int = 4
    reduction: int = 8
    min_reduced: int = 8
    pool: tuple[int, int] = (2, 2)

    def __post_init__(self) -> None:
        if not self.grf_channels:
            raise ConfigError("grf_channels must name at least one block")
        if any(c < 1 for c in self.grf_channels):
            raise ConfigError(f"grf_channels must be positive, got {list(self.grf_channels)}")
        if self.grf_channels[0] % 2:
            raise ConfigError(
                f"first GRF width {self.grf_channels[0]} must be even: it is the sum of the "
                "two parallel convolution outputs"
            )
        if self.ratio < 1:
            raise ConfigError(f"ratio must be >= 1, got {self.ratio}")

    @property
    def branch_channels(self) -> int:
        return self.grf_channels[0] // 2

    @property
    def out_channels(self) -> int:
        return self.grf_channels[-1]

    def block(self, channels: int) -> GrfConfig:
        return GrfConfig(channels, self.reduction, self.ratio, self.min_reduced)

    def stage_shapes(self, frames: int, bins: int) -> list[tuple[int, int]]:
        """Spatial size entering each GRF block for a frames×bins spectrogram."""
        h, w = frames // self.pool[0], bins // self.pool[1]
        shapes = [(h, w)]
        for _ in self.grf_channels[1:]:
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            shapes.append((h, w))
        return shapes

    def output_shape(self, frames: int, bins: int) -> tuple[int, int, int]:
        h, w = self.stage_shapes(frames, bins)[-1]
        return (self.out_channels, h, w)

    def validate_input(self, frames: int, bins: int) -> None:
        kt, kf = self.time_kernel, self.freq_kernel
        if frames < max(kt[0], kf[0]) or bins < max(kt[1], kf[1]):
            raise ConfigError(
                f"spectrogram {frames}x{bins} is smaller than the parallel kernels {kt} and {kf}"
            )
        for h, w in self.stage_shapes(frames, bins):
            if h < 1 or w < 1 or h // self.ratio < 1 or w // self.ratio < 1:
                raise ConfigError(
                    f"GRF input {h}x{w} pooled by 1/{self.ratio} is empty; "
                    "use a smaller ratio or a longer segment"
                )


class ParallelConv(Module):
    """Time-direction and frequency-direction convolutions, concatenated, then pooled."""

    def __init__(self, config: MfConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        c = config.branch_channels
        self.time_conv = Conv2d(
            1, c, config.time_kernel, rng, padding=same_padding(config.time_kernel)
        )
        self.freq_conv = Conv2d(
            1, c, config.freq_kernel, rng, padding=same_padding(config.freq_kernel)
        )

    def forward(self, spec: Tensor) -> Tensor:
        _, _, t, f = spec.shape
        kt, kf = self.config.time_kernel, self.config.freq_kernel
        if t < max(kt[0], kf[0]) or f < max(kt[1], kf[1]):
            raise ShapeError(f"parallel_conv: input {t}x{f} smaller than kernels {kt} and {kf}")
        merged = concat([self.time_conv(spec), self.freq_conv(spec)], axis=1)
        return max_pool2d(merged, self.config.pool)


def parallel_conv(spec: Tensor, block: ParallelConv) -> Tensor:
    return block(spec)


def coordinate_pool(x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-row and per-column means: z_h is N×C×H, z_w is N×C×W."""
    return x.mean(axis=3), x.mean(axis=2)


class GrfBlock(Module):
    """Residual block Y = X + Y_a + Y_b combining coordinate gating and a pooled context path."""

    def __init__(self, config: GrfConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        c, reduced = config.channels, config.reduced_channels
        self.reduce = Conv2d(c, reduced, (1, 1), rng)
        self.bn = BatchNorm2d(reduced)
        self.gate_h = Conv2d(reduced, c, (1, 1), rng)
        self.gate_w = Conv2d(reduced, c, (1, 1), rng)
        self.context = Conv2d(c, c, (3, 3), rng, padding=(1, 1))
        # Test hook: a constant replacing both gate tensors.
        self.gate_override: float | None = None

    def gates(self, z_h: Tensor, z_w: Tensor) -> tuple[Tensor, Tensor]:
        n, c, h = z_h.shape
        w = z_w.shape[2]
        if self.gate_override is not None:
            return (
                as_tensor(np.full((n, c, h), self.gate_override, dtype=z_h.dtype)),
                as_tensor(np.full((n, c, w), self.gate_override, dtype=z_w.dtype)),
            )
        joined = concat([z_h, z_w], axis=2).reshape(n, c, 1, h + w)
        f = swish(self.bn(self.reduce(joined)))
        f_h, f_w = split(f, [h, w], axis=3)
        assert f_h.shape[3] == h and f_w.shape[3] == w
        g_h = sigmoid(self.gate_h(f_h)).reshape(n, c, h)
        g_w = sigmoid(self.gate_w(f_w)).reshape(n, c, w)
        return g_h, g_w

    def branch_a(self, x: Tensor, g_h: Tensor, g_w: Tensor) -> Tensor:
        return grf_branch_a(x, g_h, g_w)

    def branch_b(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        k = self.config.ratio
        if h // k < 1 or w // k < 1:
            raise ConfigError(f"GRF input {h}x{w} pooled by 1/{k} is empty")
        context = self.context(avg_pool2d(x, (k, k), (k, k)))
        return x + bilinear_upsample(context, h, w)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.channels:
            raise ShapeError(
                f"GRF block expects {self.config.channels} channels, got input {x.shape}"
            )
        g_h, g_w = self.gates(*coordinate_pool(x))
        return x + self.branch_a(x, g_h, g_w) + self.branch_b(x)


def grf_gates(z_h: Tensor, z_w: Tensor, block: GrfBlock) -> tuple[Tensor, Tensor]:
    return block.gates(z_h, z_w)


def grf_branch_a(x: Tensor, g_h: Tensor, g_w: Tensor) -> Tensor:
    """Hadamard gating: Y_a[i, j] = x[i, j] * g_h[i] * g_w[j] per channel."""
    n, c, h, w = x.shape
    return x * g_h.reshape(n, c, h, 1) * g_w.reshape(n, c, 1, w)


def grf_branch_b(x: Tensor, block: GrfBlock) -> Tensor:
    return block.branch_b(x)


def grf_forward(x: Tensor, block: GrfBlock) -> Tensor:
    return block(x)


class MfEncoder(Module):
    """Parallel conv + pool, then GRF blocks joined by stride-2 transition convs.

    With ``use_grf`` off the GRF blocks are dropped and only the transition
    convolutions remain, keeping the output shape.
    """

    def __init__(self, config: MfConfig, rng: np.random.Generator, use_grf: bool = True) -> None:
        super().__init__()
        self.config = config
        self.use_grf = use_grf
        self.parallel = ParallelConv(config, rng)
        channels = config.grf_channels
        self.transitions = ModuleList(
            Conv2d(c_in, c_out, (3, 3), rng, stride=2, padding=(1, 1))
            for c_in, c_out in zip(channels[:-1], channels[1:])
        )
        self.blocks = ModuleList(
            GrfBlock(config.block(c), rng) for c in (channels if use_grf else ())
        )

    def forward(self, spec: Tensor) -> Tensor:
        x = self.parallel(spec)
        for index in range(len(self.config.grf_channels)):
            if index > 0:
                x = self.transitions[index - 1](x)
            if self.use_grf:
                x = self.blocks[index](x)
        return x


def mf_forward(spec: Tensor, encoder: MfEncoder) -> Tensor:
    return encoder(spec)
