"""Hierarchical cooperative attention between spectrogram and self-supervised features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .nn import BiLSTM, Linear, Module
from .ops import concat, matmul, relu, softmax


@dataclass(frozen=True)
class HcaConfig:
    d_model: int = 128
    bilstm_hidden: int = 128
    hubert_dim: int = 768
    fc_hidden: tuple[int, int] = (128, 64)
    num_classes: int = 4

    def __post_init__(self) -> None:
        widths = (self.d_model, self.bilstm_hidden, self.hubert_dim, *self.fc_hidden)
        if any(w < 1 for w in widths) or self.num_classes < 2:
            raise ConfigError(f"attention/classifier widths must be positive: {self}")


@dataclass
class FusedFeature:
    """Fused sequence (None for pooled-only fusion) and its time-mean."""

    sequence: Tensor | None
    pooled: Tensor


def spec_to_sequence(mf_out: Tensor, proj: Linear) -> Tensor:
    """N×C×T×F encoder map → N×T×d: mean over frequency, then a learned projection."""
    if mf_out.ndim != 4:
        raise ShapeError(f"spec_to_sequence: expected N×C×T×F, got {mf_out.shape}")
    return proj(mf_out.mean(axis=3).transpose(0, 2, 1))


class HubertEncoder(Module):
    """BiLSTM over the feature sequence followed by a projection to d_model."""

    def __init__(self, config: HcaConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.bilstm = BiLSTM(config.hubert_dim, config.bilstm_hidden, rng)
        self.proj = Linear(2 * config.bilstm_hidden, config.d_model, rng)

    def forward(self, f_hubert: Tensor) -> Tensor:
        if f_hubert.ndim != 3 or f_hubert.shape[1] < 1:
            raise ShapeError(f"encode_hubert: expected non-empty N×T×D, got {f_hubert.shape}")
        return self.proj(self.bilstm(f_hubert))


def encode_hubert(f_hubert: Tensor, encoder: HubertEncoder) -> Tensor:
    return encoder(f_hubert)


def attention_weights(f_spec: Tensor, f_hubert_enc: Tensor) -> Tensor:
    """Row-stochastic N×T_s×T_h weights: each spectral step attends over feature frames."""
    if f_spec.shape[-1] != f_hubert_enc.shape[-1]:
        raise ShapeError(
            f"coattention: spectral width {f_spec.shape[-1]} "
            f"!= feature width {f_hubert_enc.shape[-1]}"
        )
    return softmax(matmul(f_spec, f_hubert_enc.swapaxes(-1, -2)), axis=-1)


def coattention(f_spec: Tensor, f_hubert_enc: Tensor, f_hubert_proj: Tensor) -> Tensor:
    """Two-level co-attention; returns concat(f_spec, A · f_hubert_proj), N×T_s×2d."""
    if f_hubert_proj.shape[-1] != f_spec.shape[-1]:
        raise ShapeError(
            f"coattention: projected feature width {f_hubert_proj.shape[-1]} "
            f"!= spectral width {f_spec.shape[-1]}"
        )
    if f_hubert_proj.shape[-2] != f_hubert_enc.shape[-2]:
        raise ShapeError(
            f"coattention: {f_hubert_enc.shape[-2]} encoded frames but "
            f"{f_hubert_proj.shape[-2]} projected frames"
        )
    attended = matmul(attention_weights(f_spec, f_hubert_enc), f_hubert_proj)
    return concat([f_spec, attended], axis=-1)


class Classifier(Module):
    """Three fully connected layers, ReLU between, raw logits out."""

    def __init__(self, in_features: int, config: HcaConfig, rng: np.random.Generator) -> None:
        super().__init__()
        first, second = config.fc_hidden
        self.fc1 = Linear(in_features, first, rng)
        self.fc2 = Linear(first, second, rng)
        self.fc3 = Linear(second, config.num_classes, rng)

    def forward(self, pooled: Tensor) -> Tensor:
        return self.fc3(relu(self.fc2(relu(self.fc1(pooled)))))


def classify(fused: FusedFeature, classifier: Classifier) -> Tensor:
    return classifier(fused.pooled)
