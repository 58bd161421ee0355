"""The full two-encoder model and its ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DataError
from .hca import (
    Classifier,
    FusedFeature,
    HcaConfig,
    HubertEncoder,
    classify,
    coattention,
    spec_to_sequence,
)
from .mf_grf import MfConfig, MfEncoder
from .nn import Linear, Module, count_params
from .ops import concat


@dataclass(frozen=True)
class Variant:
    """Which inputs and modules a model uses."""

    mf: bool = True
    hca: bool = True
    spec: bool = True
    features: bool = True

    def __post_init__(self) -> None:
        if not (self.spec or self.features):
            raise ConfigError("a model needs the spectrogram input, the feature input, or both")

    @property
    def inputs(self) -> str:
        if self.spec and self.features:
            return "Spec+Feat"
        return "Spec" if self.spec else "Feat"

    @property
    def label(self) -> str:
        parts = [self.inputs]
        if self.mf and self.spec:
            parts.append("MF")
        if self.hca and self.spec and self.features:
            parts.append("HCA")
        return "+".join(parts)


class Ablation(str, Enum):
    NONE = "none"
    NO_MF = "no-mf"
    NO_HCA = "no-hca"
    NO_MF_NO_HCA = "no-mf-no-hca"
    SPEC_ONLY = "spec-only"
    FEAT_ONLY = "feat-only"

    @property
    def variant(self) -> Variant:
        return {
            Ablation.NONE: Variant(mf=True, hca=True),
            Ablation.NO_MF: Variant(mf=False, hca=True),
            Ablation.NO_HCA: Variant(mf=True, hca=False),
            Ablation.NO_MF_NO_HCA: Variant(mf=False, hca=False),
            Ablation.SPEC_ONLY: Variant(mf=True, hca=False, features=False),
            Ablation.FEAT_ONLY: Variant(mf=False, hca=False, spec=False),
        }[self]


# Rows of the ablation table: spectrogram alone without/with MF, features
# alone, then both inputs under every MF × HCA combination.
ABLATION_ROWS: tuple[Variant, ...] = (
    Variant(mf=False, hca=False, features=False),
    Variant(mf=True, hca=False, features=False),
    Variant(mf=False, hca=False, spec=False),
    Variant(mf=False, hca=False),
    Variant(mf=True, hca=False),
    Variant(mf=False, hca=True),
    Variant(mf=True, hca=True),
)


@dataclass(frozen=True)
class ModelConfig:
    mf: MfConfig = field(default_factory=MfConfig)
    hca: HcaConfig = field(default_factory=HcaConfig)
    variant: Variant = field(default_factory=Variant)
    spec_shape: tuple[int, int] = (297, 200)
    feature_frames: int = 149
    seed: int = 0

    def with_variant(self, variant: Variant) -> ModelConfig:
        return replace(self, variant=variant)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        mf = {k: tuple(v) if isinstance(v, list) else v for k, v in data["mf"].items()}
        hca = {k: tuple(v) if isinstance(v, list) else v for k, v in data["hca"].items()}
        return cls(
            mf=MfConfig(**mf),
            hca=HcaConfig(**hca),
            variant=Variant(**data["variant"]),
            spec_shape=tuple(data["spec_shape"]),  # type: ignore[arg-type]
            feature_frames=int(data["feature_frames"]),
            seed=int(data["seed"]),
        )


class MfhcaModel(Module):
    """Spectrogram encoder and feature encoder fused by co-attention, then classified."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        variant, hca = config.variant, config.hca
        rng = np.random.default_rng(config.seed)
        self.mf: MfEncoder | None = None
        self.spec_proj: Linear | None = None
        self.hubert: HubertEncoder | None = None
        self.hubert_proj: Linear | None = None
        if variant.spec:
            config.mf.validate_input(*config.spec_shape)
            self.mf = MfEncoder(config.mf, rng, use_grf=variant.mf)
            self.spec_proj = Linear(config.mf.out_channels, hca.d_model, rng)
        if variant.features:
            self.hubert = HubertEncoder(hca, rng)
        if variant.spec and variant.features and variant.hca:
            self.hubert_proj = Linear(hca.hubert_dim, hca.d_model, rng)
        width = 2 * hca.d_model if variant.spec and variant.features else hca.d_model
        self.classifier = Classifier(width, hca, rng)
        # Spectrogram normalization (mean, std) fitted on the training data.
        self.register_buffer("input_stats", np.array([0.0, 1.0], dtype=np.float32))

    def fuse(self, spec: Tensor | None, features: Tensor | None) -> FusedFeature:
        variant = self.config.variant
        f_spec = f_hubert = None
        if variant.spec:
            if spec is None:
                raise DataError("this model variant needs a spectrogram input")
            assert self.mf is not None and self.spec_proj is not None
            f_spec = spec_to_sequence(self.mf(spec), self.spec_proj)
        if variant.features:
            if features is None:
                raise DataError("this model variant needs a feature-sequence input")
            assert self.hubert is not None
            f_hubert = self.hubert(features)

        if f_spec is not None and f_hubert is not None:
            if self.hubert_proj is not None:
                fused = coattention(f_spec, f_hubert, self.hubert_proj(features))
                return FusedFeature(fused, fused.mean(axis=1))
            pooled = concat([f_spec.mean(axis=1), f_hubert.mean(axis=1)], axis=-1)
            return FusedFeature(None, pooled)
        sequence = f_spec if f_spec is not None else f_hubert
        assert sequence is not None
        return FusedFeature(sequence, sequence.mean(axis=1))

    def embed(self, spec: Tensor | None, features: Tensor | None) -> Tensor:
        """Pooled fused vector, the input of the classifier head."""
        return self.fuse(spec, features).pooled

    def forward(self, spec: Tensor | None, features: Tensor | None) -> Tensor:
        return classify(self.fuse(spec, features), self.classifier)


def model_forward(
    spec: Tensor | None, features: Tensor | None, model: MfhcaModel
) -> Tensor:
    return model(spec, features)


def parameter_breakdown(model: Module) -> dict[str, int]:
    """Learnable-parameter count per top-level submodule."""
    breakdown: dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return breakdown


__all__ = [
    "ABLATION_ROWS",
    "Ablation",
    "ModelConfig",
    "MfhcaModel",
    "Variant",
    "count_params",
    "model_forward",
    "parameter_breakdown",
]
