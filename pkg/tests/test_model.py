"""Tests for the assembled model and its ablation variants."""

from dataclasses import replace

import numpy as np
import pytest

from mfhca.core.autodiff import Tensor, no_grad
from mfhca.core.errors import ConfigError, DataError
from mfhca.core.hca import HcaConfig
from mfhca.core.mf_grf import RATIO_GRID, MfConfig
from mfhca.core.model import (
    ABLATION_ROWS,
    Ablation,
    MfhcaModel,
    ModelConfig,
    Variant,
    count_params,
    model_forward,
    parameter_breakdown,
)
from mfhca.core.nn import Linear
from mfhca.core.ops import cross_entropy
from mfhca.core.training import CHANNEL_GRID


def _inputs(config, rng, n=2):
    spec = Tensor(rng.standard_normal((n, 1, *config.spec_shape)).astype(np.float32))
    feats = Tensor(
        rng.standard_normal((n, config.feature_frames, config.hca.hubert_dim)).astype(np.float32)
    )
    return spec, feats


@pytest.mark.parametrize("variant", ABLATION_ROWS, ids=lambda v: v.label)
def test_every_variant_produces_logits(tiny_config, rng, variant):
    config = tiny_config.with_variant(variant)
    model = MfhcaModel(config)
    spec, feats = _inputs(config, rng)
    logits = model_forward(
        spec if variant.spec else None, feats if variant.features else None, model
    )
    assert logits.shape == (2, 4)
    assert np.all(np.isfinite(logits.data))


def test_embedding_width(tiny_config, rng):
    model = MfhcaModel(tiny_config)
    spec, feats = _inputs(tiny_config, rng)
    assert model.embed(spec, feats).shape == (2, 2 * tiny_config.hca.d_model)
    spec_only = MfhcaModel(tiny_config.with_variant(Ablation.SPEC_ONLY.variant))
    assert spec_only.embed(spec, None).shape == (2, tiny_config.hca.d_model)


def test_fused_sequence_has_spectral_length(tiny_config, rng):
    model = MfhcaModel(tiny_config)
    spec, feats = _inputs(tiny_config, rng)
    fused = model.fuse(spec, feats)
    frames = tiny_config.mf.output_shape(*tiny_config.spec_shape)[1]
    assert fused.sequence is not None
    assert fused.sequence.shape == (2, frames, 2 * tiny_config.hca.d_model)


def test_missing_input_is_a_data_error(tiny_config, rng):
    model = MfhcaModel(tiny_config)
    spec, feats = _inputs(tiny_config, rng)
    with pytest.raises(DataError, match="feature-sequence"):
        model(spec, None)
    with pytest.raises(DataError, match="spectrogram"):
        model(None, feats)


def test_same_seed_same_model(tiny_config, rng):
    spec, feats = _inputs(tiny_config, rng)
    a, b = MfhcaModel(tiny_config).eval(), MfhcaModel(tiny_config).eval()
    with no_grad():
        np.testing.assert_array_equal(a(spec, feats).data, b(spec, feats).data)
    other = MfhcaModel(replace(tiny_config, seed=1))
    assert not np.array_equal(
        other.classifier.fc1.weight.data, a.classifier.fc1.weight.data
    )


def test_parameter_count_monotone_in_modules(tiny_config):
    sizes = {v: count_params(MfhcaModel(tiny_config.with_variant(v))) for v in ABLATION_ROWS}
    assert sizes[Variant(mf=False, hca=False)] < sizes[Variant(mf=True, hca=False)]
    assert sizes[Variant(mf=False, hca=False)] < sizes[Variant(mf=False, hca=True)]
    assert sizes[Variant(mf=True, hca=False)] < sizes[Variant(mf=True, hca=True)]
    assert sizes[Variant(mf=False, hca=False, features=False)] < sizes[
        Variant(mf=True, hca=False, features=False)
    ]


def test_parameter_breakdown_sums_to_total(tiny_config):
    model = MfhcaModel(tiny_config)
    breakdown = parameter_breakdown(model)
    assert set(breakdown) == {"mf", "spec_proj", "hubert", "hubert_proj", "classifier"}
    assert sum(breakdown.values()) == count_params(model)


def test_buffers_are_not_parameters(tiny_config):
    model = MfhcaModel(tiny_config)
    names = {name for name, _ in model.named_parameters()}
    assert "input_stats" not in names
    assert not any("running_" in name for name in names)
    assert "input_stats" in model.state_dict()


def test_default_model_parameter_count():
    model = MfhcaModel(ModelConfig())
    assert count_params(model) == 1_151_276
    assert parameter_breakdown(model) == {
        "mf": 53_736,
        "spec_proj": 6_272,
        "hubert": 951_424,
        "hubert_proj": 98_432,
        "classifier": 41_412,
    }


def test_linear_parameter_count(rng):
    assert count_params(Linear(4, 2, rng)) == 10


def test_labels():
    assert [v.label for v in ABLATION_ROWS] == [
        "Spec",
        "Spec+MF",
        "Feat",
        "Spec+Feat",
        "Spec+Feat+MF",
        "Spec+Feat+HCA",
        "Spec+Feat+MF+HCA",
    ]


def test_ablation_variants():
    assert Ablation("none").variant == Variant()
    assert Ablation("feat-only").variant.spec is False
    assert Ablation("spec-only").variant.features is False
    with pytest.raises(ConfigError):
        Variant(spec=False, features=False)


def test_config_dict_roundtrip(tiny_config):
    assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config


GRID_HCA = HcaConfig(d_model=16, bilstm_hidden=8, hubert_dim=8, fc_hidden=(8, 8))


@pytest.mark.parametrize(
    "mf",
    [MfConfig(grf_channels=c, ratio=4) for c in CHANNEL_GRID]
    + [MfConfig(ratio=r) for r in RATIO_GRID],
    ids=[f"c{'-'.join(map(str, c))}" for c in CHANNEL_GRID] + [f"r{r}" for r in RATIO_GRID],
)
def test_sweep_grid_trains_at_full_input_size(mf, rng):
    config = ModelConfig(mf=mf, hca=GRID_HCA, feature_frames=12)
    model = MfhcaModel(config)
    spec, feats = _inputs(config, rng)
    loss = cross_entropy(model(spec, feats), [0, 3])
    assert np.isfinite(loss.item())
    loss.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert np.all(np.isfinite(p.grad)), name
