"""Central finite-difference checks of every differentiable operator."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tensor, no_grad
from .hca import HcaConfig, coattention
from .mf_grf import GrfBlock, GrfConfig, MfConfig
from .model import MfhcaModel, ModelConfig
from .ops import (
    LstmWeights,
    avg_pool2d,
    batchnorm2d,
    bilinear_upsample,
    bilstm,
    concat,
    conv2d,
    cross_entropy,
    linear,
    log_softmax,
    matmul,
    max_pool2d,
    record_kinks,
    relu,
    sigmoid,
    softmax,
    split,
    stack,
    swish,
    tanh,
)

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_elements: int = 16,
    rng: np.random.Generator | None = None,
) -> tuple[float, int, int]:
    """Compare backprop gradients of the scalar ``fn()`` with central differences.

    Returns the worst per-input relative error ``|g - n| / max(|g|, |n|)``
    (vector norms over the sampled elements) and the checked/skipped element
    counts. Elements whose perturbation flips a relu or max-pool decision are
    skipped.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    with record_kinks() as base_kinks:
        loss = fn()
    loss.backward()
    base = list(base_kinks)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate_at(t: Tensor, flat: int, delta: float) -> tuple[float, list[int]]:
        t.data.flat[flat] += delta
        try:
            with no_grad(), record_kinks() as kinks:
                value = fn().item()
        finally:
            t.data.flat[flat] -= delta
        return value, list(kinks)

    worst, checked, skipped = 0.0, 0, 0
    for t, grad in zip(inputs, analytic):
        count = min(t.size, max_elements)
        picks = rng.choice(t.size, size=count, replace=False)
        got, want = [], []
        for flat in picks:
            original = t.data.flat[flat]
            plus, kinks_plus = evaluate_at(t, flat, h)
            minus, kinks_minus = evaluate_at(t, flat, -h)
            t.data.flat[flat] = original
            if kinks_plus != base or kinks_minus != base:
                skipped += 1
                continue
            got.append(grad.flat[flat])
            want.append((plus - minus) / (2 * h))
            checked += 1
        if not got:
            continue
        g, n = np.asarray(got), np.asarray(want)
        scale = max(np.linalg.norm(g), np.linalg.norm(n))
        if scale > 1e-12:
            worst = max(worst, float(np.linalg.norm(g - n) / scale))
    return worst, checked, skipped


def _param(rng: np.random.Generator, *shape: int, positive: bool = False) -> Parameter:
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Parameter(data, dtype=np.float64)


def _projection(rng: np.random.Generator, out: Tensor) -> Tensor:
    """Random weighted sum turning any output into a scalar loss."""
    weights = Tensor(rng.standard_normal(out.shape))
    return (out * weights).sum()


def tiny_model_config(seed: int = 0) -> ModelConfig:
    """A model small enough for exhaustive checks: d=4, T_s=3, T_h=4, two 4-channel GRF blocks."""
    return ModelConfig(
        mf=MfConfig(
            grf_channels=(4, 4),
            time_kernel=(3, 2),
            freq_kernel=(2, 3),
            ratio=2,
            reduction=2,
            min_reduced=2,
        ),
        hca=HcaConfig(d_model=4, bilstm_hidden=3, hubert_dim=5, fc_hidden=(6, 5)),
        spec_shape=(12, 8),
        feature_frames=4,
        seed=seed,
    )


def _stacked_pieces(c1: Tensor, c2: Tensor) -> Tensor:
    _, tail = split(concat([c1, c2], axis=1), [1, 4], axis=1)
    return stack([tail, tail * 2.0], axis=0)


Case = tuple[Callable[[], Tensor], list[Tensor]]


def _operator_cases(rng: np.random.Generator) -> dict[str, Case]:
    cases: dict[str, Case] = {}

    a, b = _param(rng, 3, 4), _param(rng, 4)
    p = _param(rng, 3, 4, positive=True)
    w = Tensor(rng.standard_normal((3, 4)))
    cases["arithmetic"] = (
        lambda: (((a + b) * a - b / p + (-a) + p**1.5) * w).sum(),
        [a, b, p],
    )
    e = _param(rng, 2, 3)
    cases["exp_log_tanh"] = (lambda: (e.exp() + p.log().sum() + e.tanh()).sum(), [e, p])
    m1, m2 = _param(rng, 2, 3, 4), _param(rng, 4, 5)
    cases["matmul"] = (lambda: _projection(np.random.default_rng(1), matmul(m1, m2)), [m1, m2])
    r = _param(rng, 3, 5)
    proj = Tensor(rng.standard_normal((3, 5)))
    cases["sigmoid"] = (lambda: (sigmoid(r) * proj).sum(), [r])
    cases["relu"] = (lambda: (relu(r) * proj).sum(), [r])
    cases["swish"] = (lambda: (swish(r) * proj).sum(), [r])
    cases["tanh"] = (lambda: (tanh(r) * proj).sum(), [r])
    cases["softmax"] = (lambda: (softmax(r, axis=-1) * proj).sum(), [r])
    cases["log_softmax"] = (lambda: (log_softmax(r, axis=0) * proj).sum(), [r])

    x = _param(rng, 2, 2, 6, 5)
    k = _param(rng, 3, 2, 3, 2)
    bias = _param(rng, 3)
    cases["conv2d"] = (
        lambda: _projection(
            np.random.default_rng(2), conv2d(x, k, bias, stride=2, padding=(1, 0, 1, 1))
        ),
        [x, k, bias],
    )
    cases["avg_pool2d"] = (lambda: _projection(np.random.default_rng(3), avg_pool2d(x, 2)), [x])
    cases["max_pool2d"] = (
        lambda: _projection(np.random.default_rng(4), max_pool2d(x, (2, 2))),
        [x],
    )
    small = _param(rng, 1, 2, 3, 2)
    cases["bilinear_upsample"] = (
        lambda: _projection(np.random.default_rng(5), bilinear_upsample(small, 5, 7)),
        [small],
    )
    gamma, beta = _param(rng, 2, positive=True), _param(rng, 2)
    mean, var = np.zeros(2), np.ones(2)
    cases["batchnorm2d"] = (
        lambda: _projection(
            np.random.default_rng(6),
            batchnorm2d(x, gamma, beta, mean.copy(), var.copy(), training=True),
        ),
        [x, gamma, beta],
    )
    c1, c2 = _param(rng, 2, 3), _param(rng, 2, 2)
    cases["concat_split_stack"] = (
        lambda: _projection(np.random.default_rng(7), _stacked_pieces(c1, c2)),
        [c1, c2],
    )
    lw, lb = _param(rng, 3, 5), _param(rng, 3)
    cases["linear"] = (
        lambda: _projection(np.random.default_rng(8), linear(r, lw, lb)),
        [r, lw, lb],
    )

    seq = _param(rng, 2, 4, 3)
    fwd = LstmWeights(_param(rng, 8, 3), _param(rng, 8, 2), _param(rng, 8))
    bwd = LstmWeights(_param(rng, 8, 3), _param(rng, 8, 2), _param(rng, 8))
    cases["bilstm"] = (
        lambda: _projection(np.random.default_rng(9), bilstm(seq, fwd, bwd)),
        [seq, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias],
    )
    labels = rng.integers(0, 5, size=3)
    cases["cross_entropy"] = (lambda: cross_entropy(r, labels), [r])

    fs, fh, fp = _param(rng, 2, 3, 4), _param(rng, 2, 4, 4), _param(rng, 2, 4, 4)
    cases["coattention"] = (
        lambda: _projection(np.random.default_rng(10), coattention(fs, fh, fp)),
        [fs, fh, fp],
    )

    block = GrfBlock(GrfConfig(channels=4, reduction=2, ratio=2, min_reduced=2), rng)
    block.astype(np.float64)
    gx = _param(rng, 2, 4, 4, 6)
    cases["grf_block"] = (
        lambda: _projection(np.random.default_rng(11), block(gx)),
        [gx, *block.parameters()],
    )
    return cases


def _model_case(seed: int, rng: np.random.Generator) -> Case:
    config = tiny_model_config(seed)
    model = MfhcaModel(config).astype(np.float64)
    model.train()
    spec = Tensor(rng.standard_normal((2, 1, *config.spec_shape)))
    feats = Tensor(rng.standard_normal((2, config.feature_frames, config.hca.hubert_dim)))
    labels = rng.integers(0, config.hca.num_classes, size=2)
    return (lambda: cross_entropy(model(spec, feats), labels)), model.parameters()


def run_gradcheck_suite(seed: int = 0, max_elements: int = 16) -> list[GradcheckResult]:
    """Check every operator plus the end-to-end tiny model in float64."""
    rng = np.random.default_rng(seed)
    cases = _operator_cases(rng)
    cases["model"] = _model_case(seed, rng)
    results = []
    for name, (fn, inputs) in cases.items():
        err, checked, skipped = check_gradients(
            fn, inputs, max_elements=max_elements, rng=np.random.default_rng(seed)
        )
        logger.debug("%s: max rel error %.2e (%d checked, %d skipped)", name, err, checked, skipped)
        results.append(GradcheckResult(name, err, checked, skipped))
    return results

