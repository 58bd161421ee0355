"""Adam optimizer."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter
from .errors import NumericalError, ShapeError


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Parameter]) -> AdamState:
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
) -> None:
    """Apply one bias-corrected Adam update in place.

    A missing gradient counts as zero. Any NaN/Inf gradient aborts the step
    before a single parameter changes.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("adam_step: params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} for parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter of shape {p.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)


@dataclass
class Adam:
    params: list[Parameter]
    lr: float = 1e-5
    state: AdamState = field(init=False)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        self.state = AdamState.for_params(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
