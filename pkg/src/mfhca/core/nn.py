"""Parameter containers and layers for the model."""

from __future__ import annotations

import math
from collections.abc import Iterator
from typing import Any

import numpy as np

from .autodiff import Parameter, Tensor
from .ops import LstmWeights, Padding, batchnorm2d, bilstm, conv2d, linear


class Module:
    """Base class holding parameters, buffers and child modules.

    Attributes are discovered in assignment order, which fixes the naming and
    ordering of :meth:`named_parameters` and :meth:`state_dict`.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def _children(self) -> Iterator[tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for index, child in enumerate(value):
                    yield f"{name}.{index}", child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype: Any) -> Module:
        """Cast every parameter and buffer in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype: Any) -> None:
        for name in self._buffers:
            self._buffers[name] = self._buffers[name].astype(dtype)
        for _, child in self._children():
            child._cast_buffers(dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters and buffers; names and shapes must match."""
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=p.dtype).reshape(p.shape)
        self._load_buffers(state, "")

    def _load_buffers(self, state: dict[str, np.ndarray], prefix: str) -> None:
        for name, value in self._buffers.items():
            value[...] = state[prefix + name]
        for name, child in self._children():
            child._load_buffers(state, f"{prefix}{name}.")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError


class ModuleList(list):  # type: ignore[type-arg]
    """List of child modules, named ``<attr>.<index>``."""


def uniform(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> Parameter:
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(np.float32))


class Conv2d(Module):
    """2-D convolution with fan-in scaled uniform initialization."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        rng: np.random.Generator,
        stride: int | tuple[int, int] = 1,
        padding: Padding = (0, 0),
    ) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(in_channels * kernel[0] * kernel[1])
        self.weight = uniform(rng, (out_channels, in_channels, *kernel), bound)
        self.bias = uniform(rng, (out_channels,), bound)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = uniform(rng, (out_features, in_features), bound)
        self.bias = uniform(rng, (out_features,), bound)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Batch normalization state: learnable gamma/beta plus running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.buffer("running_mean"),
            self.buffer("running_var"),
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class LstmDirection(Module):
    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(hidden)
        self.w_ih = uniform(rng, (4 * hidden, input_size), bound)
        self.w_hh = uniform(rng, (4 * hidden, hidden), bound)
        self.bias = uniform(rng, (4 * hidden,), bound)

    def weights(self) -> LstmWeights:
        return LstmWeights(self.w_ih, self.w_hh, self.bias)


class BiLSTM(Module):
    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.hidden = hidden
        self.forward_dir = LstmDirection(input_size, hidden, rng)
        self.backward_dir = LstmDirection(input_size, hidden, rng)

    def forward(self, seq: Tensor) -> Tensor:
        return bilstm(seq, self.forward_dir.weights(), self.backward_dir.weights())


def count_params(module: Module) -> int:
    """Number of learnable scalars; buffers such as running statistics are excluded."""
    return sum(p.size for p in module.parameters())
