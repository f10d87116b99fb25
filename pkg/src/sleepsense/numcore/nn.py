"""Parameter containers and layers built on the primitives."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name: str | None = None):
        arr = np.array(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        super().__init__(arr, requires_grad=True, name=name)


class Module:
    """Base container. Parameters, buffers and child modules are discovered
    from instance attributes (including lists of modules)."""

    training: bool = True

    def __init__(self) -> None:
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                out[prefix + key] = val
        for key, child in self.children():
            out.update(child.named_parameters(prefix + key + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for key, child in self.children():
            out.update(child.named_buffers(prefix + key + "."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data for k, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return dict(sorted(state.items()))

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            b[...] = state[k]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Convert parameters and buffers in place (e.g. float64 for grad checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        for k, v in list(self._buffers.items()):
            self._buffers[k] = v.astype(dtype)
        for _, child in self.children():
            child._cast_buffers(dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, (in_features, out_features), bound))
        self.bias = Parameter(_uniform(rng, (out_features,), bound)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = False):
        super().__init__()
        fan_in = in_channels * kernel_size
        # He-normal init for relu stacks
        w = rng.standard_normal((out_channels, in_channels, kernel_size)) * np.sqrt(2.0 / fan_in)
        self.weight = Parameter(w.astype(DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(out_channels, dtype=DEFAULT_DTYPE)) if bias else None
        self.stride = stride
        self.padding = padding

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.weight, self.bias, self._buffers["running_mean"], self._buffers["running_var"],
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(dim, dtype=DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(dim, dtype=DEFAULT_DTYPE))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class LSTMDirection(Module):
    """One direction of an LSTM layer; weights laid out for :func:`ops.lstm`."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, reverse: bool = False):
        super().__init__()
        bound = 1.0 / np.sqrt(hidden_size)
        self.w_ih = Parameter(_uniform(rng, (input_size, 4 * hidden_size), bound))
        self.w_hh = Parameter(_uniform(rng, (hidden_size, 4 * hidden_size), bound))
        b = _uniform(rng, (4 * hidden_size,), bound)
        b[hidden_size : 2 * hidden_size] += 1.0  # forget-gate bias
        self.bias = Parameter(b)
        self.reverse = reverse

    def forward(self, x: Tensor) -> Tensor:
        return ops.lstm(ops.linear(x, self.w_ih, self.bias), self.w_hh, reverse=self.reverse)


class BiLSTM(Module):
    """Bidirectional LSTM stack; output concatenates both directions."""

    def __init__(self, input_size: int, hidden_size: int, num_layers: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = []
        self.bwd = []
        size = input_size
        for _ in range(num_layers):
            self.fwd.append(LSTMDirection(size, hidden_size, rng))
            self.bwd.append(LSTMDirection(size, hidden_size, rng, reverse=True))
            size = 2 * hidden_size

    def forward(self, x: Tensor) -> Tensor:
        for f, b in zip(self.fwd, self.bwd):
            x = ops.concat([f(x), b(x)], axis=-1)
        return x
