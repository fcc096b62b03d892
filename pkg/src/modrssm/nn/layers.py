"""Parameterised building blocks on top of the autodiff tensors.

Each block owns named parameter Tensors and exposes ``params()`` returning
a flat ``{name: Tensor}`` dict; containers merge child dicts under a
prefix. Weight init is truncated normal scaled by fan-in; output layers
that should start neutral (reward/value/continue heads) use zero init.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    conv2d,
    conv2d_transpose,
    layer_norm,
    matmul,
    sigmoid,
    silu,
    tanh,
)


def trunc_normal(rng: np.random.Generator, shape, scale: float, dtype) -> np.ndarray:
    values = rng.standard_normal(shape)
    clipped = np.clip(values, -2.0, 2.0)
    return (clipped * scale).astype(dtype)


def prefix_params(prefix: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}/{k}": v for k, v in params.items()}


class Linear:
    def __init__(self, rng, n_in: int, n_out: int, dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            w = trunc_normal(rng, (n_in, n_out), 1.0 / np.sqrt(n_in), dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x
        out = matmul(flat, self.w) + self.b
        if x.ndim != 2:
            out = out.reshape(*lead, self.w.shape[1])
        return out

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class LayerNorm:
    """Normalises over the last axis. eps 1e-3 keeps float32 stable."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-3):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}


class Conv2d:
    def __init__(self, rng, c_in: int, c_out: int, kernel: int = 4, stride: int = 2, pad: int = 1, dtype=np.float32):
        fan_in = kernel * kernel * c_in
        self.w = Tensor(trunc_normal(rng, (kernel, kernel, c_in, c_out), 1.0 / np.sqrt(fan_in), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class ConvTranspose2d:
    def __init__(self, rng, c_in: int, c_out: int, kernel: int = 4, stride: int = 2, pad: int = 1, dtype=np.float32):
        fan_in = kernel * kernel * c_in
        self.w = Tensor(trunc_normal(rng, (kernel, kernel, c_out, c_in), 1.0 / np.sqrt(fan_in), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_transpose(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class GRUCell:
    """Gated recurrent unit; state stays in (-1, 1) because the candidate
    is tanh-squashed and the update gate convexly mixes it with the old
    state."""

    def __init__(self, rng, n_in: int, n_hidden: int, dtype=np.float32):
        self.wx = Tensor(trunc_normal(rng, (n_in, 3 * n_hidden), 1.0 / np.sqrt(n_in), dtype), requires_grad=True)
        self.wh = Tensor(trunc_normal(rng, (n_hidden, 3 * n_hidden), 1.0 / np.sqrt(n_hidden), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(3 * n_hidden, dtype=dtype), requires_grad=True)
        self.n_hidden = n_hidden

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        n = self.n_hidden
        gx = matmul(x, self.wx) + self.b
        gh = matmul(h, self.wh)
        reset = sigmoid(gx[:, :n] + gh[:, :n])
        update = sigmoid(gx[:, n : 2 * n] + gh[:, n : 2 * n])
        cand = tanh(gx[:, 2 * n :] + reset * gh[:, 2 * n :])
        return update * h + (1.0 - update) * cand

    def params(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


class MLP:
    """Linear -> LayerNorm -> SiLU blocks followed by a plain output layer."""

    def __init__(self, rng, n_in: int, hidden: int, n_out: int, n_layers: int = 2, dtype=np.float32, zero_out: bool = False):
        self.blocks = []
        width = n_in
        for _ in range(n_layers):
            self.blocks.append((Linear(rng, width, hidden, dtype), LayerNorm(hidden, dtype)))
            width = hidden
        self.out = Linear(rng, width, n_out, dtype, zero_init=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        for linear, norm in self.blocks:
            x = silu(norm(linear(x)))
        return self.out(x)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (linear, norm) in enumerate(self.blocks):
            out.update(prefix_params(f"l{i}", linear.params()))
            out.update(prefix_params(f"n{i}", norm.params()))
        out.update(prefix_params("out", self.out.params()))
        return out
