"""Parameter containers and basic layers on top of the tensor core.

Weights draw from a fan-in-scaled uniform distribution; biases start at
zero. Layers flagged `zero_init` start with all-zero weights (used for the
final convolution of every residual branch).
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def fan_in_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container whose trainable tensors are discoverable by name."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=None,
                 zero_init=False, dtype=np.float32):
        if padding is None:
            padding = k // 2
        self.stride = stride
        self.padding = padding
        fan_in = cin * k * k
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = fan_in_uniform(rng, (cout, cin, k, k), fan_in, dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return tt.conv2d(x, self.weight, self.bias,
                         stride=self.stride, padding=self.padding)


class Downsample2x(Module):
    """Stride-2 3x3 convolution halving each spatial extent."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        self.conv = Conv2d(cin, cout, 3, rng, stride=2, dtype=dtype)

    def __call__(self, x):
        return self.conv(x)


class Linear(Module):
    def __init__(self, din, dout, rng, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((din, dout), dtype=dtype)
        else:
            w = fan_in_uniform(rng, (din, dout), din, dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(dout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return tt.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return tt.layer_norm(x, self.gamma, self.beta, self.eps)
