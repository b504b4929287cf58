"""Parameter containers for the small networks built on the tape."""

from __future__ import annotations

import contextlib

import numpy as np

from . import ops
from .tensor import Tensor


class Conv2d:
    def __init__(self, cin, cout, k=3, stride=1, padding=1, rng=None, scale=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = scale * np.sqrt(2.0 / (cin * k * k))
        self.weight = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        return [self.weight, self.bias]


class Linear:
    def __init__(self, fin, fout, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(rng.normal(0.0, np.sqrt(1.0 / fin), size=(fin, fout)), requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True)

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


class Module:
    """Minimal base: subclasses list their layers in ``self.layers``."""

    layers: list

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def load_state(self, arrays):
        params = self.params()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=p.data.dtype)
            if a.size != p.data.size:
                raise ValueError(f"parameter size mismatch: {a.shape} vs {p.shape}")
            p.data = a.reshape(p.shape).copy()

    def set_requires_grad(self, flag: bool):
        for p in self.params():
            p.requires_grad = flag

    @contextlib.contextmanager
    def frozen(self):
        """Stop gradients from being computed for the parameters inside the block."""
        params = self.params()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))
