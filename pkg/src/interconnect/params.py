"""Creation and naming of every learnable tensor in a model.

All parameters are registered here with dotted names so that freezing,
counting, gradient checking, and checkpointing can address them
uniformly.  Initial values are drawn from per-name counter-based
streams, so two models built with the same seed are identical no matter
what order their modules are constructed in.  With ``seed=None`` every
parameter is zero-filled and untouched, which makes geometry-only
builds (paper-scale parameter accounting) nearly free.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .rng import generator
from .tensor import Tensor


class ParamRegistry:
    def __init__(self, dtype=np.float32, seed: int | None = 0):
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, dtype=self.dtype, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def constant(self, name: str, shape, value: float) -> Tensor:
        if self.seed is None or value == 0.0:
            data = np.zeros(shape, dtype=self.dtype)
            if value != 0.0:
                data += value
        else:
            data = np.full(shape, value, dtype=self.dtype)
        return self._register(name, data)

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape, dtype=self.dtype))

    def ones(self, name: str, shape) -> Tensor:
        return self.constant(name, shape, 1.0)

    def normal(self, name: str, shape, std: float) -> Tensor:
        if self.seed is None:
            return self.zeros(name, shape)
        gen = generator(self.seed, "init", name)
        return self._register(name, gen.normal(0.0, std, size=shape))

    def xavier_uniform(self, name: str, shape, fan_in: int | None = None, fan_out: int | None = None) -> Tensor:
        """Glorot-uniform init; fans inferred for [in,out] matrices and
        [out,in,k] convolution kernels unless given explicitly."""
        if self.seed is None:
            return self.zeros(name, shape)
        if fan_in is None or fan_out is None:
            if len(shape) == 2:
                fan_in, fan_out = shape[0], shape[1]
            elif len(shape) == 3:
                fan_in = shape[1] * shape[2]
                fan_out = shape[0] * shape[2]
            else:
                raise ValueError(f"cannot infer fans for shape {shape}")
        bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
        gen = generator(self.seed, "init", name)
        return self._register(name, gen.uniform(-bound, bound, size=shape))
