"""Parameter containers and seeded initialization."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from .tensor import Tensor


def parameter(shape, rng: np.random.Generator, init: str = "kaiming", fan_in: int | None = None, dtype=np.float32) -> Tensor:
    """Create a trainable leaf tensor.

    ``kaiming`` draws from U(-b, b) with b = sqrt(6 / fan_in); ``zeros`` is
    used for biases and for projections that must start inert.
    """
    shape = tuple(int(s) for s in shape)
    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "kaiming":
        if fan_in is None:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=True)


class Module:
    """Minimal container: parameters and child modules are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        out = OrderedDict()
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad and value._backward is None:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state, strict: bool = True):
        params = self.named_parameters()
        if strict:
            missing = set(params) - set(state)
            if missing:
                raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
                p.data = arr.astype(p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv(Module):
    """Convolution with bias and optional SiLU."""

    def __init__(self, c_in, c_out, k, rng, stride=1, act=True, dtype=np.float32):
        self.weight = parameter((c_out, c_in, k, k), rng, "kaiming", dtype=dtype)
        self.bias = parameter((c_out,), rng, "zeros", dtype=dtype)
        self.stride = stride
        self.pad = k // 2
        self.act = act

    def forward(self, x):
        y = F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)
        return F.silu(y) if self.act else y
