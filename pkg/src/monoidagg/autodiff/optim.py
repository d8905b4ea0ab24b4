"""Named parameter store, initializers and the Adam update."""

from __future__ import annotations

import math

import numpy as np

from .engine import AutodiffError, Tensor
from .rng import Prng

__all__ = ["ParameterStore", "init_params", "adam_step", "INIT_SCHEMES"]

INIT_SCHEMES = ("zeros", "glorot-uniform", "small-normal")


def init_params(shape, scheme: str, prng: Prng) -> Tensor:
    """Create a trainable tensor.

    glorot-uniform is for 2-d kernels (fans from the shape), zeros for biases,
    small-normal (sigma 0.02) for embedding vectors and learned identities.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        data = np.zeros(shape, dtype=np.float32)
    elif scheme == "glorot-uniform":
        if len(shape) != 2:
            raise AutodiffError(f"glorot-uniform needs a 2-d shape, got {shape}")
        fan_in, fan_out = shape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        flat = [(-limit + 2.0 * limit * prng.uniform()) for _ in range(fan_in * fan_out)]
        data = np.asarray(flat, dtype=np.float32).reshape(shape)
    elif scheme == "small-normal":
        n = int(np.prod(shape)) if shape else 1
        flat = [prng.normal(0.0, 0.02) for _ in range(n)]
        data = np.asarray(flat, dtype=np.float32).reshape(shape)
    else:
        raise AutodiffError(f"unknown init scheme {scheme!r} (expected one of {INIT_SCHEMES})")
    return Tensor(data, requires_grad=True)


class ParameterStore:
    """Ordered map of named trainable tensors plus Adam state.

    Names are unique and shapes are fixed at creation; the first/second moment
    buffers always mirror the parameter shapes.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise AutodiffError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise AutodiffError(f"parameter {name!r} must require grad")
        self.params[name] = tensor
        self.m[name] = np.zeros_like(tensor.data)
        self.v[name] = np.zeros_like(tensor.data)
        return tensor

    def create(self, name: str, shape, scheme: str, prng: Prng) -> Tensor:
        return self.add(name, init_params(shape, scheme, prng))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def backfill_zero_grads(self) -> None:
        """Give zero gradients to parameters untouched by the last forward
        (e.g. a learned identity when no sample in the batch was empty)."""
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam with bias correction; clears gradients afterwards."""
    for name, p in store.params.items():
        if p.grad is None:
            raise AutodiffError(f"adam_step: parameter {name!r} has no gradient")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = None
