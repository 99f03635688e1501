"""Parameter containers and the two leaf layers everything else is built from."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor, layer_norm, matmul


class Parameter(Tensor):
    """A trainable tensor. ``init`` names the initialiser applied by
    :meth:`Module.initialize` (``normal``, ``zeros`` or ``ones``)."""

    __slots__ = ("init",)

    def __init__(self, shape, init: str = "normal"):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init


class Module:
    """Walks attributes in definition order to produce dotted parameter names."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            yield from _walk(value, prefix + attr)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def initialize(self, seed: int, std: float = 0.02) -> None:
        """Fill every parameter from a stream keyed on (seed, name), so a
        parameter's initial value does not depend on which other modules exist."""
        for name, p in self.named_parameters():
            if p.init == "zeros":
                p.data[...] = 0.0
            elif p.init == "ones":
                p.data[...] = 1.0
            else:
                rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
                p.data[...] = truncated_normal(rng, p.shape, std)
            # values live on the float32 grid so checkpoints round-trip exactly
            p.data[...] = p.data.astype(np.float32)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        for name, p in own.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {arrays[name].shape} vs model {p.shape}"
                )
        extra = set(arrays) - set(own)
        if extra:
            raise KeyError(f"unexpected parameter {sorted(extra)[0]!r}")
        for name, p in own.items():
            p.data[...] = arrays[name]


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound * std
    return out


class Linear(Module):
    """``y = x W + b`` with ``W`` stored as (in, out)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter((d_in, d_out))
        self.bias = Parameter((d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Parameter((dim,), init="ones")
        self.beta = Parameter((dim,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)
