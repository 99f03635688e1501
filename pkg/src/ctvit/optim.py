from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn import Parameter


class Optimizer:
    """SGD or bias-corrected Adam over a fixed, named parameter set.

    With ``snap_float32`` the updated values are rounded onto the float32 grid
    after every step, which keeps in-memory weights identical to what a
    float32 checkpoint stores.
    """

    def __init__(
        self,
        params: Iterable[tuple[str, Parameter]],
        kind: str = "adam",
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        snap_float32: bool = False,
    ):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.params = dict(params)
        self.kind = kind
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.snap_float32 = snap_float32
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        if kind == "adam":
            for name, p in self.params.items():
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"parameter {missing[0]!r} has no grad; run backward first")
        self.step_count += 1
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad
            if self.kind == "sgd":
                p.data -= self.lr * g
            else:
                m, v = self.m[name], self.v[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                m_hat = m / (1.0 - b1**self.step_count)
                v_hat = v / (1.0 - b2**self.step_count)
                p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.snap_float32:
                p.data[...] = p.data.astype(np.float32)
