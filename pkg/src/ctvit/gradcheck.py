"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    vanishing gradients from turning rounding noise into large ratios."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> list[float]:
    """Max relative error per tensor between backprop and finite differences."""
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    errors = []
    for t, a in zip(tensors, analytic):
        n = numerical_grad(lambda: loss_fn().item(), t.data, h)
        errors.append(float(relative_error(a, n, floor).max()) if a.size else 0.0)
    return errors


def projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """``sum(out * R)`` for a fixed random R, so every output element matters."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return (out * r).sum()
