"""Central finite differences, the independent oracle for every backward rule."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        value = value.data
    return float(np.asarray(value).reshape(-1)[0])


def fd_gradient(f: Callable, x, eps: float = 1e-5, indices=None) -> np.ndarray:
    """(f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for each element i of ``x``.

    ``x`` may be a Tensor (perturbed in place and restored) or an array. With
    ``indices`` only those flat positions are evaluated; the rest stay zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    data = x.data if isinstance(x, Tensor) else x
    flat = data.reshape(-1)
    grad = np.zeros(data.size, dtype=np.float64)
    positions = range(data.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        up = _scalar(f(x))
        flat[i] = orig - eps
        down = _scalar(f(x))
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(data.shape)


def relative_error(g_ad, g_fd) -> float:
    """max|g_ad - g_fd| / max(1, max|g_fd|)."""
    g_ad = np.asarray(g_ad, dtype=np.float64)
    g_fd = np.asarray(g_fd, dtype=np.float64)
    if g_ad.size == 0:
        return 0.0
    return float(np.max(np.abs(g_ad - g_fd)) / max(1.0, float(np.max(np.abs(g_fd)))))
