"""Shared test utilities: finite-difference oracles and error norms."""

from __future__ import annotations

import numpy as np


def max_rel_err(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def fd_flat_gradient(loss_fn, net, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. the flat parameter vector."""
    base = net.flat_parameters()
    if indices is None:
        indices = range(base.size)
    grad = np.zeros(base.size)
    work = base.copy()
    for i in indices:
        work[i] = base[i] + step
        net.set_flat_parameters(work)
        up = loss_fn()
        work[i] = base[i] - step
        net.set_flat_parameters(work)
        down = loss_fn()
        work[i] = base[i]
        grad[i] = (up - down) / (2.0 * step)
    net.set_flat_parameters(base)
    return grad


def fd_input_gradient(per_sample_loss, x, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of each sample's own loss w.r.t. its components.

    ``per_sample_loss(batch)`` must return one loss value per row.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(len(x), -1)
    for j in range(flat.shape[1]):
        up = x.copy()
        up.reshape(len(x), -1)[:, j] += step
        down = x.copy()
        down.reshape(len(x), -1)[:, j] -= step
        flat[:, j] = (per_sample_loss(up) - per_sample_loss(down)) / (2.0 * step)
    return grad
