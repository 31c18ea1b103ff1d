"""Central-difference gradient checking for taped computations."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Grid3, zero_grad


def numerical_grad(fn: Callable[[], Grid3], param: Grid3, step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to every entry of ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6,
                       atol: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    Entries where both ``|a|`` and ``|n|`` are below ``atol`` count as agreeing:
    a central difference with step 1e-6 carries ~1e-10 round-off for an O(1)
    loss, so a relative error on such an entry measures only noise.
    """
    if not analytic.size:
        return 0.0
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) / np.maximum(mag, floor)
    err[mag < atol] = 0.0
    return float(np.max(err))


def check_gradients(fn: Callable[[], Grid3], params: Sequence[Grid3], step: float = 1e-6,
                    floor: float = 1e-6, atol: float = 1e-8) -> dict[str, float]:
    """Compare taped gradients of ``fn()`` with central differences.

    Returns the worst relative error per parameter (keyed by name or position).
    """
    zero_grad(params)
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    errors = {}
    for i, (p, a) in enumerate(zip(params, analytic)):
        num = numerical_grad(fn, p, step)
        errors[p.name or str(i)] = max_relative_error(a, num, floor, atol)
    zero_grad(params)
    return errors
