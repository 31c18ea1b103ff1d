"""Finite-difference time differentiator used to build the physics residuals.

First derivatives use second-order stencils: one-sided three-point formulas at the
two ends and the central difference everywhere else. The operator is applied as a
banded stencil along the time axis of a (B, T, C) grid and participates in the
tape; its backward pass is multiplication by the transposed matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Grid3, _result

_FIRST = (-1.5, 2.0, -0.5)
_LAST = (0.5, -2.0, 1.5)


@dataclass(frozen=True)
class FdMatrix:
    n: int
    dt: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"finite-difference matrix needs n >= 3, got {self.n}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def dense(self) -> np.ndarray:
        n = self.n
        phi = np.zeros((n, n))
        phi[0, :3] = _FIRST
        phi[-1, -3:] = _LAST
        idx = np.arange(1, n - 1)
        phi[idx, idx - 1] = -0.5
        phi[idx, idx + 1] = 0.5
        return phi / self.dt

    def apply(self, u: np.ndarray, axis: int | None = None) -> np.ndarray:
        """Apply the matrix along ``axis`` of a plain array (default: 0 for 1-D input, else 1)."""
        u = np.asarray(u, dtype=float)
        axis = _time_axis(u, axis)
        u = np.moveaxis(u, axis, 0)
        if u.shape[0] != self.n:
            raise ValueError(f"length mismatch: series has {u.shape[0]} steps, matrix expects {self.n}")
        out = np.empty_like(u)
        out[1:-1] = 0.5 * (u[2:] - u[:-2])
        out[0] = _FIRST[0] * u[0] + _FIRST[1] * u[1] + _FIRST[2] * u[2]
        out[-1] = _LAST[0] * u[-3] + _LAST[1] * u[-2] + _LAST[2] * u[-1]
        return np.moveaxis(out / self.dt, 0, axis)

    def apply_transpose(self, g: np.ndarray, axis: int | None = None) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        axis = _time_axis(g, axis)
        g = np.moveaxis(g, axis, 0)
        out = np.zeros_like(g)
        # interior rows i contribute -1/2 to column i-1 and +1/2 to column i+1
        out[:-2] -= 0.5 * g[1:-1]
        out[2:] += 0.5 * g[1:-1]
        for j, w in enumerate(_FIRST):
            out[j] += w * g[0]
        for j, w in enumerate(_LAST):
            out[self.n - 3 + j] += w * g[-1]
        return np.moveaxis(out / self.dt, 0, axis)


def _time_axis(u: np.ndarray, axis: int | None) -> int:
    if axis is not None:
        return axis
    return 0 if u.ndim == 1 else 1


def build_fd_matrix(n: int, dt: float) -> FdMatrix:
    return FdMatrix(int(n), float(dt))


def differentiate(u: Grid3, fd: FdMatrix) -> Grid3:
    """Time derivative of every channel of ``u`` (shape (B, T, C), T == fd.n)."""
    if u.shape[1] != fd.n:
        raise ValueError(f"differentiate: series length {u.shape[1]} != matrix size {fd.n}")
    out = fd.apply(u.data, axis=1)
    return _result(out, (u,), lambda g: ((u, fd.apply_transpose(g, axis=1)),))


def second_derivative(u: Grid3, fd: FdMatrix) -> Grid3:
    return differentiate(differentiate(u, fd), fd)
