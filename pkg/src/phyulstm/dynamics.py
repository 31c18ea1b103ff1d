"""Ground-truth SDOF simulator and synthetic ground motions.

The benchmark system is a Duffing-type oscillator under base excitation::

    m x'' + c x' + k1 x + k2 x^3 = -m * Gamma * ag(t)

integrated with classical RK4 on the first-order form, several substeps per
sample. The mass-normalized restoring force ``g = (c v + k1 x + k2 x^3) / m`` and the relative acceleration
``a = -g - Gamma * ag`` are filled in from the equation of motion.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal


@dataclass(frozen=True)
class OscillatorParams:
    m: float = 1.0
    c: float = 1.0
    k1: float = 20.0
    k2: float = 200.0
    Gamma: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if self.c < 0:
            raise ValueError(f"damping must be non-negative, got {self.c}")
        if not self.k1 > 0:
            raise ValueError(f"k1 must be positive, got {self.k1}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StateTrajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    g: np.ndarray
    ag: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)


def restoring_force(x, v, p: OscillatorParams):
    """Mass-normalized restoring force ``(c v + k1 x + k2 x^3) / m``."""
    return (p.c * v + p.k1 * x + p.k2 * x ** 3) / p.m


def simulate_response(ag, p: OscillatorParams, dt: float, x0: float = 0.0, v0: float = 0.0,
                      substeps: int = 4) -> StateTrajectory:
    """RK4 integration of the oscillator, reported on the ``dt`` grid of ``ag``.

    Each sample interval is split into ``substeps`` RK4 steps; ``ag`` is linearly
    interpolated inside the interval.
    """
    ag = np.asarray(ag, dtype=float)
    if not np.all(np.isfinite(ag)):
        raise ValueError("ground acceleration contains non-finite values")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    n = len(ag)
    x = np.empty(n)
    v = np.empty(n)
    x[0], v[0] = x0, v0
    G, m, c, k1, k2 = p.Gamma, p.m, p.c, p.k1, p.k2
    h = dt / substeps
    frac = np.arange(2 * substeps + 1) / (2 * substeps)

    def accel(xi, vi, agi):
        return -(c * vi + k1 * xi + k2 * xi ** 3) / m - G * agi

    xi, vi = float(x0), float(v0)
    for k in range(n - 1):
        sub = ag[k] + (ag[k + 1] - ag[k]) * frac
        for j in range(substeps):
            a0, amid, a1 = sub[2 * j], sub[2 * j + 1], sub[2 * j + 2]
            k1x, k1v = vi, accel(xi, vi, a0)
            k2x, k2v = vi + 0.5 * h * k1v, accel(xi + 0.5 * h * k1x, vi + 0.5 * h * k1v, amid)
            k3x, k3v = vi + 0.5 * h * k2v, accel(xi + 0.5 * h * k2x, vi + 0.5 * h * k2v, amid)
            k4x, k4v = vi + h * k3v, accel(xi + h * k3x, vi + h * k3v, a1)
            xi += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            vi += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        x[k + 1], v[k + 1] = xi, vi
    g = restoring_force(x, v, p)
    a = -g - G * ag
    return StateTrajectory(np.arange(n) * dt, x, v, a, g, ag.copy())


def generate_ground_motion(duration: float, dt: float, seed=None, intensity: float = 1.0,
                           f_band: tuple[float, float] = (1.0, 3.0), bandwidth: float = 1.0, order: int = 2,
                           envelope: tuple[float, float, float] = (0.1, 0.4, 0.5)) -> np.ndarray:
    """Band-limited stochastic acceleration with a trapezoidal envelope.

    Gaussian white noise is passed through a causal Butterworth band-pass filter of
    design order ``order`` whose center frequency is drawn uniformly from ``f_band``
    (Hz) and whose passband spans ``fc / (1 + bandwidth/2)`` to ``fc * (1 + bandwidth/2)``.
    The result is shaped by a rise/hold/decay envelope and scaled so that the peak
    absolute value equals ``intensity`` (m/s^2). ``n = round(duration / dt) + 1`` samples, t = 0 included.
    """
    n = int(round(duration / dt)) + 1
    if intensity == 0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    fc = rng.uniform(*f_band)
    noise = rng.standard_normal(n)
    nyq = 0.5 / dt
    lo = fc / (1.0 + 0.5 * bandwidth)
    hi = min(fc * (1.0 + 0.5 * bandwidth), 0.95 * nyq)
    sos = signal.butter(order, [lo / nyq, hi / nyq], btype="bandpass", output="sos")
    filtered = signal.sosfilt(sos, noise)
    rise, hold, _ = envelope
    s = np.arange(n) / max(n - 1, 1)
    env = np.clip(np.minimum(s / rise, (1.0 - s) / (1.0 - rise - hold)), 0.0, 1.0)
    series = filtered * env
    peak = np.max(np.abs(series))
    return series * (intensity / peak) if peak > 0 else series


def total_energy(x, v, p: OscillatorParams):
    """Kinetic plus potential energy per unit mass."""
    return 0.5 * v ** 2 + 0.5 * p.k1 * x ** 2 / p.m + 0.25 * p.k2 * x ** 4 / p.m
