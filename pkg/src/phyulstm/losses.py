"""Loss regimes for training the surrogate.

Predictions are (B, T, 3) grids with channels (x, v, g). Data terms compare
predictions with measurements in whatever units both are given (the trainer
passes normalized values); physics terms need physical units, so they accept an
optional :class:`~phyulstm.datasets.Normalizer` to de-normalize predictions
first. Every mean-square term averages over all scalar samples of the batch.

* ``full_state``: data terms on the measured channels plus the consistency term
  ``v - D x`` and the equation-of-motion residual ``D v + g + Gamma * ag``.
* ``accel_only``: consistency, acceleration match ``D v - a_m`` and residual.
* ``data_driven``: acceleration match on the twice-differentiated displacement.

``D`` is the finite-difference differentiator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Grid3, add, affine_channels, channel, mean_square
from .differentiator import FdMatrix, differentiate, second_derivative

CHANNEL_INDEX = {"x": 0, "v": 1, "g": 2}
REGIMES = ("full_state", "accel_only", "data_driven")
REQUIRED_CHANNELS = {"full_state": None, "accel_only": ("a",), "data_driven": ("a",)}


@dataclass
class LossBreakdown:
    total: Grid3
    components: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.total.data)

    def weighted_sum(self) -> float:
        return sum(self.weights[k] * v for k, v in self.components.items())

    def as_dict(self) -> dict[str, float]:
        return {"total": self.value, **self.components}


def _as3(a) -> Grid3:
    """Accept (B, T) or (B, T, 1) arrays or grids and return a (B, T, 1) grid."""
    if isinstance(a, Grid3):
        return a if a.data.ndim == 3 else Grid3(a.data[..., None])
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return Grid3(a[..., None] if a.ndim == 2 else a)


def _physical(pred: Grid3, normalizer) -> Grid3:
    if normalizer is None:
        return pred
    return affine_channels(pred, normalizer.out_scale, normalizer.out_offset)


def _check_length(pred: Grid3, fd: FdMatrix) -> None:
    if pred.shape[1] != fd.n:
        raise ValueError(f"prediction length {pred.shape[1]} does not match differentiator size {fd.n}")


def data_loss(pred: Grid3, measured: Mapping[str, object]) -> tuple[Grid3, dict[str, float]]:
    """Sum of mean-square errors over the available channels among x, v, g.

    ``measured`` maps channel name to a (B, T) array or ``None`` when the
    channel was not measured; missing channels are omitted.
    """
    terms = {}
    for name, idx in CHANNEL_INDEX.items():
        m = measured.get(name)
        if m is None:
            continue
        terms[f"data_{name}"] = mean_square(channel(pred, idx) - _as3(m))
    if not terms:
        raise ValueError("data_loss: no measured channels available")
    total = None
    for t in terms.values():
        total = t if total is None else add(total, t)
    return total, {k: float(v.data) for k, v in terms.items()}


def _residual_terms(pred: Grid3, fd: FdMatrix, ag, Gamma: float, normalizer=None):
    _check_length(pred, fd)
    z = _physical(pred, normalizer)
    x, v, g = channel(z, 0), channel(z, 1), channel(z, 2)
    v_t = differentiate(v, fd)
    consistency = mean_square(v - differentiate(x, fd))
    residual = mean_square(v_t + g + _as3(ag) * Gamma)
    return v_t, consistency, residual


def physics_loss(pred: Grid3, fd: FdMatrix, ag, Gamma: float = 1.0,
                 normalizer=None) -> tuple[Grid3, dict[str, float]]:
    _, consistency, residual = _residual_terms(pred, fd, ag, Gamma, normalizer)
    comps = {"consistency": float(consistency.data), "physics_residual": float(residual.data)}
    return add(consistency, residual), comps


def combined_loss(pred: Grid3, measured: Mapping[str, object], fd: FdMatrix, ag, w1: float = 1.0,
                  w2: float = 1.0, Gamma: float = 1.0, normalizer=None) -> LossBreakdown:
    """``w1 * data + w2 * physics``; ``measured`` must be in the same units as ``pred``."""
    jd, dcomp = data_loss(pred, measured)
    jp, pcomp = physics_loss(pred, fd, ag, Gamma, normalizer)
    total = add(jd * w1, jp * w2)
    weights = {k: w1 for k in dcomp} | {k: w2 for k in pcomp}
    return LossBreakdown(total, dcomp | pcomp, weights)


def accel_only_loss(pred: Grid3, measured_a, fd: FdMatrix, ag, Gamma: float = 1.0,
                    normalizer=None) -> LossBreakdown:
    """Consistency + acceleration match + equation residual, all in physical units."""
    if measured_a is None:
        raise ValueError("accel_only_loss needs measured acceleration")
    v_t, consistency, residual = _residual_terms(pred, fd, ag, Gamma, normalizer)
    match = mean_square(v_t - _as3(measured_a))
    total = add(add(consistency, match), residual)
    comps = {"consistency": float(consistency.data), "accel_match": float(match.data),
             "physics_residual": float(residual.data)}
    return LossBreakdown(total, comps, {k: 1.0 for k in comps})


def datadriven_loss(pred_x, measured_a, fd: FdMatrix, normalizer=None) -> LossBreakdown:
    """Mean-square mismatch between measured acceleration and ``D(D x)``.

    ``pred_x`` is either the displacement grid (B, T, 1) in physical units or the
    full normalized prediction (B, T, 3) together with ``normalizer``.
    """
    if measured_a is None:
        raise ValueError("datadriven_loss needs measured acceleration")
    x = pred_x if isinstance(pred_x, Grid3) else _as3(pred_x)
    if normalizer is not None:
        x = affine_channels(channel(x, 0), normalizer.out_scale[:1], normalizer.out_offset[:1])
    elif x.data.ndim == 3 and x.shape[-1] > 1:
        x = channel(x, 0)
    _check_length(x, fd)
    match = mean_square(_as3(measured_a) - second_derivative(x, fd))
    return LossBreakdown(match, {"accel_match": float(match.data)}, {"accel_match": 1.0})


def regime_loss(regime: str, pred: Grid3, measured: Mapping[str, object], fd: FdMatrix, ag,
                Gamma: float = 1.0, normalizer=None, w1: float = 1.0, w2: float = 1.0) -> LossBreakdown:
    """Dispatch on the training regime.

    ``measured`` holds physical-unit (B, T) arrays keyed by x, v, g, a (``None``
    when absent); data terms are taken on normalized values when a normalizer is
    given.
    """
    if regime == "full_state":
        data = {}
        for name, idx in CHANNEL_INDEX.items():
            m = measured.get(name)
            if m is not None and normalizer is not None:
                m = (np.asarray(m) - normalizer.out_offset[idx]) / normalizer.out_scale[idx]
            data[name] = m
        return combined_loss(pred, data, fd, ag, w1, w2, Gamma, normalizer)
    if regime == "accel_only":
        return accel_only_loss(pred, measured.get("a"), fd, ag, Gamma, normalizer)
    if regime == "data_driven":
        return datadriven_loss(pred, measured.get("a"), fd, normalizer)
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
