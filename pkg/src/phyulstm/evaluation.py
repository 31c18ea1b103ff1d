"""Accuracy metrics and plot-ready exports for trained surrogates."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import GroundMotionRecord

REPORT_VERSION = 1
THRESHOLD = 0.9


def pearson_r(u, v) -> float:
    """Sample Pearson correlation of two equal-length series."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"pearson_r: length mismatch {u.size} vs {v.size}")
    if u.size < 2:
        raise ValueError("pearson_r needs at least two samples")
    du = u - u.mean()
    dv = v - v.mean()
    suu = float(du @ du)
    svv = float(dv @ dv)
    if suu == 0 or svv == 0:
        raise ValueError("pearson_r is undefined for a constant series")
    r = float(du @ dv) / math.sqrt(suu * svv)
    return max(-1.0, min(1.0, r))


@dataclass
class ChannelSummary:
    max: float | None
    min: float | None
    mean: float | None
    fraction_above: float
    n_valid: int


@dataclass
class EvalReport:
    regime: str
    dataset: str
    per_record: dict[str, dict[str, float | None]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    threshold: float = THRESHOLD
    provenance: dict = field(default_factory=dict)

    def channels(self) -> list[str]:
        names = []
        for rec in self.per_record.values():
            for ch in rec:
                if ch not in names:
                    names.append(ch)
        return names

    def correlations(self, channel: str) -> list[float | None]:
        return [rec.get(channel) for rec in self.per_record.values()]

    def summary(self, channel: str) -> ChannelSummary:
        """Aggregates over records; undefined correlations count as not exceeding the threshold."""
        rs = self.correlations(channel)
        valid = [r for r in rs if r is not None]
        frac = sum(r > self.threshold for r in valid) / len(rs) if rs else 0.0
        if not valid:
            return ChannelSummary(None, None, None, frac, 0)
        return ChannelSummary(max(valid), min(valid), float(np.mean(valid)), frac, len(valid))

    def to_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "regime": self.regime,
            "dataset": self.dataset,
            "threshold": self.threshold,
            "per_record": self.per_record,
            "failures": self.failures,
            "summary": {ch: vars(self.summary(ch)) for ch in self.channels()},
            "provenance": self.provenance,
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["regime"], d["dataset"], d["per_record"], d.get("failures", {}), d.get("threshold", THRESHOLD),
                   d.get("provenance", {}))


def evaluate_model(model, records: Sequence[GroundMotionRecord], regime: str = "full_state",
                   dataset: str = "", channels: Sequence[str] | None = None) -> EvalReport:
    """Correlate predictions with the truth for every record.

    ``model`` is anything with ``predict(ag, dt)`` returning an object with
    ``x``, ``v``, ``g`` and ``a`` arrays. Records whose correlation is undefined
    (constant prediction or truth) or whose prediction fails are flagged in
    ``failures`` and stored as ``None``.
    """
    records = list(records)
    if not records:
        raise ValueError("evaluate_model needs at least one record")
    if channels is None:
        channels = ("x",) if regime == "data_driven" else ("x", "v", "g")
    report = EvalReport(regime, dataset)
    for rec in records:
        try:
            pred = model.predict(rec.ag, rec.dt)
        except Exception as exc:  # keep evaluating the remaining records
            report.failures[rec.id] = f"prediction failed: {exc}"
            report.per_record[rec.id] = {ch: None for ch in channels if rec.has(ch)}
            continue
        row = {}
        for ch in channels:
            if not rec.has(ch):
                continue
            try:
                row[ch] = pearson_r(getattr(pred, ch), getattr(rec, ch))
            except ValueError as exc:
                row[ch] = None
                report.failures.setdefault(rec.id, f"{ch}: {exc}")
        report.per_record[rec.id] = row
    return report


def export_plot_data(pred, true, path, prefix: str = "record") -> dict[str, Path]:
    """Write time-history and hysteresis CSVs for one predicted/true trajectory pair.

    Files: ``<prefix>_history.csv`` (t and true/pred x, v, a, g),
    ``<prefix>_hysteresis_x.csv`` (x, g pairs) and ``<prefix>_hysteresis_v.csv``
    (v, g pairs).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = len(true.t)
    for ch in ("x", "v", "g"):
        if len(getattr(pred, ch)) != n:
            raise ValueError(f"export_plot_data: channel {ch} length {len(getattr(pred, ch))} != {n}")

    def write(name, header, cols):
        f = path / f"{prefix}_{name}.csv"
        with open(f, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return f

    out = {}
    hist_header = ["t"]
    hist_cols = [true.t]
    for ch in ("x", "v", "a", "g"):
        hist_header += [f"{ch}_true", f"{ch}_pred"]
        hist_cols += [getattr(true, ch), getattr(pred, ch)]
    out["history"] = write("history", hist_header, hist_cols)
    out["hysteresis_x"] = write("hysteresis_x", ["x_true", "g_true", "x_pred", "g_pred"],
                                [true.x, true.g, pred.x, pred.g])
    out["hysteresis_v"] = write("hysteresis_v", ["v_true", "g_true", "v_pred", "g_pred"],
                                [true.v, true.g, pred.v, pred.g])
    return out
