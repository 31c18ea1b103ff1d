"""Record collections: generation, CSV/JSON persistence, splitting and normalization.

On disk a collection is a directory with ``manifest.json`` and one CSV per record
with header ``t,ag[,x,v,a,g]``. Reals are written with 17 significant digits so a
save/load round trip is exact.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import OscillatorParams, generate_ground_motion, simulate_response

log = logging.getLogger(__name__)

STATE_CHANNELS = ("x", "v", "a", "g")
OUTPUT_CHANNELS = ("x", "v", "g")
MANIFEST = "manifest.json"


@dataclass
class GroundMotionRecord:
    id: str
    dt: float
    ag: np.ndarray
    x: np.ndarray | None = None
    v: np.ndarray | None = None
    a: np.ndarray | None = None
    g: np.ndarray | None = None
    split: str = "test"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"record {self.id}: dt must be positive")
        self.ag = np.asarray(self.ag, dtype=float)
        n = len(self.ag)
        for ch in STATE_CHANNELS:
            arr = getattr(self, ch)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if len(arr) != n:
                    raise ValueError(f"record {self.id}: channel {ch} has {len(arr)} samples, ag has {n}")
                setattr(self, ch, arr)

    def __len__(self) -> int:
        return len(self.ag)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def has(self, channel: str) -> bool:
        return getattr(self, channel) is not None

    @property
    def available(self) -> tuple[str, ...]:
        return tuple(ch for ch in STATE_CHANNELS if self.has(ch))

    def without(self, *channels: str) -> "GroundMotionRecord":
        """Copy with the named state channels removed (simulates missing sensors)."""
        kw = {ch: (None if ch in channels else getattr(self, ch)) for ch in STATE_CHANNELS}
        return GroundMotionRecord(self.id, self.dt, self.ag, split=self.split, **kw)


@dataclass
class RecordCollection:
    records: list[GroundMotionRecord]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def by_split(self, tag: str) -> list[GroundMotionRecord]:
        return [r for r in self.records if r.split == tag]

    @property
    def dt(self) -> float:
        return self.records[0].dt


def generate_synthetic_dataset(n_records: int, duration: float, dt: float,
                               params: OscillatorParams | None = None, seed: int = 0,
                               intensity: float | tuple[float, float] = 3.0,
                               f_band: tuple[float, float] = (1.0, 3.0)) -> RecordCollection:
    """Simulate ``n_records`` independent seeded ground motions through the oscillator.

    ``intensity`` is either a fixed peak ground acceleration or a (low, high) range
    sampled uniformly per record.
    """
    params = params or OscillatorParams()
    seeds = np.random.SeedSequence(seed).spawn(n_records)
    records = []
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        if isinstance(intensity, (tuple, list)):
            pga = float(rng.uniform(*intensity))
        else:
            pga = float(intensity)
        ag = generate_ground_motion(duration, dt, rng, pga, f_band=f_band)
        traj = simulate_response(ag, params, dt)
        records.append(GroundMotionRecord(f"rec{k:04d}", dt, ag, traj.x, traj.v, traj.a, traj.g))
    meta = {"seed": seed, "dt": dt, "duration": duration, "n_records": n_records,
            "intensity": list(intensity) if isinstance(intensity, (tuple, list)) else intensity,
            "f_band": list(f_band), "params": params.to_dict()}
    return RecordCollection(records, meta)


def split(collection: RecordCollection, n_train: int, seed: int = 0) -> RecordCollection:
    """Tag ``n_train`` randomly chosen records ``train`` and the rest ``test`` (in place)."""
    n = len(collection)
    if n_train >= n:
        raise ValueError(f"n_train={n_train} must be smaller than the number of records ({n})")
    if n_train < 0:
        raise ValueError("n_train must be non-negative")
    chosen = set(np.random.default_rng(seed).choice(n, size=n_train, replace=False).tolist())
    for i, rec in enumerate(collection.records):
        rec.split = "train" if i in chosen else "test"
    collection.meta["split_seed"] = seed
    collection.meta["n_train"] = n_train
    return collection


# ---------------------------------------------------------------------------
# normalization


@dataclass
class Normalizer:
    """Affine constants: ``normalized = (value - offset) / scale`` per channel."""

    ag_scale: float
    out_scale: np.ndarray
    out_offset: np.ndarray
    channels: tuple[str, ...] = OUTPUT_CHANNELS

    def __post_init__(self):
        self.out_scale = np.asarray(self.out_scale, dtype=float)
        self.out_offset = np.asarray(self.out_offset, dtype=float)
        if self.ag_scale <= 0 or np.any(self.out_scale <= 0):
            raise ValueError("normalizer scales must be positive")

    def apply_ag(self, ag):
        return np.asarray(ag) / self.ag_scale

    def invert_ag(self, ag_n):
        return np.asarray(ag_n) * self.ag_scale

    def apply(self, z):
        """Normalize an array whose last axis holds the output channels."""
        return (np.asarray(z) - self.out_offset) / self.out_scale

    def invert(self, zn):
        return np.asarray(zn) * self.out_scale + self.out_offset

    def to_dict(self) -> dict:
        return {"ag_scale": self.ag_scale, "out_scale": self.out_scale.tolist(),
                "out_offset": self.out_offset.tolist(), "channels": list(self.channels)}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(float(d["ag_scale"]), d["out_scale"], d["out_offset"], tuple(d["channels"]))


def fit_normalizer(train: Sequence[GroundMotionRecord], channels: Sequence[str] = OUTPUT_CHANNELS,
                   Gamma: float = 1.0) -> Normalizer:
    """Fit normalization constants on training records only.

    ``ag`` is scaled by its peak magnitude. Each output channel with labels is
    standardized; a zero-variance channel keeps scale 1. Channels without labels
    fall back to estimates from measured acceleration (see
    :func:`acceleration_based_scales`).
    """
    train = list(train)
    if not train:
        raise ValueError("cannot fit a normalizer on an empty training split")
    ag_peak = max(float(np.max(np.abs(r.ag))) for r in train)
    ag_scale = ag_peak if ag_peak > 0 else 1.0
    fallback = None
    scale, offset = [], []
    for ch in channels:
        if all(r.has(ch) for r in train):
            vals = np.concatenate([getattr(r, ch) for r in train])
            mu, sd = float(vals.mean()), float(vals.std())
            if sd == 0:
                log.warning("channel %s has zero variance on the training split; using scale 1", ch)
                sd = 1.0
            offset.append(mu)
            scale.append(sd)
        else:
            if fallback is None:
                fallback = acceleration_based_scales(train, Gamma)
            offset.append(0.0)
            scale.append(fallback[ch])
    return Normalizer(ag_scale, scale, offset, tuple(channels))


def acceleration_based_scales(train: Sequence[GroundMotionRecord], Gamma: float = 1.0) -> dict[str, float]:
    """Rough channel scales when only acceleration is measured.

    The dominant angular frequency of the measured relative acceleration
    (power-weighted mean) converts its RMS into displacement and velocity scales;
    the restoring force scale comes from ``g = -a - Gamma * ag``.
    """
    if not all(r.has("a") for r in train):
        a_rms = float(np.sqrt(np.mean(np.concatenate([r.ag for r in train]) ** 2))) or 1.0
        return {"x": a_rms, "v": a_rms, "g": a_rms, "a": a_rms}
    num = den = 0.0
    for r in train:
        spec = np.abs(np.fft.rfft(r.a)) ** 2
        freqs = np.fft.rfftfreq(len(r.a), r.dt)
        num += float(np.sum(spec[1:] * freqs[1:]))
        den += float(np.sum(spec[1:]))
    omega = 2 * math.pi * (num / den if den > 0 else 1.0)
    a_all = np.concatenate([r.a for r in train])
    g_all = np.concatenate([-r.a - Gamma * r.ag for r in train])
    a_rms = float(np.sqrt(np.mean(a_all ** 2))) or 1.0
    g_rms = float(np.sqrt(np.mean(g_all ** 2))) or 1.0
    return {"x": a_rms / omega ** 2, "v": a_rms / omega, "g": g_rms, "a": a_rms}


# ---------------------------------------------------------------------------
# persistence


def save_records(path, collection: RecordCollection | Iterable[GroundMotionRecord]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not isinstance(collection, RecordCollection):
        collection = RecordCollection(list(collection))
    entries = []
    for rec in collection.records:
        fname = f"{rec.id}.csv"
        cols = ["t", "ag"] + [ch for ch in STATE_CHANNELS if rec.has(ch)]
        arrays = [rec.t, rec.ag] + [getattr(rec, ch) for ch in cols[2:]]
        with open(path / fname, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(*arrays):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        entries.append({"id": rec.id, "file": fname, "dt": rec.dt, "n": len(rec),
                        "split": rec.split, "channels": cols})
    manifest = {"format": "phyulstm-records", "version": 1, "units": {
        "t": "s", "ag": "m/s^2", "x": "m", "v": "m/s", "a": "m/s^2", "g": "m/s^2"},
        "meta": collection.meta, "records": entries}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_record_csv(file, dt: float | None = None, record_id: str | None = None,
                    split_tag: str = "test") -> GroundMotionRecord:
    """Read one record CSV; the time column must be uniform to within 1e-9 * dt."""
    file = Path(file)
    with open(file, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{file}: empty file") from None
        for required in ("t", "ag"):
            if required not in header:
                raise ValueError(f"{file}: missing required column {required!r} (header {header})")
        unknown = set(header) - {"t", "ag", *STATE_CHANNELS}
        if unknown:
            raise ValueError(f"{file}: unknown columns {sorted(unknown)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{file}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{file}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise ValueError(f"{file}: need at least two samples")
    data = np.array(rows)
    cols = {name: data[:, k] for k, name in enumerate(header)}
    t = cols["t"]
    step = dt if dt is not None else float(t[1] - t[0])
    if not step > 0:
        raise ValueError(f"{file}: non-increasing time column")
    expected = t[0] + np.arange(len(t)) * step
    bad = np.nonzero(np.abs(t - expected) > 1e-9 * step)[0]
    if bad.size:
        raise ValueError(f"{file}:{int(bad[0]) + 2}: non-uniform time stamp {t[bad[0]]!r}, expected {expected[bad[0]]!r}")
    return GroundMotionRecord(record_id or file.stem, step, cols["ag"],
                              **{ch: cols.get(ch) for ch in STATE_CHANNELS}, split=split_tag)


def load_records(path) -> RecordCollection:
    path = Path(path)
    manifest_file = path / MANIFEST
    if not manifest_file.exists():
        raise FileNotFoundError(f"{manifest_file}: manifest not found")
    manifest = json.loads(manifest_file.read_text())
    records = []
    for entry in manifest["records"]:
        rec = load_record_csv(path / entry["file"], dt=entry.get("dt"), record_id=entry["id"],
                              split_tag=entry.get("split", "test"))
        if "n" in entry and len(rec) != entry["n"]:
            raise ValueError(f"{path / entry['file']}: manifest says {entry['n']} samples, file has {len(rec)}")
        records.append(rec)
    return RecordCollection(records, manifest.get("meta", {}))
