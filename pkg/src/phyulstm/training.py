"""The U-Net -> deep LSTM surrogate, its Adam trainer and checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"PHYULSTM"  | uint64 header length | UTF-8 JSON header | float64 payload

The header lists every array (parameters and batch-norm running statistics) with
its name, shape and element offset into the payload, plus the model
configuration, normalizer, training configuration and final metrics.
"""
from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Grid3, zero_grad
from .datasets import GroundMotionRecord, Normalizer, fit_normalizer
from .differentiator import FdMatrix, build_fd_matrix
from .dynamics import StateTrajectory
from .losses import REGIMES, LossBreakdown, regime_loss
from .lstm import DeepLstm
from .unet import UNetParams, UNetPlan, unet_forward

log = logging.getLogger(__name__)

MAGIC = b"PHYULSTM"
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    plan: UNetPlan = field(default_factory=UNetPlan)
    lstm_hidden: tuple[int, ...] = (100, 100)
    dense: tuple[int, ...] = (100,)
    forget_bias: float = 1.0

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "lstm_hidden": list(self.lstm_hidden),
                "dense": list(self.dense), "forget_bias": self.forget_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(UNetPlan.from_dict(d["plan"]), tuple(d["lstm_hidden"]), tuple(d["dense"]),
                   float(d.get("forget_bias", 1.0)))


@dataclass
class TrainConfig:
    regime: str = "full_state"
    epochs: int = 5000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 500
    min_delta: float = 1e-6
    seed: int = 0
    w1: float = 1.0
    w2: float = 1.0
    log_every: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class PhyULSTM:
    """Causal U-Net feature extractor feeding a deep LSTM with a dense head.

    The network works on normalized values: input is ``ag / ag_scale`` and the
    three outputs are the normalized (x, v, g).
    """

    def __init__(self, config: ModelConfig | None = None, normalizer: Normalizer | None = None,
                 dt: float = 0.05, Gamma: float = 1.0, regime: str = "full_state", seed: int = 0):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.unet = UNetParams.init(self.config.plan, rng)
        self.lstm = DeepLstm.init(self.config.plan.out_channels, self.config.lstm_hidden, self.config.dense,
                                  3, rng, self.config.forget_bias)
        self.normalizer = normalizer or Normalizer(1.0, np.ones(3), np.zeros(3))
        self.dt = float(dt)
        self.Gamma = float(Gamma)
        self.regime = regime
        self.seed = seed
        self.train_config: TrainConfig | None = None
        self.metrics: dict = {}
        self.provenance: dict = {}

    # parameters ------------------------------------------------------------------
    def named_parameters(self) -> dict[str, Grid3]:
        out = {f"unet.{k}": v for k, v in self.unet.named_parameters().items()}
        out.update({f"lstm.{k}": v for k, v in self.lstm.named_parameters().items()})
        return out

    def parameters(self) -> list[Grid3]:
        return list(self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array that defines the model: parameters then batch-norm running stats."""
        out = {k: p.data for k, p in self.named_parameters().items()}
        for name, bn in self.unet.batch_norm_states().items():
            out[f"unet.{name}.running_mean"] = bn.mean
            out[f"unet.{name}.running_var"] = bn.var
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        bns = self.unet.batch_norm_states()
        for k, v in arrays.items():
            if k in params:
                params[k].data[...] = v
            elif k.endswith(".running_mean"):
                bns[k[len("unet."):-len(".running_mean")]].mean = np.array(v, dtype=float)
            elif k.endswith(".running_var"):
                bns[k[len("unet."):-len(".running_var")]].var = np.array(v, dtype=float)
            else:
                raise KeyError(f"unknown model array {k!r}")

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # forward -----------------------------------------------------------------------
    def forward(self, ag_norm: Grid3, mode: str = "infer") -> Grid3:
        """(B, T, 1) normalized ground acceleration -> (B, T, 3) normalized outputs."""
        features = unet_forward(ag_norm, self.unet, mode)
        return self.lstm.forward(features)

    def predict(self, ag, dt: float | None = None) -> StateTrajectory:
        return predict(self, ag, dt)


def check_regime(records: Sequence[GroundMotionRecord], regime: str) -> None:
    """Reject a dataset that lacks the channels the regime trains on."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    for r in records:
        if regime == "full_state":
            if not any(r.has(ch) for ch in ("x", "v", "g")):
                raise ValueError(f"regime full_state needs at least one of x, v, g; record {r.id} has none")
        elif not r.has("a"):
            raise ValueError(f"regime {regime} needs measured acceleration; record {r.id} has none")


def _stack(records: Sequence[GroundMotionRecord]):
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ValueError(f"records in one batch must share a length, got {sorted(lengths)}")
    dts = {r.dt for r in records}
    if max(dts) - min(dts) > 1e-9 * max(dts):
        raise ValueError(f"records in one batch must share dt, got {sorted(dts)}")
    ag = np.stack([r.ag for r in records])
    measured = {}
    for ch in ("x", "v", "g", "a"):
        measured[ch] = np.stack([getattr(r, ch) for r in records]) if all(r.has(ch) for r in records) else None
    return ag, measured


def _labels_for_regime(measured: dict, regime: str) -> dict:
    if regime == "full_state":
        return {ch: measured[ch] for ch in ("x", "v", "g")}
    return {"a": measured["a"]}


# ---------------------------------------------------------------------------
# Adam


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``; ``t`` starts at 1."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: Sequence[Grid3], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, m, v, self.t, self.lr, *self.betas, self.eps)

    def zero_grad(self) -> None:
        zero_grad(self.params)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PhyULSTM
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    stopped: str = "completed"


def _batch_loss(model: PhyULSTM, ag: np.ndarray, labels: dict, fd: FdMatrix, cfg: TrainConfig,
                mode: str) -> LossBreakdown:
    x_in = Grid3(model.normalizer.apply_ag(ag)[..., None])
    pred = model.forward(x_in, mode)
    return regime_loss(cfg.regime, pred, labels, fd, ag, model.Gamma, model.normalizer, cfg.w1, cfg.w2)


def train(records: Sequence[GroundMotionRecord], config: TrainConfig | None = None,
          model_config: ModelConfig | None = None, Gamma: float = 1.0,
          model: PhyULSTM | None = None) -> TrainResult:
    """Full-batch Adam on the training split of ``records``.

    Records tagged ``train`` form the batch; records tagged ``val`` (if any) are
    monitored for early stopping, otherwise the training loss is. Records tagged
    ``test`` are never touched. The parameters with the lowest monitored loss are
    restored before returning.
    """
    cfg = config or TrainConfig()
    train_recs = [r for r in records if r.split == "train"]
    val_recs = [r for r in records if r.split == "val"]
    if not train_recs:
        raise ValueError("training split is empty")
    check_regime(train_recs + val_recs, cfg.regime)

    labelled = [r if cfg.regime == "full_state" else r.without("x", "v", "g") for r in train_recs]
    normalizer = fit_normalizer(labelled, Gamma=Gamma)
    if model is None:
        model = PhyULSTM(model_config, normalizer, train_recs[0].dt, Gamma, cfg.regime, cfg.seed)
    else:
        model.normalizer, model.regime = normalizer, cfg.regime
    model.train_config = cfg

    ag, measured = _stack(train_recs)
    labels = _labels_for_regime(measured, cfg.regime)
    fd = build_fd_matrix(ag.shape[1], model.dt)
    if val_recs:
        vag, vmeasured = _stack(val_recs)
        vlabels = _labels_for_regime(vmeasured, cfg.regime)
        vfd = build_fd_matrix(vag.shape[1], model.dt)

    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    result = TrainResult(model)
    best_state = model.snapshot()
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        state_before = model.snapshot()
        opt.zero_grad()
        loss = _batch_loss(model, ag, labels, fd, cfg, "train")
        if not math.isfinite(loss.value):
            log.error("loss became non-finite at epoch %d; keeping the last finite parameters", epoch)
            model.restore(best_state)
            result.stopped = "diverged"
            break
        loss.total.backward()
        monitored = loss.value
        entry = {"epoch": epoch, **loss.as_dict()}
        if val_recs:
            monitored = _batch_loss(model, vag, vlabels, vfd, cfg, "infer").value
            entry["val_total"] = monitored
        result.history.append(entry)
        if monitored < result.best_loss - cfg.min_delta:
            result.best_loss, result.best_epoch = monitored, epoch
            # parameters that produced this loss, with the batch statistics it saw folded in
            best_state = state_before
            best_state.update({k: v.copy() for k, v in model.state_arrays().items() if "running_" in k})
            since_best = 0
        else:
            since_best += 1
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.6g %s", epoch, loss.value, loss.components)
        if since_best >= cfg.patience:
            result.stopped = "early_stop"
            break
        opt.step()
    if cfg.epochs > 0:
        model.restore(best_state)
    model.metrics = {"best_epoch": result.best_epoch,
                     "best_loss": result.best_loss if math.isfinite(result.best_loss) else None,
                     "epochs_run": len(result.history), "stopped": result.stopped}
    return result


# ---------------------------------------------------------------------------
# inference


def predict(model: PhyULSTM, ag, dt: float | None = None) -> StateTrajectory:
    """Predict (x, v, g) in physical units for one record (1-D ``ag``) or a batch (2-D)."""
    ag = np.asarray(ag, dtype=float)
    single = ag.ndim == 1
    batch = ag[None, :] if single else ag
    dt = model.dt if dt is None else float(dt)
    if abs(dt - model.dt) > 1e-9:
        warnings.warn(f"record dt {dt} differs from training dt {model.dt}; differentiator rebuilt",
                      stacklevel=2)
    T = batch.shape[1]
    zn = model.forward(Grid3(model.normalizer.apply_ag(batch)[..., None]), "infer").data
    z = model.normalizer.invert(zn)
    x, v, g = z[..., 0], z[..., 1], z[..., 2]
    fd = build_fd_matrix(T, dt)
    if model.regime == "data_driven":
        a = fd.apply(fd.apply(x, axis=1), axis=1)
    else:
        a = fd.apply(v, axis=1)
    t = np.arange(T) * dt
    if single:
        return StateTrajectory(t, x[0], v[0], a[0], g[0], batch[0])
    return StateTrajectory(t, x, v, a, g, batch)


# ---------------------------------------------------------------------------
# checkpoints


def _header(model: PhyULSTM) -> tuple[dict, list[np.ndarray]]:
    arrays = []
    entries = []
    offset = 0
    for name, arr in model.state_arrays().items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        arrays.append(arr)
    header = {
        "format": "phyulstm-checkpoint",
        "version": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "dt": model.dt,
        "Gamma": model.Gamma,
        "regime": model.regime,
        "seed": model.seed,
        "train_config": model.train_config.to_dict() if model.train_config else None,
        "metrics": model.metrics,
        "provenance": model.provenance,
        "arrays": entries,
        "payload_values": offset,
    }
    return header, arrays


def save_checkpoint(path, model: PhyULSTM) -> Path:
    path = Path(path)
    header, arrays = _header(model)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    path.write_bytes(MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload)
    return path


def load_checkpoint(path) -> PhyULSTM:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a phyulstm checkpoint (bad magic)")
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header length")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + hlen])
    except ValueError as exc:
        raise ValueError(f"{path}: corrupt header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}, "
                         f"expected {FORMAT_VERSION}")
    payload = blob[16 + hlen:]
    expected = 8 * int(header["payload_values"])
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f8")

    model = PhyULSTM(ModelConfig.from_dict(header["model"]), Normalizer.from_dict(header["normalizer"]),
                     header["dt"], header["Gamma"], header["regime"], header["seed"])
    reference = model.state_arrays()
    arrays = {}
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in reference:
            raise ValueError(f"{path}: array {name!r} does not belong to the model plan")
        if reference[name].shape != shape:
            raise ValueError(f"{path}: array {name!r} has shape {shape}, plan expects {reference[name].shape}")
        size = int(np.prod(shape))
        arrays[name] = values[entry["offset"]:entry["offset"] + size].reshape(shape).astype(float)
    missing = set(reference) - set(arrays)
    if missing:
        raise ValueError(f"{path}: checkpoint lacks arrays {sorted(missing)[:5]}")
    model.restore(arrays)
    if header.get("train_config"):
        model.train_config = TrainConfig.from_dict(header["train_config"])
    model.metrics = header.get("metrics", {})
    model.provenance = header.get("provenance", {})
    return model
