"""LSTM cell, sequence layer and the deep LSTM stack with a dense head.

The layer is one taped primitive: the forward pass unrolls the cell over time
and keeps the gate activations, and the backward pass runs backpropagation
through time by hand. That keeps the tape to one node per layer instead of
dozens per time step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Grid3, _result, _sigmoid, activation, dense_timewise, parameter

GATES = ("f", "i", "c", "o")


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(np.zeros((batch, hidden)), np.zeros((batch, hidden)))


@dataclass
class LstmCellParams:
    """The twelve arrays of one layer: ``W_x*`` (Cin, H), ``W_h*`` (H, H), ``b_*`` (H,)."""

    W_xf: Grid3
    W_xi: Grid3
    W_xc: Grid3
    W_xo: Grid3
    W_hf: Grid3
    W_hi: Grid3
    W_hc: Grid3
    W_ho: Grid3
    b_f: Grid3
    b_i: Grid3
    b_c: Grid3
    b_o: Grid3

    def __post_init__(self):
        cin, H = self.W_xf.shape
        for g in GATES:
            wx, wh, b = self.wx(g), self.wh(g), self.b(g)
            if wx.shape != (cin, H) or wh.shape != (H, H) or b.shape != (H,):
                raise ValueError(f"inconsistent LSTM gate {g!r}: W_x{g} {wx.shape}, "
                                 f"W_h{g} {wh.shape}, b_{g} {b.shape}")

    @property
    def input_size(self) -> int:
        return self.W_xf.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_xf.shape[1]

    def wx(self, gate: str) -> Grid3:
        return getattr(self, f"W_x{gate}")

    def wh(self, gate: str) -> Grid3:
        return getattr(self, f"W_h{gate}")

    def b(self, gate: str) -> Grid3:
        return getattr(self, f"b_{gate}")

    def arrays(self) -> list[Grid3]:
        return [self.wx(g) for g in GATES] + [self.wh(g) for g in GATES] + [self.b(g) for g in GATES]

    def named(self, prefix: str) -> dict[str, Grid3]:
        out = {}
        for g in GATES:
            out[f"{prefix}.W_x{g}"] = self.wx(g)
        for g in GATES:
            out[f"{prefix}.W_h{g}"] = self.wh(g)
        for g in GATES:
            out[f"{prefix}.b_{g}"] = self.b(g)
        return out

    def stacked(self):
        """Gate arrays concatenated along the hidden axis in f, i, c, o order."""
        Wx = np.concatenate([self.wx(g).data for g in GATES], axis=1)
        Wh = np.concatenate([self.wh(g).data for g in GATES], axis=1)
        b = np.concatenate([self.b(g).data for g in GATES])
        return Wx, Wh, b

    @classmethod
    def init(cls, input_size: int, hidden: int, rng: np.random.Generator,
             forget_bias: float = 1.0, prefix: str = "lstm") -> "LstmCellParams":
        bx = 1.0 / np.sqrt(input_size)
        bh = 1.0 / np.sqrt(hidden)
        kw = {}
        for g in GATES:
            kw[f"W_x{g}"] = parameter(rng.uniform(-bx, bx, (input_size, hidden)), f"{prefix}.W_x{g}")
        for g in GATES:
            kw[f"W_h{g}"] = parameter(rng.uniform(-bh, bh, (hidden, hidden)), f"{prefix}.W_h{g}")
        for g in GATES:
            b = np.full(hidden, forget_bias) if g == "f" else np.zeros(hidden)
            kw[f"b_{g}"] = parameter(b, f"{prefix}.b_{g}")
        return cls(**kw)


def lstm_cell_step(x_t: np.ndarray, prev: LstmState, params: LstmCellParams) -> LstmState:
    """One time step of the cell on plain arrays (no taping)."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.ndim != 2 or x_t.shape[1] != params.input_size:
        raise ValueError(f"lstm_cell_step: input shape {x_t.shape} does not match W_x {params.W_xf.shape}")
    if prev.h.shape != (x_t.shape[0], params.hidden) or prev.c.shape != prev.h.shape:
        raise ValueError(f"lstm_cell_step: state shapes h {prev.h.shape}, c {prev.c.shape} "
                         f"incompatible with batch {x_t.shape[0]} and hidden {params.hidden}")
    Wx, Wh, b = params.stacked()
    _, _, _, _, c, h = _step(x_t @ Wx + b, prev.h, prev.c, Wh, params.hidden)
    return LstmState(h, c)


def _step(zx, h_prev, c_prev, Wh, H):
    z = zx + h_prev @ Wh
    f = _sigmoid(z[:, :H])
    i = _sigmoid(z[:, H:2 * H])
    ct = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * ct
    h = o * np.tanh(c)
    return f, i, ct, o, c, h


def lstm_layer_forward(seq: Grid3, params: LstmCellParams, init: LstmState | None = None) -> Grid3:
    """Unroll the cell over the time axis and emit the hidden state at every step."""
    B, T, cin = seq.shape
    if T < 1:
        raise ValueError("lstm_layer_forward needs at least one time step")
    if cin != params.input_size:
        raise ValueError(f"lstm_layer_forward: input shape {seq.shape} does not match W_x {params.W_xf.shape}")
    H = params.hidden
    if init is None:
        init = LstmState.zeros(B, H)
    Wx, Wh, b = params.stacked()
    zx = seq.data @ Wx + b  # input projections for all steps at once
    F = np.empty((T, B, H))
    I = np.empty((T, B, H))
    Ct = np.empty((T, B, H))
    O = np.empty((T, B, H))
    C = np.empty((T, B, H))
    Hs = np.empty((T, B, H))
    h, c = init.h, init.c
    for t in range(T):
        F[t], I[t], Ct[t], O[t], C[t], Hs[t] = _step(zx[:, t, :], h, c, Wh, H)
        h, c = Hs[t], C[t]
    out = np.ascontiguousarray(Hs.transpose(1, 0, 2))
    arrays = params.arrays()

    def backward(g):
        gH = g.transpose(1, 0, 2)
        dz = np.empty((T, B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = gH[t] + dh_next
            tc = np.tanh(C[t])
            do = dh * tc
            dc = dc_next + dh * O[t] * (1.0 - tc * tc)
            c_prev = C[t - 1] if t > 0 else init.c
            df = dc * c_prev
            di = dc * Ct[t]
            dct = dc * I[t]
            dz[t, :, :H] = df * F[t] * (1.0 - F[t])
            dz[t, :, H:2 * H] = di * I[t] * (1.0 - I[t])
            dz[t, :, 2 * H:3 * H] = dct * (1.0 - Ct[t] ** 2)
            dz[t, :, 3 * H:] = do * O[t] * (1.0 - O[t])
            dh_next = dz[t] @ Wh.T
            dc_next = dc * F[t]
        h_prev = np.concatenate([init.h[None], Hs[:-1]], axis=0)
        dz2 = dz.reshape(T * B, 4 * H)
        gWh = h_prev.reshape(T * B, H).T @ dz2
        xs = seq.data.transpose(1, 0, 2).reshape(T * B, cin)
        gWx = xs.T @ dz2
        gb = dz2.sum(axis=0)
        gseq = (dz @ Wx.T).transpose(1, 0, 2)
        grads = [(seq, gseq)]
        for k in range(4):
            grads.append((arrays[k], gWx[:, k * H:(k + 1) * H]))
        for k in range(4):
            grads.append((arrays[4 + k], gWh[:, k * H:(k + 1) * H]))
        for k in range(4):
            grads.append((arrays[8 + k], gb[k * H:(k + 1) * H]))
        return grads

    return _result(out, (seq, *arrays), backward)


@dataclass
class DenseParams:
    W: Grid3
    b: Grid3
    activation: str = "linear"

    @classmethod
    def init(cls, cin: int, cout: int, rng: np.random.Generator, activation: str = "linear",
             prefix: str = "dense") -> "DenseParams":
        bound = 1.0 / np.sqrt(cin)
        return cls(parameter(rng.uniform(-bound, bound, (cin, cout)), f"{prefix}.W"),
                   parameter(np.zeros(cout), f"{prefix}.b"), activation)


@dataclass
class DeepLstm:
    """Stack of LSTM layers followed by timewise dense layers (the last one is the output head)."""

    layers: list[LstmCellParams]
    dense: list[DenseParams] = field(default_factory=list)

    def __post_init__(self):
        width = None
        for k, layer in enumerate(self.layers):
            if width is not None and layer.input_size != width:
                raise ValueError(f"LSTM layer {k} expects {layer.input_size} inputs but the previous layer emits {width}")
            width = layer.hidden
        for k, d in enumerate(self.dense):
            if width is not None and d.W.shape[0] != width:
                raise ValueError(f"dense layer {k} expects {d.W.shape[0]} inputs but receives {width}")
            width = d.W.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden: tuple[int, ...] = (100, 100), dense: tuple[int, ...] = (100,),
             out_channels: int = 3, rng: np.random.Generator | None = None,
             forget_bias: float = 1.0) -> "DeepLstm":
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        width = input_size
        for k, H in enumerate(hidden):
            layers.append(LstmCellParams.init(width, H, rng, forget_bias, prefix=f"lstm{k}"))
            width = H
        heads = []
        for k, n in enumerate(dense):
            heads.append(DenseParams.init(width, n, rng, "relu", prefix=f"dense{k}"))
            width = n
        heads.append(DenseParams.init(width, out_channels, rng, "linear", prefix="head"))
        return cls(layers, heads)

    def named_parameters(self) -> dict[str, Grid3]:
        out = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.named(f"lstm{k}"))
        for k, d in enumerate(self.dense):
            prefix = "head" if k == len(self.dense) - 1 else f"dense{k}"
            out[f"{prefix}.W"] = d.W
            out[f"{prefix}.b"] = d.b
        return out

    def forward(self, seq: Grid3) -> Grid3:
        return deep_lstm_forward(seq, self.layers, self.dense)


def deep_lstm_forward(seq: Grid3, stack: list[LstmCellParams], head: list[DenseParams]) -> Grid3:
    x = seq
    for k, layer in enumerate(stack):
        if x.shape[-1] != layer.input_size:
            raise ValueError(f"LSTM layer {k} expects {layer.input_size} inputs, got {x.shape[-1]}")
        x = lstm_layer_forward(x, layer)
    for d in head:
        x = activation(dense_timewise(x, d.W, d.b), d.activation)
    return x
