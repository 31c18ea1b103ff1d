"""Causal 1-D U-Net feature extractor.

Two encoder levels (50 and 100 filters), a 200-filter bottleneck, two decoder
levels and a two-stage output convolution. Every ConvBlock is causal conv ->
batch norm -> ReLU. The time axis is zero-padded on the right to a multiple of
``pool ** depth`` on entry and cropped on exit, so any length T >= 4 works.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (BatchNormState, Grid3, activation, batch_norm1d, concat_channels, conv1d_causal,
                       crop_time, max_pool1d, pad_time, parameter, upsample_repeat)


@dataclass(frozen=True)
class UNetPlan:
    encoder_filters: tuple[int, ...] = (50, 100)
    bottleneck_filters: int = 200
    kernel: int = 2
    pool: int = 2
    in_channels: int = 1
    out_channels: int = 3

    @property
    def depth(self) -> int:
        return len(self.encoder_filters)

    @property
    def decoder_filters(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_filters))

    @property
    def block(self) -> int:
        return self.pool ** self.depth

    def to_dict(self) -> dict:
        return {"encoder_filters": list(self.encoder_filters), "bottleneck_filters": self.bottleneck_filters,
                "kernel": self.kernel, "pool": self.pool, "in_channels": self.in_channels,
                "out_channels": self.out_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "UNetPlan":
        d = dict(d)
        d["encoder_filters"] = tuple(d["encoder_filters"])
        return cls(**d)


@dataclass
class ConvBlockParams:
    W: Grid3
    b: Grid3
    gamma: Grid3
    beta: Grid3
    bn: BatchNormState

    @classmethod
    def init(cls, cin: int, cout: int, kernel: int, rng: np.random.Generator, prefix: str) -> "ConvBlockParams":
        bound = 1.0 / np.sqrt(kernel * cin)
        return cls(parameter(rng.uniform(-bound, bound, (kernel, cin, cout)), f"{prefix}.W"),
                   parameter(np.zeros(cout), f"{prefix}.b"),
                   parameter(np.ones(cout), f"{prefix}.gamma"),
                   parameter(np.zeros(cout), f"{prefix}.beta"),
                   BatchNormState(cout))

    def named(self, prefix: str) -> dict[str, Grid3]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b,
                f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def conv_block(x: Grid3, p: ConvBlockParams, mode: str) -> Grid3:
    return activation(batch_norm1d(conv1d_causal(x, p.W, p.b), p.gamma, p.beta, p.bn, mode), "relu")


@dataclass
class StageParams:
    """Two consecutive ConvBlocks (one encoder, bottleneck or decoder level)."""

    first: ConvBlockParams
    second: ConvBlockParams

    def blocks(self):
        return (self.first, self.second)


def _stage(cin: int, cout: int, kernel: int, rng, prefix: str) -> StageParams:
    return StageParams(ConvBlockParams.init(cin, cout, kernel, rng, f"{prefix}.0"),
                       ConvBlockParams.init(cout, cout, kernel, rng, f"{prefix}.1"))


def _run_stage(x: Grid3, p: StageParams, mode: str) -> Grid3:
    return conv_block(conv_block(x, p.first, mode), p.second, mode)


def encoder_block_forward(x: Grid3, p: StageParams, mode: str, pool: int = 2) -> tuple[Grid3, Grid3]:
    skip = _run_stage(x, p, mode)
    return skip, max_pool1d(skip, pool)


def decoder_block_forward(x: Grid3, skip: Grid3, p: StageParams, mode: str, pool: int = 2) -> Grid3:
    up = upsample_repeat(x, pool)
    if up.shape[1] != skip.shape[1]:
        raise ValueError(f"decoder: upsampled length {up.shape[1]} != skip length {skip.shape[1]} "
                         f"(input must be padded to a multiple of the pooling block)")
    return _run_stage(concat_channels(up, skip), p, mode)


@dataclass
class UNetParams:
    plan: UNetPlan
    encoders: list[StageParams]
    bottleneck: StageParams
    decoders: list[StageParams]
    out_W1: Grid3
    out_b1: Grid3
    out_W2: Grid3
    out_b2: Grid3

    @classmethod
    def init(cls, plan: UNetPlan, rng: np.random.Generator) -> "UNetParams":
        k = plan.kernel
        encoders = []
        cin = plan.in_channels
        for i, nf in enumerate(plan.encoder_filters):
            encoders.append(_stage(cin, nf, k, rng, f"enc{i}"))
            cin = nf
        bottleneck = _stage(cin, plan.bottleneck_filters, k, rng, "bottleneck")
        cin = plan.bottleneck_filters
        decoders = []
        for i, nf in enumerate(plan.decoder_filters):
            skip_c = plan.encoder_filters[plan.depth - 1 - i]
            decoders.append(_stage(cin + skip_c, nf, k, rng, f"dec{i}"))
            cin = nf
        oc = plan.out_channels
        b1 = 1.0 / np.sqrt(cin)
        b2 = 1.0 / np.sqrt(oc)
        return cls(plan, encoders, bottleneck, decoders,
                   parameter(rng.uniform(-b1, b1, (1, cin, oc)), "out1.W"), parameter(np.zeros(oc), "out1.b"),
                   parameter(rng.uniform(-b2, b2, (1, oc, oc)), "out2.W"), parameter(np.zeros(oc), "out2.b"))

    def stages(self) -> list[tuple[str, StageParams]]:
        out = [(f"enc{i}", s) for i, s in enumerate(self.encoders)]
        out.append(("bottleneck", self.bottleneck))
        out += [(f"dec{i}", s) for i, s in enumerate(self.decoders)]
        return out

    def named_parameters(self) -> dict[str, Grid3]:
        out = {}
        for name, stage in self.stages():
            out.update(stage.first.named(f"{name}.0"))
            out.update(stage.second.named(f"{name}.1"))
        out.update({"out1.W": self.out_W1, "out1.b": self.out_b1, "out2.W": self.out_W2, "out2.b": self.out_b2})
        return out

    def batch_norm_states(self) -> dict[str, BatchNormState]:
        out = {}
        for name, stage in self.stages():
            out[f"{name}.0"] = stage.first.bn
            out[f"{name}.1"] = stage.second.bn
        return out


def unet_forward(x: Grid3, params: UNetParams, mode: str = "infer", return_hidden: bool = False):
    """Map (B, T, in_channels) to (B, T, out_channels).

    With ``return_hidden`` the sigmoid-stage intermediate is returned as well.
    """
    plan = params.plan
    T = x.shape[1]
    if T < plan.block:
        raise ValueError(f"unet_forward needs T >= {plan.block}, got {T}")
    pad = (-T) % plan.block
    h = pad_time(x, pad)
    skips = []
    for stage in params.encoders:
        skip, h = encoder_block_forward(h, stage, mode, plan.pool)
        skips.append(skip)
    h = _run_stage(h, params.bottleneck, mode)
    for stage, skip in zip(params.decoders, reversed(skips)):
        h = decoder_block_forward(h, skip, stage, mode, plan.pool)
    mid = activation(conv1d_causal(h, params.out_W1, params.out_b1), "sigmoid")
    out = conv1d_causal(mid, params.out_W2, params.out_b2)
    out = crop_time(out, T)
    if return_hidden:
        return out, crop_time(mid, T)
    return out
