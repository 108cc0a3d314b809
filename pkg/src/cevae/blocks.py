"""Shared convolutional building blocks for the encoder and both decoders.

All blocks operate on batched ``(B, C, H, W)`` tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, InputShapeError, NumericError

__all__ = [
    "BlockConfig",
    "Swish",
    "make_norm",
    "ResBlock",
    "SelfAttention",
    "Downsample",
    "UpsampleBlock",
    "upsample_nearest",
]


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    normalization: Literal["batch", "group"] = "group"
    activation: Literal["swish"] = "swish"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError(
                f"channel counts must be >= 1, got {self.in_channels}->{self.out_channels}"
            )
        if self.normalization not in ("batch", "group"):
            raise ConfigurationError(f"unknown normalization {self.normalization!r}")
        if self.activation != "swish":
            raise ConfigurationError(f"unknown activation {self.activation!r}")


class Swish(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(x)


def _num_groups(channels: int, max_groups: int = 32) -> int:
    # largest divisor of `channels` not above max_groups, keeping >= 2 channels per group
    for g in range(min(max_groups, max(1, channels // 2)), 0, -1):
        if channels % g == 0:
            return g
    return 1


def make_norm(channels: int, kind: str = "group") -> nn.Module:
    if kind == "group":
        return nn.GroupNorm(_num_groups(channels), channels, eps=1e-6, affine=True)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    raise ConfigurationError(f"unknown normalization {kind!r}")


def _check_channels(x: torch.Tensor, expected: int, name: str):
    if x.dim() != 4:
        raise InputShapeError(f"{name} expects a (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != expected:
        raise ConfigurationError(
            f"{name} configured for {expected} input channels, got {x.shape[1]}"
        )


class ResBlock(nn.Module):
    """Pre-activation residual block: norm, swish, conv, twice, plus a skip path.

    The skip is the identity when channel counts match and a 1x1 projection
    otherwise, so zeroing ``conv2`` reduces the block to its skip path.
    """

    def __init__(self, in_channels: int, out_channels: int | None = None, normalization="group"):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.config = BlockConfig(in_channels, out_channels, normalization)
        self.in_channels = in_channels
        self.out_channels = out_channels

        self.norm1 = make_norm(in_channels, normalization)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = make_norm(out_channels, normalization)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.act = Swish()
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()

    @classmethod
    def from_config(cls, cfg: BlockConfig) -> "ResBlock":
        return cls(cfg.in_channels, cfg.out_channels, cfg.normalization)

    def forward(self, x):
        _check_channels(x, self.in_channels, "ResBlock")
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    """Single-head spatial self-attention with a residual add.

    Query, key, value and output projections are 1x1 convolutions; the
    attention matrix is ``(H*W) x (H*W)`` and row-stochastic.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.norm = make_norm(channels, "group")
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(channels, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.proj_out = nn.Conv2d(channels, channels, 1)

    def attention_weights(self, x):
        """Softmax attention matrix of shape ``(B, H*W, H*W)``; row ``p`` attends from position ``p``."""
        _check_channels(x, self.channels, "SelfAttention")
        h = self.norm(x)
        b, c, hh, ww = h.shape
        q = self.q(h).reshape(b, c, hh * ww).transpose(1, 2)
        k = self.k(h).reshape(b, c, hh * ww)
        return torch.softmax(torch.bmm(q, k) / math.sqrt(c), dim=2)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise NumericError("SelfAttention received non-finite input")
        b, c, hh, ww = x.shape
        w = self.attention_weights(x)
        v = self.v(self.norm(x)).reshape(b, c, hh * ww)
        out = torch.bmm(v, w.transpose(1, 2)).reshape(b, c, hh, ww)
        return x + self.proj_out(out)


class Downsample(nn.Module):
    """Strided 3x3 convolution; odd sizes round up (17 -> 9)."""

    def __init__(self, channels: int, out_channels: int | None = None):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(channels, out_channels or channels, 3, stride=2, padding=1)

    def forward(self, x):
        _check_channels(x, self.channels, "Downsample")
        if x.shape[-2] < 2 or x.shape[-1] < 2:
            raise InputShapeError(
                f"cannot downsample a {x.shape[-2]}x{x.shape[-1]} map; both sides must be >= 2"
            )
        return self.conv(x)


def upsample_nearest(x):
    return F.interpolate(x, scale_factor=2.0, mode="nearest")


class UpsampleBlock(nn.Module):
    """Nearest-neighbour 2x resize followed by a 3x3 convolution."""

    def __init__(self, in_channels: int, out_channels: int | None = None):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.config = BlockConfig(in_channels, out_channels)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)

    def forward(self, x):
        _check_channels(x, self.in_channels, "UpsampleBlock")
        return self.conv(upsample_nearest(x))
