"""Offline decoders: capsule branch and spatial branch."""

from __future__ import annotations

from dataclasses import dataclass

from torch import nn

from .blocks import ResBlock, UpsampleBlock
from .errors import ConfigurationError, InputShapeError

__all__ = ["DecoderConfig", "CapsuleDecoder", "SpatialDecoder"]


@dataclass(frozen=True)
class DecoderConfig:
    """``channel_schedule[0]`` is the input width; each further entry adds one 2x stage."""

    channel_schedule: tuple[int, ...] = (256, 256, 128, 128, 64)
    out_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        if len(self.channel_schedule) < 2:
            raise ConfigurationError("decoder needs at least one upsampling stage")
        if min(self.channel_schedule) < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be >= 1")

    @property
    def num_blocks(self) -> int:
        return len(self.channel_schedule) - 1

    @property
    def in_channels(self) -> int:
        return self.channel_schedule[0]


class _Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            self._stage(cin, cout)
            for cin, cout in zip(cfg.channel_schedule[:-1], cfg.channel_schedule[1:])
        )
        self.conv_out = nn.Conv2d(cfg.channel_schedule[-1], cfg.out_channels, 3, padding=1)

    def _stage(self, cin, cout):
        raise NotImplementedError

    @property
    def last_layer(self):
        return self.conv_out.weight

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise InputShapeError(
                f"{type(self).__name__} expects (B, {self.cfg.in_channels}, H, W), got {tuple(x.shape)}"
            )
        h = x
        for block in self.blocks:
            h = block(h)
        return self.conv_out(h)


class CapsuleDecoder(_Decoder):
    """Stages of (ResBlock -> UpsampleBlock) on the capsule vectors."""

    def _stage(self, cin, cout):
        return nn.Sequential(ResBlock(cin, cout), UpsampleBlock(cout, cout))


class SpatialDecoder(_Decoder):
    """Stages of (2x transposed convolution -> ResBlock) on the raw latent code."""

    def _stage(self, cin, cout):
        return nn.Sequential(nn.ConvTranspose2d(cin, cin, 4, stride=2, padding=1), ResBlock(cin, cout))
