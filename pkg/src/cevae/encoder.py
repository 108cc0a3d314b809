"""Online image encoder: degraded image -> compact latent code."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import torch
from torch import nn

from .blocks import Downsample, ResBlock, SelfAttention, Swish
from .errors import ConfigurationError, InputShapeError, NumericError

__all__ = ["EncoderConfig", "Encoder"]


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder hyper-parameters.

    ``channel_schedule[l]`` is the width of encoding block ``l``; a downsample
    sits between consecutive blocks, so an input of side ``S`` yields a latent
    of side ``S / 2**(num_blocks - 1)``. Self-attention is only instantiated
    at levels whose side is ``<= attention_resolution`` (for the configured
    ``resolution``) unless ``attention_everywhere`` is set.
    """

    num_blocks: int = 5
    channel_schedule: tuple[int, ...] = (64, 128, 128, 256, 256)
    latent_channels: int = 256
    resolution: int = 256
    attention_resolution: int = 32
    attention_everywhere: bool = False
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        if self.num_blocks < 1:
            raise ConfigurationError("num_blocks must be >= 1")
        if len(self.channel_schedule) != self.num_blocks:
            raise ConfigurationError(
                f"channel_schedule has {len(self.channel_schedule)} entries for {self.num_blocks} blocks"
            )
        if min(self.channel_schedule) < 1 or self.latent_channels < 1:
            raise ConfigurationError("channel counts must be >= 1")

    @property
    def num_downsamples(self) -> int:
        return self.num_blocks - 1

    @property
    def reduction(self) -> int:
        return 2 ** self.num_downsamples

    def attends_at(self, level: int) -> bool:
        side = self.resolution // 2 ** level
        return self.attention_everywhere or side <= self.attention_resolution


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        cfg = cfg or EncoderConfig()
        self.cfg = cfg
        sched = cfg.channel_schedule

        self.stem = nn.Conv2d(cfg.in_channels, sched[0], 3, padding=1)
        self.res_blocks = nn.ModuleList()
        self.attentions = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = sched[0]
        for level, ch in enumerate(sched):
            self.res_blocks.append(ResBlock(prev, ch))
            self.attentions.append(SelfAttention(ch) if cfg.attends_at(level) else nn.Identity())
            if level < cfg.num_blocks - 1:
                self.downsamples.append(Downsample(ch))
            prev = ch

        self.norm_out = nn.BatchNorm2d(sched[-1])
        self.act_out = Swish()
        self.conv_out = nn.Conv2d(sched[-1], cfg.latent_channels, 3, padding=1)

    def stem_features(self, img):
        if img.dim() != 4 or img.shape[1] != self.cfg.in_channels:
            raise InputShapeError(
                f"expected a (B, {self.cfg.in_channels}, H, W) image batch, got {tuple(img.shape)}"
            )
        return self.stem(img)

    def forward(self, img):
        r = self.cfg.reduction
        if img.dim() == 4 and (img.shape[-2] % r or img.shape[-1] % r):
            raise InputShapeError(
                f"image side {tuple(img.shape[-2:])} is not divisible by {r} "
                f"({self.cfg.num_downsamples} halvings)"
            )
        h = self.stem_features(img)
        for level in range(self.cfg.num_blocks):
            h = self.res_blocks[level](h)
            attn = self.attentions[level]
            if isinstance(attn, SelfAttention):
                h = attn(h)  # adds its own residual
            if level < self.cfg.num_blocks - 1:
                h = self.downsamples[level](h)
        x = self.conv_out(self.act_out(self.norm_out(h)))
        if not torch.isfinite(x).all():
            raise NumericError("encoder produced non-finite activations")
        return x

    encode = forward

    @torch.no_grad()
    def encode_timed(self, img, repeats: int = 3):
        """Encode ``img`` ``repeats`` times; return the latent and the median wall-clock seconds."""
        times = []
        latent = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            latent = self.forward(img)
            times.append(time.perf_counter() - t0)
        return latent, statistics.median(times)
