"""The full capsule-enhanced autoencoder and its decoder ablations."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .capsules import CapsuleClustering, CapsuleConfig
from .decoders import CapsuleDecoder, DecoderConfig, SpatialDecoder
from .encoder import Encoder, EncoderConfig
from .errors import ConfigurationError

__all__ = ["ModelConfig", "CEVAE", "VARIANTS", "ablation_variant", "reference_config", "small_config"]

VARIANTS = ("full", "no_spatial", "no_capsule")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 256
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    capsules: CapsuleConfig = field(default_factory=CapsuleConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        enc, caps, dec = self.encoder, self.capsules, self.decoder
        if self.image_size % enc.reduction:
            raise ConfigurationError(
                f"image_size {self.image_size} not divisible by encoder reduction {enc.reduction}"
            )
        if caps.in_channels != enc.latent_channels:
            raise ConfigurationError("capsule in_channels must equal encoder latent_channels")
        if caps.out_channels != enc.latent_channels or dec.in_channels != enc.latent_channels:
            raise ConfigurationError(
                "capsule vectors, latent code and decoder input must share a channel count"
            )
        if self.latent_size * 2 ** dec.num_blocks != self.image_size:
            raise ConfigurationError(
                f"{dec.num_blocks} decoder stages cannot map {self.latent_size} back to {self.image_size}"
            )

    @property
    def latent_size(self) -> int:
        return self.image_size // self.encoder.reduction

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.encoder.latent_channels, self.latent_size, self.latent_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            image_size=d["image_size"],
            encoder=EncoderConfig(**d["encoder"]),
            capsules=CapsuleConfig(**d["capsules"]),
            decoder=DecoderConfig(**d["decoder"]),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def reference_config() -> ModelConfig:
    """256x256 input -> 256x16x16 latent, 32x16 primary capsules, 64x32 routed capsules."""
    return ModelConfig()


def small_config(image_size: int = 32) -> ModelConfig:
    """Desk-scale model used by tests, demos and the training sanity run."""
    return ModelConfig(
        image_size=image_size,
        encoder=EncoderConfig(
            num_blocks=4,
            channel_schedule=(16, 32, 32, 32),
            latent_channels=32,
            resolution=image_size,
            attention_resolution=image_size // 4,
        ),
        capsules=CapsuleConfig(
            in_channels=32,
            num_primary=8,
            primary_dim=8,
            primary_kernel=3,
            num_output=8,
            output_dim=8,
            routing_iterations=3,
            out_channels=32,
        ),
        decoder=DecoderConfig(channel_schedule=(32, 32, 32, 16)),
    )


class CEVAE(nn.Module):
    """Encoder, capsule clustering and the two decoders.

    Decoding takes only the latent code. ``variant`` removes a branch
    entirely: ``no_spatial`` keeps the capsule path, ``no_capsule`` keeps the
    spatial path.
    """

    def __init__(self, cfg: ModelConfig | None = None, variant: str = "full"):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        cfg = cfg or reference_config()
        self.cfg = cfg
        self.variant = variant
        self.encoder = Encoder(cfg.encoder)
        if variant != "no_capsule":
            self.capsules = CapsuleClustering(cfg.capsules)
            self.capsule_decoder = CapsuleDecoder(cfg.decoder)
        else:
            self.capsules = None
            self.capsule_decoder = None
        if variant != "no_spatial":
            self.spatial_decoder = SpatialDecoder(cfg.decoder)
        else:
            self.spatial_decoder = None

    def encode(self, img):
        return self.encoder(img)

    def capsule_vectors(self, latent):
        return self.capsules(latent)

    def decode_capsule(self, vectors):
        return self.capsule_decoder(vectors)

    def decode_spatial(self, latent):
        return self.spatial_decoder(latent)

    def decode(self, latent):
        """Unclamped sum of the active branches (used for losses)."""
        out = None
        if self.capsule_decoder is not None:
            out = self.decode_capsule(self.capsule_vectors(latent))
        if self.spatial_decoder is not None:
            spatial = self.decode_spatial(latent)
            out = spatial if out is None else out + spatial
        return out

    def enhance(self, latent, clamp: bool = True):
        out = self.decode(latent)
        return out.clamp(-1.0, 1.0) if clamp else out

    def forward(self, img):
        return self.decode(self.encode(img))

    @property
    def last_layer(self):
        """Weight of the final projection of the capsule decoder (spatial decoder if absent)."""
        if self.capsule_decoder is not None:
            return self.capsule_decoder.last_layer
        return self.spatial_decoder.last_layer

    def variant_of(self, mode: str) -> "CEVAE":
        """Copy of this model with a decoder branch removed, other weights shared by value."""
        if mode not in VARIANTS:
            raise ConfigurationError(f"unknown variant {mode!r}; expected one of {VARIANTS}")
        other = copy.deepcopy(self)
        other.variant = mode
        if mode == "no_capsule":
            other.capsules = None
            other.capsule_decoder = None
        elif mode == "no_spatial":
            other.spatial_decoder = None
        if (other.capsule_decoder is None and mode != "no_capsule") or (
            other.spatial_decoder is None and mode != "no_spatial"
        ):
            raise ConfigurationError(f"model of variant {self.variant!r} cannot provide {mode!r}")
        return other


def ablation_variant(mode: str, cfg: ModelConfig | None = None, base: CEVAE | None = None) -> CEVAE:
    """Build a decoder-ablation model, either fresh or derived from ``base``'s weights."""
    if base is not None:
        return base.variant_of(mode)
    return CEVAE(cfg, variant=mode)


def set_seed(seed: int):
    torch.manual_seed(seed)
