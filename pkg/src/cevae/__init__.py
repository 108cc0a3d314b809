"""Capsule-enhanced variational autoencoder for underwater image enhancement.

An online encoder compresses a degraded image into a small latent code; offline,
a capsule-clustering layer and two decoders turn that code into an enhanced
full-size image.
"""

from .capsules import CapsuleClustering, CapsuleConfig, route, squash
from .codec import compression_report, deserialize, serialize
from .decoders import CapsuleDecoder, DecoderConfig, SpatialDecoder
from .encoder import Encoder, EncoderConfig
from .metrics import evaluate_dataset, psnr, ssim_metric
from .model import CEVAE, ModelConfig, ablation_variant, reference_config, small_config
from .objectives import LossToggles, combined_loss

__version__ = "0.1.0"

__all__ = [
    "CEVAE",
    "CapsuleClustering",
    "CapsuleConfig",
    "CapsuleDecoder",
    "DecoderConfig",
    "Encoder",
    "EncoderConfig",
    "LossToggles",
    "ModelConfig",
    "SpatialDecoder",
    "ablation_variant",
    "combined_loss",
    "compression_report",
    "deserialize",
    "evaluate_dataset",
    "psnr",
    "reference_config",
    "route",
    "serialize",
    "small_config",
    "squash",
    "ssim_metric",
]
