"""Training objective: reconstruction, perceptual, adversarial and structural terms.

Images handed to these functions are in ``[-1, 1]`` unless a ``data_range``
says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ContractError, InputShapeError

__all__ = [
    "LossToggles",
    "LossBreakdown",
    "FeatureExtractor",
    "PatchDiscriminator",
    "rec_loss",
    "lpips_loss",
    "discriminator_loss",
    "generator_gan_loss",
    "adaptive_lambda",
    "last_layer_grad_norms",
    "patch_ssim",
    "ssim_loss",
    "combined_loss",
    "LAMBDA_MAX",
    "DEFAULT_DELTA",
]

LAMBDA_MAX = 1e4
DEFAULT_DELTA = 1e-6
SSIM_PATCH = 11


@dataclass(frozen=True)
class LossToggles:
    rec: bool = True
    lpips: bool = True
    gan: bool = True
    ssim: bool = True

    NAMES = ("rec", "lpips", "gan", "ssim")

    def __post_init__(self):
        if not any((self.rec, self.lpips, self.gan, self.ssim)):
            raise ConfigurationError("at least one loss term must be enabled")

    @classmethod
    def parse(cls, spec: str) -> "LossToggles":
        """``"rec,ssim"`` -> only those two terms on."""
        names = [n.strip() for n in spec.split(",") if n.strip()]
        bad = [n for n in names if n not in cls.NAMES]
        if bad:
            raise ConfigurationError(
                f"unknown loss term(s) {', '.join(bad)}; valid names: {', '.join(cls.NAMES)}"
            )
        return cls(**{n: n in names for n in cls.NAMES})

    def label(self) -> str:
        return "+".join(n for n in self.NAMES if getattr(self, n))


@dataclass
class LossBreakdown:
    """Per-term values; ``gan`` already carries the lambda factor."""

    rec: torch.Tensor
    lpips: torch.Tensor
    gan: torch.Tensor
    ssim: torch.Tensor
    lam: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}

    def log_line(self, step: int) -> str:
        v = self.as_floats()
        return "\t".join(
            [str(step)] + [repr(v[k]) for k in ("rec", "lpips", "gan", "ssim", "lam", "total")]
        )


# ---------------------------------------------------------------------------
# networks


class FeatureExtractor(nn.Module):
    """Frozen 5-stage convolutional pyramid used as the perceptual feature map.

    Weights come from a fixed seed so no download is needed; ``load_weights``
    swaps in an externally trained state dict with the same layout.
    """

    def __init__(self, channels=(16, 32, 64, 96, 128), seed: int = 1234, in_channels: int = 3):
        super().__init__()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        stages = []
        prev = in_channels
        for k, ch in enumerate(channels):
            conv = nn.Conv2d(prev, ch, 3, stride=1 if k == 0 else 2, padding=1)
            bound = (6.0 / (prev * 9)) ** 0.5
            with torch.no_grad():
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
                conv.bias.zero_()
            stages.append(nn.Sequential(conv, nn.SiLU()))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.freeze()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def load_weights(self, path):
        state = torch.load(Path(path), map_location="cpu", weights_only=True)
        self.load_state_dict(state)
        return self.freeze()

    def forward(self, x):
        """List of per-stage feature maps (the layer taps)."""
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class PatchDiscriminator(nn.Module):
    """Strided convolutional classifier emitting one logit per image patch (70x70 receptive field)."""

    def __init__(self, in_channels: int = 3, base_channels: int = 64, n_layers: int = 3):
        super().__init__()
        self.arch = {"in_channels": in_channels, "base_channels": base_channels, "n_layers": n_layers}
        layers = [nn.Conv2d(in_channels, base_channels, 4, 2, 1), nn.LeakyReLU(0.2)]
        mult = 1
        for n in range(1, n_layers + 1):
            prev_mult, mult = mult, min(2 ** n, 8)
            layers += [
                nn.Conv2d(base_channels * prev_mult, base_channels * mult, 4,
                          2 if n < n_layers else 1, 1, bias=False),
                nn.BatchNorm2d(base_channels * mult),
                nn.LeakyReLU(0.2),
            ]
        layers.append(nn.Conv2d(base_channels * mult, 1, 4, 1, 1))
        self.main = nn.Sequential(*layers)

    def forward(self, x):
        return self.main(x)


# ---------------------------------------------------------------------------
# loss terms


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise InputShapeError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def rec_loss(gt, pred):
    _same_shape(gt, pred, "rec_loss")
    return (gt - pred).abs().mean()


def lpips_loss(gt, pred, extractor):
    """Euclidean distance between the concatenated feature taps, averaged over the batch."""
    _same_shape(gt, pred, "lpips_loss")
    fa, fb = extractor(gt), extractor(pred)
    sq = sum(((a - b) ** 2).flatten(1).sum(dim=1) for a, b in zip(fa, fb))
    # sqrt'(0) is infinite; route identical pairs through a zero-gradient branch
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq)).mean()


def discriminator_loss(real_logits, fake_logits):
    """``-log psi(real) - log(1 - psi(fake))`` averaged over patches (both halves summed)."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def generator_gan_loss(fake_logits):
    """Non-saturating generator loss ``-mean(log psi(fake))``."""
    return F.softplus(-fake_logits).mean()


def adaptive_lambda(grad_rec, grad_gan, delta: float = DEFAULT_DELTA, max_value: float = LAMBDA_MAX):
    """Balance weight ``grad_rec / (grad_gan + delta)`` clamped to ``[0, max_value]``.

    Arguments are gradient norms (floats or scalar tensors). The result is
    detached: no gradient ever flows through lambda.
    """
    if delta <= 0:
        raise ContractError("delta must be positive")
    gr = torch.as_tensor(grad_rec, dtype=torch.float64).detach()
    gg = torch.as_tensor(grad_gan, dtype=torch.float64).detach()
    if (gr < 0).any() or (gg < 0).any():
        raise ContractError("gradient norms must be non-negative")
    return torch.clamp(gr / (gg + delta), 0.0, max_value)


def last_layer_grad_norms(rec, gan, last_layer):
    """Euclidean norms of d(rec)/d(last_layer) and d(gan)/d(last_layer)."""
    g_rec = torch.autograd.grad(rec, last_layer, retain_graph=True, allow_unused=True)[0]
    g_gan = torch.autograd.grad(gan, last_layer, retain_graph=True, allow_unused=True)[0]
    n_rec = g_rec.norm() if g_rec is not None else last_layer.new_zeros(())
    n_gan = g_gan.norm() if g_gan is not None else last_layer.new_zeros(())
    return n_rec.detach(), n_gan.detach()


def patch_ssim(gt, pred, data_range: float = 1.0, patch: int = SSIM_PATCH):
    """Mean SSIM over non-overlapping ``patch x patch`` tiles, per channel.

    Trailing rows/columns that do not fill a whole tile are ignored. Means,
    variances and covariance are population statistics over each tile.
    """
    _same_shape(gt, pred, "patch_ssim")
    if gt.dim() == 3:
        gt, pred = gt.unsqueeze(0), pred.unsqueeze(0)
    hh, ww = gt.shape[-2:]
    if hh < patch or ww < patch:
        raise InputShapeError(f"image {hh}x{ww} is smaller than one {patch}x{patch} patch")
    k1 = (0.01 * data_range) ** 2
    k2 = (0.03 * data_range) ** 2
    ph, pw = hh // patch, ww // patch

    def tiles(x):
        x = x[..., : ph * patch, : pw * patch]
        b, c = x.shape[:2]
        x = x.reshape(b, c, ph, patch, pw, patch).permute(0, 1, 2, 4, 3, 5)
        return x.reshape(b, c, ph, pw, patch * patch)

    x, y = tiles(gt), tiles(pred)
    mx, my = x.mean(-1), y.mean(-1)
    vx = ((x - mx.unsqueeze(-1)) ** 2).mean(-1)
    vy = ((y - my.unsqueeze(-1)) ** 2).mean(-1)
    cxy = ((x - mx.unsqueeze(-1)) * (y - my.unsqueeze(-1))).mean(-1)
    lum = (2 * mx * my + k1) / (mx ** 2 + my ** 2 + k1)
    cs = (2 * cxy + k2) / (vx + vy + k2)
    return (lum * cs).mean()


def ssim_loss(gt, pred, data_range: float = 1.0):
    """``1 - patch_ssim`` so that minimizing the loss maximizes similarity."""
    return 1.0 - patch_ssim(gt, pred, data_range)


def _to_unit(x):
    return (x + 1.0) * 0.5


def combined_loss(
    gt,
    pred,
    toggles: LossToggles = LossToggles(),
    extractor: FeatureExtractor | None = None,
    discriminator: nn.Module | None = None,
    last_layer: torch.Tensor | None = None,
    lam=None,
    delta: float = DEFAULT_DELTA,
) -> LossBreakdown:
    """Sum of the enabled terms on ``[-1, 1]`` images.

    The adversarial term is ``lam * generator_gan_loss``. ``lam`` is taken
    as given, or computed from last-layer gradient norms when ``last_layer``
    is supplied. SSIM is evaluated on images mapped to ``[0, 1]``.
    """
    _same_shape(gt, pred, "combined_loss")
    zero = pred.new_zeros(())
    rec = rec_loss(gt, pred)
    lp = zero
    if toggles.lpips:
        if extractor is None:
            raise ConfigurationError("lpips term enabled without a feature extractor")
        lp = lpips_loss(gt, pred, extractor)
    ss = ssim_loss(_to_unit(gt), _to_unit(pred), 1.0) if toggles.ssim else zero

    gan = zero
    lam_t = zero
    if toggles.gan:
        if discriminator is None:
            raise ConfigurationError("gan term enabled without a discriminator")
        g = generator_gan_loss(discriminator(pred))
        if lam is None:
            if last_layer is None:
                raise ConfigurationError("gan term needs either lam or last_layer")
            n_rec, n_gan = last_layer_grad_norms(rec, g, last_layer)
            lam = adaptive_lambda(n_rec, n_gan, delta)
        lam_t = torch.as_tensor(lam, dtype=pred.dtype).detach()
        gan = lam_t * g

    rec_term = rec if toggles.rec else zero
    total = rec_term + lp + gan + ss
    return LossBreakdown(rec=rec_term, lpips=lp, gan=gan, ssim=ss, lam=lam_t, total=total)
