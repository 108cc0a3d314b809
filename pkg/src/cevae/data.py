"""Paired degraded/reference image ingestion, preprocessing and augmentation.

Directory layout for paired data::

    <root>/degraded/<name>.png|jpg
    <root>/reference/<name>.png|jpg

Files are matched on their stem. The identity layout treats every image
directly under ``<root>`` as its own reference (reconstruction pretraining).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ManifestError, SampleError

__all__ = [
    "IMAGE_SUFFIXES",
    "ManifestEntry",
    "DatasetManifest",
    "PairedSample",
    "AugmentParams",
    "Batch",
    "load_manifest",
    "write_manifest",
    "read_manifest",
    "load_image",
    "save_image",
    "to_unit_range",
    "resize",
    "preprocess",
    "sample_augment_params",
    "apply_augment",
    "augment",
    "PairedDataset",
    "batch_indices",
    "batches",
]

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
CROP_RANGE = (0.8, 1.0)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    degraded: Path
    reference: Path


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class PairedSample:
    id: str
    degraded: torch.Tensor  # (3, H, W) in [-1, 1]
    reference: torch.Tensor


def _images_in(d: Path) -> dict[str, Path]:
    found = {}
    for p in sorted(d.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in found:
                raise ManifestError(f"duplicate image id in {d}", [p.name, found[p.stem].name])
            found[p.stem] = p
    return found


def load_manifest(root, layout: str = "paired_dirs", split: str = "train") -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} does not exist")
    if layout == "identity":
        imgs = _images_in(root)
        entries = [ManifestEntry(k, p, p) for k, p in imgs.items()]
    elif layout == "paired_dirs":
        ddir, rdir = root / "degraded", root / "reference"
        missing = [str(d) for d in (ddir, rdir) if not d.is_dir()]
        if missing:
            raise ManifestError("paired layout needs degraded/ and reference/ subdirectories", missing)
        deg, ref = _images_in(ddir), _images_in(rdir)
        orphans = sorted(
            [str(deg[k]) for k in deg.keys() - ref.keys()]
            + [str(ref[k]) for k in ref.keys() - deg.keys()]
        )
        if orphans:
            raise ManifestError("unmatched files", orphans)
        entries = [ManifestEntry(k, deg[k], ref[k]) for k in sorted(deg)]
    else:
        raise ManifestError(f"unknown layout {layout!r}; expected 'paired_dirs' or 'identity'")
    if not entries:
        raise ManifestError(f"no images found under {root}")
    return DatasetManifest(root, entries, split)


def write_manifest(path, manifest: DatasetManifest):
    lines = [f"{e.id}\t{e.degraded}\t{e.reference}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, root=None, split: str = "train") -> DatasetManifest:
    entries = []
    seen = set()
    dupes = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        sid, deg, ref = line.split("\t")
        if sid in seen:
            dupes.append(sid)
        seen.add(sid)
        entries.append(ManifestEntry(sid, Path(deg), Path(ref)))
    if dupes:
        raise ManifestError("duplicate ids in manifest", dupes)
    if not entries:
        raise ManifestError(f"manifest {path} is empty")
    return DatasetManifest(Path(root) if root else Path(path).parent, entries, split)


def to_unit_range(img):
    return (img + 1.0) * 0.5


def load_image(path) -> torch.Tensor:
    """Decode an image file to a ``(3, H, W)`` float tensor in ``[-1, 1]`` (0 -> -1, 255 -> +1)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise SampleError(f"cannot decode image {path}: {exc}", sample_id=str(path)) from exc
    return torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def save_image(path, img: torch.Tensor):
    """Write a ``(3, H, W)`` ``[-1, 1]`` tensor as an 8-bit image."""
    arr = ((img.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy()).save(path)


def resize(img: torch.Tensor, size: int) -> torch.Tensor:
    if tuple(img.shape[-2:]) == (size, size):
        return img
    return F.interpolate(img.unsqueeze(0), size=(size, size), mode="bilinear",
                         align_corners=False, antialias=True)[0]


def preprocess(sample, size: int = 256) -> PairedSample:
    """Load (if needed) and resize both images to ``size x size``.

    Accepts a :class:`PairedSample` of tensors or a :class:`ManifestEntry`.
    """
    if isinstance(sample, ManifestEntry):
        deg = load_image(sample.degraded)
        ref = deg if sample.reference == sample.degraded else load_image(sample.reference)
        sample = PairedSample(sample.id, deg, ref)
    return PairedSample(sample.id, resize(sample.degraded, size), resize(sample.reference, size))


@dataclass(frozen=True)
class AugmentParams:
    """A crop box (top, left, height, width) on the input grid plus a flip flag."""

    top: int
    left: int
    height: int
    width: int
    flip: bool

    @classmethod
    def identity(cls, h: int, w: int) -> "AugmentParams":
        return cls(0, 0, h, w, False)


def sample_augment_params(h: int, w: int, seed, crop_range=CROP_RANGE) -> AugmentParams:
    rng = np.random.default_rng(seed)
    frac = rng.uniform(*crop_range)
    ch = max(1, min(h, int(round(h * frac))))
    cw = max(1, min(w, int(round(w * frac))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < 0.5)
    return AugmentParams(top, left, ch, cw, flip)


def apply_augment(img: torch.Tensor, p: AugmentParams, size: int | None = None) -> torch.Tensor:
    out = img[..., p.top:p.top + p.height, p.left:p.left + p.width]
    if size is not None:
        out = resize(out, size)
    else:
        if out.shape[-2:] != img.shape[-2:]:
            out = F.interpolate(out.unsqueeze(0), size=tuple(img.shape[-2:]), mode="bilinear",
                                align_corners=False)[0]
    if p.flip:
        out = torch.flip(out, dims=(-1,))
    return out


def augment(sample: PairedSample, rng_seed, size: int | None = None):
    """Random crop (80-100 % of the side) resized back, and a coin-flip horizontal mirror.

    The same transform hits both images. Returns ``(sample, params)``.
    """
    h, w = sample.degraded.shape[-2:]
    p = sample_augment_params(h, w, rng_seed)
    return (
        PairedSample(sample.id, apply_augment(sample.degraded, p, size),
                     apply_augment(sample.reference, p, size)),
        p,
    )


class PairedDataset:
    """Preprocessed samples kept in memory; augmentation seeded by ``(seed, epoch, index)``."""

    def __init__(self, source, size: int = 256, augment: bool = True, seed: int = 0,
                 identity: bool = False):
        if isinstance(source, DatasetManifest):
            samples = [preprocess(e, size) for e in source.entries]
        else:
            samples = [preprocess(s, size) for s in source]
        if identity:
            samples = [replace(s, degraded=s.reference) for s in samples]
        self.samples = samples
        self.size = size
        self.augment = augment
        self.seed = seed

    def __len__(self):
        return len(self.samples)

    def get(self, index: int, epoch: int = 0) -> PairedSample:
        s = self.samples[index]
        if not self.augment:
            return s
        out, _ = augment(s, (self.seed, epoch, index), self.size)
        return out

    def __getitem__(self, index):
        return self.get(index)


@dataclass
class Batch:
    ids: list[str]
    degraded: torch.Tensor  # (B, 3, H, W)
    reference: torch.Tensor
    indices: list[int] = field(default_factory=list)


def batch_indices(n: int, batch_size: int, shuffle_seed, epoch: int = 0) -> list[list[int]]:
    """Permutation for ``(shuffle_seed, epoch)`` cut into batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng((shuffle_seed, epoch)).permutation(n).tolist()
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def batches(dataset: PairedDataset, batch_size: int, shuffle_seed: int, epoch: int = 0) -> Iterator[Batch]:
    for idx in batch_indices(len(dataset), batch_size, shuffle_seed, epoch):
        items = [dataset.get(i, epoch) for i in idx]
        yield Batch(
            [s.id for s in items],
            torch.stack([s.degraded for s in items]),
            torch.stack([s.reference for s in items]),
            idx,
        )
