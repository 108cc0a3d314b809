"""Full-reference image-quality metrics and dataset evaluation.

Metric functions take numpy arrays (or tensors) in ``[0, 1]``, shaped
``(C, H, W)`` or ``(H, W)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from .errors import CEVAEError, InputShapeError

__all__ = [
    "PSNR_CAP",
    "MetricRecord",
    "EvaluationResult",
    "psnr",
    "gaussian_window",
    "ssim_metric",
    "summarize",
    "evaluate_dataset",
    "write_metrics_tsv",
    "read_metrics_tsv",
]

log = logging.getLogger(__name__)

PSNR_CAP = 100.0


def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(gt, pred, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at 100 dB when MSE < peak^2 * 1e-10."""
    gt, pred = _as_array(gt), _as_array(pred)
    if gt.shape != pred.shape:
        raise InputShapeError(f"psnr: shape mismatch {gt.shape} vs {pred.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((gt - pred) ** 2))
    if mse < peak ** 2 * 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak ** 2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _ssim_map_2d(x, y, data_range, win, k1, k2):
    pad = (len(win) - 1) // 2

    def filt(a):
        a = ndimage.correlate1d(a, win, axis=0, mode="reflect")
        a = ndimage.correlate1d(a, win, axis=1, mode="reflect")
        # keep only windows that lie entirely inside the image
        return a[pad:a.shape[0] - pad, pad:a.shape[1] - pad]

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))


def ssim_metric(gt, pred, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
                k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM under a sliding Gaussian window, averaged over channels."""
    gt, pred = _as_array(gt), _as_array(pred)
    if gt.shape != pred.shape:
        raise InputShapeError(f"ssim_metric: shape mismatch {gt.shape} vs {pred.shape}")
    if gt.ndim == 2:
        gt, pred = gt[None], pred[None]
    if gt.shape[-1] < win_size or gt.shape[-2] < win_size:
        raise InputShapeError(f"image {gt.shape[-2:]} smaller than the {win_size}px window")
    win = gaussian_window(win_size, sigma)
    return float(np.mean([
        _ssim_map_2d(gt[c], pred[c], data_range, win, k1, k2).mean() for c in range(gt.shape[0])
    ]))


@dataclass
class MetricRecord:
    image_id: str
    psnr: float
    ssim: float
    lpips: float | None = None


@dataclass
class EvaluationResult:
    records: list[MetricRecord]
    summary: dict[str, dict[str, float]]
    skipped: int = 0
    skipped_ids: list[str] = field(default_factory=list)


def summarize(records: list[MetricRecord]) -> dict[str, dict[str, float]]:
    out = {}
    for name in ("psnr", "ssim", "lpips"):
        vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
        if not vals:
            continue
        a = np.asarray(vals, dtype=np.float64)
        out[name] = {"mean": float(a.mean()), "std": float(a.std()),
                     "min": float(a.min()), "max": float(a.max())}
    return out


def evaluate_dataset(pairs: Iterable, model: Callable, lpips_fn: Callable | None = None) -> EvaluationResult:
    """Run ``model`` on every pair and score it against the reference.

    ``pairs`` yields objects with ``id``, ``degraded`` and ``reference``
    (``[-1, 1]`` tensors of shape ``(3, H, W)``), or zero-argument callables
    producing such an object; a pair whose loading raises is skipped with a
    warning. ``model`` maps a ``(B, 3, H, W)`` batch in ``[-1, 1]`` to an
    output batch in the same range. Records come back sorted by id.
    """
    import torch

    records = []
    skipped_ids = []
    for item in pairs:
        if callable(item):
            try:
                item = item()
            except (CEVAEError, OSError, ValueError) as exc:
                name = getattr(exc, "sample_id", None) or str(exc)
                log.warning("skipping unreadable pair: %s", exc)
                skipped_ids.append(name)
                continue
        with torch.no_grad():
            out = model(item.degraded.unsqueeze(0))[0].clamp(-1, 1)
        ref01 = (item.reference + 1) / 2
        out01 = (out + 1) / 2
        lp = None
        if lpips_fn is not None:
            with torch.no_grad():
                lp = float(lpips_fn(item.reference.unsqueeze(0), out.unsqueeze(0)))
        records.append(MetricRecord(item.id, psnr(ref01, out01), ssim_metric(ref01, out01), lp))
    records.sort(key=lambda r: r.image_id)
    return EvaluationResult(records, summarize(records), len(skipped_ids), skipped_ids)


def _fmt(v) -> str:
    return "nan" if v is None else repr(float(v))


def write_metrics_tsv(path, result: EvaluationResult):
    """One ``id psnr ssim lpips`` line per image, then ``#``-prefixed summary lines."""
    lines = ["id\tpsnr\tssim\tlpips"]
    for r in result.records:
        lines.append("\t".join([r.image_id, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.lpips)]))
    for stat in ("mean", "std", "min", "max"):
        vals = [result.summary.get(m, {}).get(stat) for m in ("psnr", "ssim", "lpips")]
        lines.append("\t".join([f"#{stat}"] + [_fmt(v) for v in vals]))
    lines.append(f"#skipped\t{result.skipped}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_tsv(path) -> list[MetricRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("id\t"):
            continue
        image_id, p, s, lp = line.split("\t")
        lpv = float(lp)
        records.append(MetricRecord(image_id, float(p), float(s), None if math.isnan(lpv) else lpv))
    return records
