"""Latent-code file format and storage / transmission arithmetic.

File layout (little-endian, 18-byte header)::

    offset  size  field
    0       4     magic  b"CEVL"
    4       1     version (1)
    5       1     dtype code: 0=f16, 1=f32, 2=f64
    6       12    C, H, W as uint32
    18      ...   C*H*W values, row-major

Sizes in reports use decimal megabytes (1 MB = 10**6 bytes).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER",
    "DTYPES",
    "serialize",
    "deserialize",
    "write_latent",
    "read_latent",
    "storage_bytes",
    "transmission_time",
    "recording_duration",
    "CompressionReport",
    "compression_report",
]

MAGIC = b"CEVL"
VERSION = 1
HEADER = struct.Struct("<4sBB3I")
DTYPES = {"f16": (0, np.dtype("<f2")), "f32": (1, np.dtype("<f4")), "f64": (2, np.dtype("<f8"))}
_BY_CODE = {code: (name, dt) for name, (code, dt) in DTYPES.items()}
MB = 1e6


def serialize(latent, dtype: str = "f16") -> bytes:
    """Encode a ``(C, H, W)`` latent (numpy array or tensor) as a latent file."""
    if hasattr(latent, "detach"):
        latent = latent.detach().cpu().numpy()
    arr = np.asarray(latent)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise ValueError(f"latent must be (C, H, W), got shape {arr.shape}")
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {dtype!r}")
    if not np.isfinite(arr).all():
        raise ValueError("latent contains non-finite values")
    code, dt = DTYPES[dtype]
    if dtype == "f16" and np.abs(arr).max(initial=0) > np.finfo(np.float16).max:
        raise ValueError("latent values exceed the float16 range")
    header = HEADER.pack(MAGIC, VERSION, code, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes(order="C")


def deserialize(blob: bytes) -> np.ndarray:
    """Inverse of :func:`serialize`; the array keeps the stored dtype."""
    if len(blob) < HEADER.size:
        raise FormatError(f"file is {len(blob)} bytes, shorter than the {HEADER.size}-byte header",
                          offset=len(blob))
    magic, version, code, c, h, w = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in _BY_CODE:
        raise FormatError(f"unknown dtype code {code}", offset=5)
    _, dt = _BY_CODE[code]
    expected = c * h * w * dt.itemsize
    payload = blob[HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, header declares {c}x{h}x{w} {dt} = {expected}",
            offset=HEADER.size + min(len(payload), expected),
        )
    return np.frombuffer(payload, dtype=dt).reshape(c, h, w).copy()


def write_latent(path, latent, dtype: str = "f16") -> int:
    blob = serialize(latent, dtype)
    Path(path).write_bytes(blob)
    return len(blob)


def read_latent(path) -> np.ndarray:
    return deserialize(Path(path).read_bytes())


def storage_bytes(shape, bytes_per_value: int = 8) -> int:
    if any(d <= 0 for d in shape) or bytes_per_value <= 0:
        raise ValueError("dimensions and bytes_per_value must be positive")
    return math.prod(shape) * bytes_per_value


def transmission_time(n_bytes: float, bandwidth_bits_per_s: float = 1e9) -> float:
    if bandwidth_bits_per_s <= 0:
        raise ValueError("bandwidth must be positive")
    return n_bytes * 8 / bandwidth_bits_per_s


def recording_duration(capacity_bytes: float, images_per_s: float, per_image_bytes: float) -> float:
    """Hours of capture that fit in ``capacity_bytes`` at the given frame rate."""
    if capacity_bytes <= 0 or images_per_s <= 0 or per_image_bytes <= 0:
        raise ValueError("capacity, rate and per-image size must be positive")
    return capacity_bytes / (images_per_s * per_image_bytes) / 3600.0


@dataclass
class CompressionReport:
    """Raw-image vs latent-code storage budget.

    ``*_mb`` sizes are rounded to 0.01 MB, and transmission times are
    derived from those rounded sizes, which is how published storage tables
    are usually computed. Recording durations and the ratio use exact bytes.
    """

    raw_bytes: int
    latent_bytes: int
    raw_mb: float
    latent_mb: float
    raw_transmission_s: float
    latent_transmission_s: float
    ratio_vs_raw: float
    batch_size: int
    batch_raw_mb: float
    batch_latent_mb: float
    batch_raw_transmission_s: float
    batch_latent_transmission_s: float
    raw_recording_h: float | None = None
    latent_recording_h: float | None = None
    encode_seconds: float | None = None

    @property
    def per_image_bytes(self) -> int:
        return self.latent_bytes

    @property
    def transmission_seconds(self) -> float:
        return self.latent_transmission_s

    @property
    def recording_hours(self) -> float | None:
        return self.latent_recording_h

    def rows(self) -> list[tuple[str, str]]:
        def g(v, digits):
            return "nan" if v is None else f"{v:.{digits}g}"

        rows = [
            ("raw_bytes", str(self.raw_bytes)),
            ("latent_bytes", str(self.latent_bytes)),
            ("raw_mb", f"{self.raw_mb:.2f}"),
            ("latent_mb", f"{self.latent_mb:.2f}"),
            ("raw_transmission_s", g(self.raw_transmission_s, 4)),
            ("latent_transmission_s", g(self.latent_transmission_s, 4)),
            ("ratio_vs_raw", g(self.ratio_vs_raw, 6)),
            ("batch_size", str(self.batch_size)),
            ("batch_raw_mb", g(self.batch_raw_mb, 4)),
            ("batch_latent_mb", g(self.batch_latent_mb, 4)),
            ("batch_raw_transmission_ms", g(self.batch_raw_transmission_s * 1e3, 4)),
            ("batch_latent_transmission_ms", g(self.batch_latent_transmission_s * 1e3, 4)),
            ("raw_recording_h", g(self.raw_recording_h, 3)),
            ("latent_recording_h", g(self.latent_recording_h, 3)),
        ]
        if self.encode_seconds is not None:
            rows.append(("median_encode_s", g(self.encode_seconds, 3)))
        return rows

    def to_text(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in self.rows())


def compression_report(
    raw_shape=(3, 256, 256),
    latent_shape=(256, 16, 16),
    bytes_per_value: int = 8,
    bandwidth: float = 1e9,
    capacity: float | None = None,
    rate: float | None = None,
    batch_size: int = 30,
) -> CompressionReport:
    raw = storage_bytes(raw_shape, bytes_per_value)
    lat = storage_bytes(latent_shape, bytes_per_value)
    raw_mb = round(raw / MB, 2)
    lat_mb = round(lat / MB, 2)
    raw_h = lat_h = None
    if capacity is not None and rate is not None:
        raw_h = recording_duration(capacity, rate, raw)
        lat_h = recording_duration(capacity, rate, lat)
    batch_raw_mb = round(batch_size * raw_mb, 6)
    batch_lat_mb = round(batch_size * lat_mb, 6)
    return CompressionReport(
        raw_bytes=raw,
        latent_bytes=lat,
        raw_mb=raw_mb,
        latent_mb=lat_mb,
        raw_transmission_s=transmission_time(raw_mb * MB, bandwidth),
        latent_transmission_s=transmission_time(lat_mb * MB, bandwidth),
        ratio_vs_raw=raw / lat,
        batch_size=batch_size,
        batch_raw_mb=batch_raw_mb,
        batch_latent_mb=batch_lat_mb,
        batch_raw_transmission_s=transmission_time(batch_raw_mb * MB, bandwidth),
        batch_latent_transmission_s=transmission_time(batch_lat_mb * MB, bandwidth),
        raw_recording_h=raw_h,
        latent_recording_h=lat_h,
    )
