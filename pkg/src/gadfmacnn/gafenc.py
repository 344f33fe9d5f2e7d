"""Gramian angular difference field (GADF) encoding of signal windows."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import read_container, write_container
from .dataio import SignalWindow
from .errors import BadTarget, DegenerateRange, DomainError, LengthMismatch, ShapeMismatch

CLAMP_TOL = 1e-12
# Normalized values are snapped to this absolute grid so that affine
# rescalings of a window give bit-identical images (float32 resolution at 1).
NORM_GRID = 2.0 ** -24
IMAGE_KIND = "gaf_images"


@dataclass
class NormalizedSeries:
    values: np.ndarray
    source: object = None
    vmin: float = -1.0
    vmax: float = 1.0


@dataclass
class PolarSeries:
    angles: np.ndarray
    radii: np.ndarray
    M: int
    values: np.ndarray  # the cosines the angles came from


@dataclass
class GafImage:
    pixels: np.ndarray
    label: int = -1
    meta: dict = field(default_factory=dict)
    encoding: str = "GADF"

    @property
    def P(self) -> int:
        return self.pixels.shape[0]


def minmax_rescale(values, grid: float | None = NORM_GRID, source=None) -> NormalizedSeries:
    """Map ``values`` affinely onto [-1, 1] with min -> -1 and max -> +1."""
    t = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.size < 2:
        raise DegenerateRange("need a 1-D series of length >= 2")
    lo, hi = float(t.min()), float(t.max())
    if not hi > lo:
        raise DegenerateRange(f"constant series (value {lo})")
    out = ((t - hi) + (t - lo)) / (hi - lo)
    if grid:
        out = np.round(out / grid) * grid
    np.clip(out, -1.0, 1.0, out=out)
    return NormalizedSeries(out, source, lo, hi)


def paa_downsample(values, target_len: int) -> np.ndarray:
    """Piecewise aggregate approximation: means of ``target_len`` contiguous segments.

    When the length is not a multiple of ``target_len`` the series is padded
    with its last value so every segment has equal size.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if target_len < 2 or target_len > n:
        raise BadTarget(f"target length {target_len} outside [2, {n}]")
    seg = -(-n // target_len)
    if seg * target_len != n:
        x = np.concatenate([x, np.full(seg * target_len - n, x[-1])])
    return x.reshape(target_len, seg).mean(axis=1)


def to_polar(series: NormalizedSeries | np.ndarray, M: int | None = None) -> PolarSeries:
    v = np.asarray(series.values if isinstance(series, NormalizedSeries) else series, dtype=np.float64)
    n = v.size
    M = n if M is None else M
    if M < n:
        raise ValueError(f"M={M} must be >= series length {n}")
    over = np.abs(v) - 1.0
    if np.any(over > CLAMP_TOL) or not np.all(np.isfinite(v)):
        bad = int(np.argmax(over))
        raise DomainError(f"value {v[bad]!r} at index {bad} outside [-1, 1]")
    v = np.clip(v, -1.0, 1.0)
    radii = np.arange(1, n + 1, dtype=np.float64) / M
    return PolarSeries(np.arccos(v), radii, M, v)


def gadf_encode(polar: PolarSeries, label: int = -1, meta: dict | None = None) -> GafImage:
    """GADF image: pixel (i, j) = sin(phi_i - phi_j)."""
    phi = polar.angles
    pixels = np.sin(np.subtract.outer(phi, phi))
    return GafImage(pixels, label, dict(meta or {}))


def gadf_algebraic(values) -> np.ndarray:
    """Same field computed without angles: sqrt(1-x_i^2)*x_j - x_i*sqrt(1-x_j^2)."""
    x = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    s = np.sqrt(1.0 - x * x)
    return np.outer(s, x) - np.outer(x, s)


def gram_matrix(vectors) -> np.ndarray:
    rows = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not rows:
        raise LengthMismatch("need at least one vector")
    if len({r.size for r in rows}) != 1:
        raise LengthMismatch(f"vector lengths differ: {sorted({r.size for r in rows})}")
    a = np.stack(rows)
    return a @ a.T


def encode_window(window: SignalWindow, image_size: int = 64, M: int | None = None) -> GafImage:
    """Rescale -> PAA -> polar -> GADF, carrying the window's provenance."""
    if image_size < 2:
        raise BadTarget("image_size must be >= 2")
    norm = minmax_rescale(window.values, source=window.record_ref)
    reduced = paa_downsample(norm.values, image_size)
    polar = to_polar(reduced, M)
    ref = window.record_ref
    meta = {
        "source_path": ref.source_path, "channel": ref.channel, "offset": int(ref.offset),
        "window_len": int(len(window.values)),
        "paa_factor": -(-len(window.values) // image_size),
        "norm_min": norm.vmin, "norm_max": norm.vmax,
        "label_name": window.label_name, "synthetic": False,
    }
    return gadf_encode(polar, window.label, meta)


def encode_windows(windows: Sequence[SignalWindow], image_size: int = 64, M: int | None = None) -> list[GafImage]:
    return [encode_window(w, image_size, M) for w in windows]


def images_to_array(images: Sequence[GafImage], dtype=np.float64) -> np.ndarray:
    if not images:
        return np.zeros((0, 0, 0), dtype=dtype)
    sizes = {im.pixels.shape for im in images}
    if len(sizes) != 1:
        raise ShapeMismatch(f"images differ in shape: {sorted(sizes)}")
    return np.stack([im.pixels for im in images]).astype(dtype)


def serialize_images(images: Sequence[GafImage], path, extra: dict | None = None) -> None:
    """Write images to the tensor container (pixels as little-endian float64)."""
    pixels = images_to_array(images, np.float64)
    meta = {
        "encoding": "GADF",
        "count": len(images),
        "image_size": int(pixels.shape[1]) if len(images) else 0,
        "labels": [int(im.label) for im in images],
        "items": [im.meta for im in images],
        "extra": extra or {},
    }
    write_container(path, IMAGE_KIND, meta, {"pixels": pixels})


def load_images(path) -> list[GafImage]:
    _, meta, arrays = read_container(path, expect_kind=IMAGE_KIND)
    pixels = arrays["pixels"]
    return [GafImage(pixels[i], int(lab), dict(item), meta.get("encoding", "GADF"))
            for i, (lab, item) in enumerate(zip(meta["labels"], meta["items"]))]


def load_images_extra(path) -> dict:
    return read_container(path, expect_kind=IMAGE_KIND)[1].get("extra", {})


def export_png(image: GafImage, path) -> None:
    """Grayscale PNG for eyeballing; [-1, 1] maps linearly to [0, 255]."""
    from PIL import Image

    g = np.clip(np.round((np.asarray(image.pixels, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(g, mode="L").save(path)
