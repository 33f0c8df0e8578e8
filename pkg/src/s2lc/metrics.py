"""Evaluation numerics: PSNR, rate-distortion loss, BD-Rate, latent maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ShapeError
from .imageio import write_pgm
from .pipeline import decode_latents

__all__ = [
    "LAMBDA_PRESETS",
    "RdPoint",
    "psnr",
    "mse",
    "rd_loss",
    "bd_rate",
    "bd_rate_average_offset",
    "inspect_latents",
]

# MSE-optimized rate-distortion trade-off presets
LAMBDA_PRESETS = (0.0018, 0.0035, 0.0075, 0.013, 0.025, 0.048)

PSNR_CAP = 100.0


@dataclass(frozen=True)
class RdPoint:
    """One operating point: rate in bits per pixel, quality in dB."""

    rate: float
    quality: float

    def __post_init__(self):
        if self.rate <= 0:
            raise CodecError(f"rates must be strictly positive, got {self.rate}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error on the [0, 255] integer scale."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"image dims differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical images report the 100 cap."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / err))


def rd_loss(rate_bits: float, pixels_count: int, mse_value: float, lam: float) -> float:
    """Rate-distortion objective: bits-per-pixel + lambda * MSE."""
    if lam <= 0:
        raise CodecError(f"lambda must be positive, got {lam}")
    return rate_bits / pixels_count + lam * mse_value


def _as_points(curve):
    pts = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in curve]
    if len(pts) < 4:
        raise CodecError(f"BD-Rate needs at least 4 points per curve, got {len(pts)}")
    return sorted(pts, key=lambda p: p.quality)


def _fit_log_rate(pts):
    q = np.array([p.quality for p in pts], dtype=np.float64)
    r = np.log10([p.rate for p in pts])
    return np.polyfit(q, r, 3)


def bd_rate_average_offset(curve_a, curve_b) -> float:
    """Average log10-rate offset of curve_b vs curve_a over the shared PSNR span."""
    pts_a = _as_points(curve_a)
    pts_b = _as_points(curve_b)
    lo = max(pts_a[0].quality, pts_b[0].quality)
    hi = min(pts_a[-1].quality, pts_b[-1].quality)
    if hi <= lo:
        raise CodecError(f"RD curves share no PSNR overlap ({lo:.3f} >= {hi:.3f})")
    int_a = np.polyint(_fit_log_rate(pts_a))
    int_b = np.polyint(_fit_log_rate(pts_b))
    area_a = np.polyval(int_a, hi) - np.polyval(int_a, lo)
    area_b = np.polyval(int_b, hi) - np.polyval(int_b, lo)
    return (area_b - area_a) / (hi - lo)


def bd_rate(curve_a, curve_b) -> float:
    """Bjontegaard delta rate of curve_b against anchor curve_a, in percent.

    Cubic least-squares fits of log10(rate) as a function of PSNR are
    integrated analytically over the common PSNR interval; negative values
    mean curve_b saves rate at equal quality.
    """
    return (10.0 ** bd_rate_average_offset(curve_a, curve_b) - 1.0) * 100.0


def inspect_latents(container, weights, output_path) -> np.ndarray:
    """Write the channel-mean magnitude of decoded latents as a PGM image.

    Values are min-max normalized to 0..255; a constant map degenerates to
    mid-gray 128.  Returns the written array (latent-resolution grayscale).
    """
    latents = decode_latents(container, weights)
    magnitude = np.abs(latents[0].astype(np.float64)).mean(axis=0)
    lo, hi = magnitude.min(), magnitude.max()
    if hi - lo < 1e-12:
        img = np.full(magnitude.shape, 128, dtype=np.uint8)
    else:
        img = np.floor((magnitude - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
    write_pgm(output_path, img)
    return img
