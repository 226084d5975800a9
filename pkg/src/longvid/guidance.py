"""Classifier-free guidance combination and the std-restoring resampling correction.

The resampling step rescales a guided prediction back toward the standard
deviation of the plain conditional prediction. Guidance inflates the spread
of the combined prediction; over recursive rounds that inflation compounds
into overexposure, and pulling the spread back per step arrests it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance scale s (>= 0) and resampling scale r in [0, 1]."""

    s: float = 7.5
    r: float = 0.7

    def __post_init__(self):
        if self.s < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.s}")
        if not (0.0 <= self.r <= 1.0):
            raise ConfigError(f"resampling scale must be in [0, 1], got {self.r}")


def cfg_combine(z_pos: np.ndarray, z_neg: np.ndarray, s: float) -> np.ndarray:
    """z_neg + s * (z_pos - z_neg); endpoints s=0 and s=1 are exact."""
    if z_pos.shape != z_neg.shape:
        raise ShapeError(f"cfg_combine: {z_pos.shape} vs {z_neg.shape}")
    if s == 1.0:
        return z_pos.astype(np.float32).copy()
    if s == 0.0:
        return z_neg.astype(np.float32).copy()
    return (z_neg + np.float32(s) * (z_pos - z_neg)).astype(np.float32)


def global_std(z: np.ndarray) -> float:
    """Population std over all elements of one sample (mean subtracted)."""
    return float(np.std(z.astype(np.float64)))


def resample(z: np.ndarray, sigma_pos: float, r: float) -> np.ndarray:
    """r * (sigma_pos / std(z)) * z + (1 - r) * z.

    A positive scalar rescaling, so direction is preserved and
    std(out) == r * sigma_pos + (1 - r) * std(z) exactly.
    """
    if not (0.0 <= r <= 1.0):
        raise ConfigError(f"resample: r must be in [0, 1], got {r}")
    if sigma_pos <= 0:
        raise ConfigError(f"resample: sigma_pos must be > 0, got {sigma_pos}")
    sigma_z = global_std(z)
    if sigma_z == 0.0:
        raise DegenerateInputError("resample: input has zero spread")
    factor = np.float32(r * (sigma_pos / sigma_z) + (1.0 - r))
    return (z * factor).astype(np.float32)


def guided_eps(denoise_fn, z_t: np.ndarray, t: int, cond, null_cond,
               g: GuidanceConfig) -> np.ndarray:
    """Two denoiser evaluations combined by CFG, then resampled.

    ``denoise_fn(z_t, t, bundle)`` must return the eps-prediction as an
    ndarray of z_t's shape. The conditional prediction plays the positive
    role; its std is the resampling target.
    """
    e_pos = denoise_fn(z_t, t, cond)
    e_neg = denoise_fn(z_t, t, null_cond)
    z = cfg_combine(e_pos, e_neg, g.s)
    if g.r == 0.0:
        return z
    return resample(z, global_std(e_pos), g.r)
