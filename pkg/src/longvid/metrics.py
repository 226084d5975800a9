"""Evaluation indicators: adjacent-frame consistency, PSNR, SSIM, Frechet distance.

The image embedding behind the consistency score and the Frechet distance
is a frozen random-projection conv stack generated from a pinned seed; it
is never trained and is identical across runs and machines. Outputs are
labeled "consistency-lite" / "fvd-lite" wherever they surface to make the
substitution for learned encoders visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateInputError, ShapeError
from .numcore import Rng

EXTRACTOR_SEED = 0x1F2E3D4C
PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """3x3 same-padded convolution, [C,H,W] -> [O,H/stride,W/stride]."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    return out + b[:, None, None]


class FeatureExtractor:
    """Frozen random conv stack: 3 -> 8 -> 16 channels, stride 2 each.

    Filters are centered to zero mean so the embedding responds to structure
    rather than raw intensity; otherwise a shared DC component dominates and
    cosine similarities saturate near 1 for any pair of frames. Small biases
    keep the features nonzero on flat inputs.
    """

    def __init__(self, seed: int = EXTRACTOR_SEED):
        rng = Rng(seed)

        def centered(shape, fan_in):
            w = rng.standard_normal(shape).astype(np.float64)
            w -= w.mean(axis=(1, 2, 3), keepdims=True)
            return (w * np.sqrt(2.0 / fan_in)).astype(np.float32)

        self.w1 = centered((8, 3, 3, 3), 3 * 9)
        self.b1 = rng.standard_normal((8,)) * np.float32(0.05)
        self.w2 = centered((16, 8, 3, 3), 8 * 9)
        self.b2 = rng.standard_normal((16,)) * np.float32(0.05)

    def frame_features(self, frame: np.ndarray) -> np.ndarray:
        """[C,H,W] -> pooled feature vector of length 16."""
        h = np.maximum(_conv2d(frame.astype(np.float32), self.w1, self.b1, 2), 0.0)
        h = np.maximum(_conv2d(h, self.w2, self.b2, 2), 0.0)
        return h.mean(axis=(1, 2)).astype(np.float64)

    def video_features(self, video: np.ndarray) -> np.ndarray:
        """Spatiotemporal pooled embedding: frame-mean plus mean abs frame delta."""
        feats = np.stack([self.frame_features(f) for f in video])
        if len(feats) > 1:
            delta = np.abs(np.diff(feats, axis=0)).mean(axis=0)
        else:
            delta = np.zeros_like(feats[0])
        return np.concatenate([feats.mean(axis=0), delta])


_default_extractor: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = FeatureExtractor()
    return _default_extractor


def consistency_score(video: np.ndarray, extractor: FeatureExtractor | None = None) -> float:
    """Mean cosine similarity of extractor features over adjacent frame pairs."""
    if video.ndim != 4 or video.shape[0] < 2:
        raise DegenerateInputError(
            "consistency_score needs a [frames, C, H, W] video with >= 2 frames"
        )
    ex = extractor or default_extractor()
    feats = [ex.frame_features(f) for f in video]
    sims = []
    for a, b in zip(feats[:-1], feats[1:]):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise DegenerateInputError("consistency_score: zero feature vector")
        sims.append(float(np.dot(a, b) / (na * nb)))
    return float(np.mean(sims))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 99 dB for identical frames."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ConfigError(f"psnr: peak must be > 0, got {peak}")
    err = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / err))


def _ssim_single(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = wa.var(axis=(-1, -2))
    var_b = wb.var(axis=(-1, -2))
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM over sliding 8x8 windows; frames [H,W] or [C,H,W]."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim: {a.shape} vs {b.shape}")
    hw = a.shape[-2:]
    if hw[0] < SSIM_WINDOW or hw[1] < SSIM_WINDOW:
        raise ShapeError(f"ssim: frame {hw} smaller than {SSIM_WINDOW}px window")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    if a.ndim == 2:
        return _ssim_single(a64, b64, peak)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a64[c], b64[c], peak) for c in range(a.shape[0])]))
    raise ShapeError(f"ssim: expected [H,W] or [C,H,W], got {a.shape}")


@dataclass(frozen=True)
class FrechetResult:
    value: float
    regularized: bool


def _sym_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_lite_detailed(features_a: np.ndarray, features_b: np.ndarray) -> FrechetResult:
    """Frechet distance between Gaussian fits of two feature sets [n, d].

    |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the cross sqrt
    computed as sqrtm(Ra Sb Ra) for Ra = sqrtm(Sa), which is symmetric PSD
    and shares the trace. Near-singular covariances get a 1e-6 diagonal
    bump, reported via the ``regularized`` flag.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ShapeError(f"frechet_lite: feature sets {fa.shape} vs {fb.shape}")
    d = fa.shape[1]
    if fa.shape[0] < d + 1 or fb.shape[0] < d + 1:
        raise ConfigError(
            f"frechet_lite: need at least dim+1={d + 1} samples per set, "
            f"got {fa.shape[0]} and {fb.shape[0]}"
        )
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    sa = np.cov(fa, rowvar=False)
    sb = np.cov(fb, rowvar=False)
    regularized = False
    for s in (sa, sb):
        if np.linalg.eigvalsh((s + s.T) / 2.0).min() < 1e-10:
            regularized = True
    if regularized:
        sa = sa + 1e-6 * np.eye(d)
        sb = sb + 1e-6 * np.eye(d)
    ra = _sym_sqrt(sa)
    cross = _sym_sqrt(ra @ sb @ ra)
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb)
                  - 2.0 * np.trace(cross))
    return FrechetResult(value=max(value, 0.0), regularized=regularized)


def frechet_lite(features_a: np.ndarray, features_b: np.ndarray) -> float:
    return frechet_lite_detailed(features_a, features_b).value
