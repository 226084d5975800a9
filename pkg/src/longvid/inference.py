"""Guided DDIM sampling: single rounds and the multi-round long-video loop.

A round denoises f frames from noise under a condition bundle. Multi-round
generation chains rounds: each new round is conditioned on the previous
round's trailing n_o frames (decoded to pixels and re-encoded, the same
path training conditions came through), and stitching keeps every shared
frame exactly once, so m rounds yield f + (m-1)(f - n_o) frames.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .guidance import GuidanceConfig, cfg_combine, global_std, resample
from .model import Model
from .numcore import Rng
from .schedule import NoiseSchedule, ddim_ladder, ddim_step, q_sample
from .training import ConditionBundle, NULL_BUNDLE


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    s: float = 7.5
    r: float = 0.7
    m: int = 1
    f: int = 16
    n_o: int = 4
    init_overlap_noise: bool = True
    resample_per_step: bool = True
    frame_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.m < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.m}")
        # n_o == 0 is allowed: it is the no-overlap regime whose naive m*f
        # frame count the multi-round recursion is usually quoted with.
        if not (0 <= self.n_o < self.f):
            raise ConfigError(f"need 0 <= n_o < f, got n_o={self.n_o}, f={self.f}")
        GuidanceConfig(s=self.s, r=self.r)  # range-check s and r


def total_frames(cfg: SamplerConfig) -> int:
    """Stitched frame count: f + (m-1)(f - n_o)."""
    return cfg.f + (cfg.m - 1) * (cfg.f - cfg.n_o)


def single_round(model: Model, cond: ConditionBundle, cfg: SamplerConfig,
                 sched: NoiseSchedule, rng: Rng) -> np.ndarray:
    """One guided DDIM round; returns the final latent [f, C, h, w].

    With init_overlap_noise, the starting noise at the overlap slots is the
    forward-noised condition frames at the ladder's top step instead of
    pure noise, which anchors those frames structurally to the condition.
    """
    lc = model.config.latent_channels
    side = cfg.frame_size // model.config.patch
    ladder = ddim_ladder(sched, cfg.steps)
    t_start = ladder[0]

    z = rng.child("init").standard_normal((cfg.f, lc, side, side))
    if cfg.init_overlap_noise and cond.frames is not None:
        n_c = cond.frames.shape[0]
        overlap_eps = rng.child("overlap").standard_normal(cond.frames.shape)
        z[:n_c] = q_sample(cond.frames, t_start, overlap_eps, sched)

    g = GuidanceConfig(s=cfg.s, r=cfg.r)
    sigma_pos = 0.0
    for t, t_prev in zip(ladder[:-1], ladder[1:]):
        e_pos = model.predict_eps_np(z, t, cond)
        e_neg = model.predict_eps_np(z, t, NULL_BUNDLE)
        eps = cfg_combine(e_pos, e_neg, g.s)
        sigma_pos = global_std(e_pos)
        if (cfg.resample_per_step and g.r > 0.0
                and sigma_pos > 0.0 and global_std(eps) > 0.0):
            eps = resample(eps, sigma_pos, g.r)
        z = ddim_step(z, eps, t, t_prev, sched)
    if (not cfg.resample_per_step and g.r > 0.0
            and sigma_pos > 0.0 and global_std(z) > 0.0):
        z = resample(z, sigma_pos, g.r)
    return z


def _carry_condition(model: Model, z_round: np.ndarray, n_o: int,
                     text: list[int] | None) -> ConditionBundle:
    """Next round's condition: last n_o frames, decoded then re-encoded."""
    if n_o == 0:
        return ConditionBundle(frames=None, text=text, n_c=0)
    pixels = model.codec.decode(z_round[-n_o:])
    frames = model.codec.encode(pixels)
    return ConditionBundle(frames=frames, text=text, n_c=n_o)


def multi_round(model: Model, init_cond: ConditionBundle, cfg: SamplerConfig,
                sched: NoiseSchedule) -> tuple[np.ndarray, list[np.ndarray]]:
    """Recursive long-video generation.

    Returns (stitched latent, per-round latents). Stitching keeps the first
    occurrence of frames shared between consecutive rounds and appends only
    the f - n_o new frames of each later round.
    """
    root = Rng(cfg.seed)
    rounds: list[np.ndarray] = []
    cond = init_cond
    for k in range(cfg.m):
        z = single_round(model, cond, cfg, sched, root.child(f"round{k}"))
        rounds.append(z)
        if k + 1 < cfg.m:
            cond = _carry_condition(model, z, cfg.n_o, init_cond.text)
    pieces = [rounds[0]] + [z[cfg.n_o:] for z in rounds[1:]]
    stitched = np.concatenate(pieces, axis=0)
    assert stitched.shape[0] == total_frames(cfg)
    return stitched, rounds


def drift_probe(model: Model, init_cond: ConditionBundle, cfg: SamplerConfig,
                r_values: list[float], sched: NoiseSchedule) -> list[dict]:
    """Per-round spread and intensity statistics across resampling scales.

    Each r value reruns the same seeded multi-round generation, so rows are
    comparable: (r, round, latent_std, mean_intensity). Drift is read as
    the deviation of later rounds from round 1.
    """
    rows: list[dict] = []
    for r in r_values:
        cfg_r = replace(cfg, r=float(r))
        _, rounds = multi_round(model, init_cond, cfg_r, sched)
        for k, z in enumerate(rounds):
            pixels = model.codec.decode(z)
            rows.append({
                "r": float(r),
                "round": k + 1,
                "latent_std": global_std(z),
                "mean_intensity": float(np.mean(pixels, dtype=np.float64)),
            })
    return rows


def drift_metric(rows: list[dict], r: float) -> float:
    """Max over rounds of |latent_std(round) - latent_std(round 1)| for one r."""
    stds = [row["latent_std"] for row in rows if row["r"] == float(r)]
    if not stds:
        raise ConfigError(f"drift_metric: no rows for r={r}")
    return float(max(abs(s - stds[0]) for s in stds))
