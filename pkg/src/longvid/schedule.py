"""Diffusion noise schedules, forward noising, DDIM reverse step, SNR diagnostics.

The schedule tables are kept in float64 so the terminal signal-to-noise
diagnostics are not polluted by accumulation error; everything applied to
latent tensors is cast back to float32 at the point of use.

Timesteps are 0-based indices into tables of length T. A ``t_prev`` of -1
denotes the virtual clean endpoint with alpha_bar exactly 1, which is how a
DDIM ladder terminates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta, cumulative alpha_bar and SNR tables.

    beta[t] lies in (0, 1]; the closed endpoint only occurs for schedules
    rescaled to zero terminal SNR, where the final step is total noise by
    construction. alpha_bar and snr are strictly decreasing.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def snr(self) -> np.ndarray:
        ab = self.alpha_bar
        out = np.zeros_like(ab)
        nz = ab < 1.0
        out[nz] = ab[nz] / (1.0 - ab[nz])
        out[~nz] = np.inf
        return out

    def sqrt_alpha_bar(self, t: int) -> float:
        if t == -1:
            return 1.0
        return float(np.sqrt(self.alpha_bar[t]))

    def sqrt_one_minus_alpha_bar(self, t: int) -> float:
        if t == -1:
            return 0.0
        return float(np.sqrt(1.0 - self.alpha_bar[t]))


DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


def make_linear_schedule(T: int = DEFAULT_T,
                         beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linearly interpolated beta schedule with alpha_bar/snr tables filled."""
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def rescale_zero_terminal_snr(s: NoiseSchedule) -> NoiseSchedule:
    """Affinely rescale sqrt(alpha_bar) so the terminal step has exactly zero SNR.

    sqrt(alpha_bar[0]) is preserved; sqrt(alpha_bar[T-1]) becomes 0. The
    operation is idempotent. Betas are rederived from the rescaled table,
    which forces beta[T-1] == 1 (the last step is total noise).
    """
    sab = np.sqrt(s.alpha_bar)
    head, tail = sab[0], sab[-1]
    if head == tail:
        raise DegenerateInputError("rescale: alpha_bar[0] == alpha_bar[T-1]")
    sab = (sab - tail) * (head / (head - tail))
    alpha_bar = sab * sab
    alpha_bar[-1] = 0.0
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    beta = 1.0 - alpha_bar / prev
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(ab[t]) * z0 + sqrt(1 - ab[t]) * eps."""
    if not (0 <= t < s.T):
        raise IndexError(f"q_sample: t={t} outside [0, {s.T})")
    if z0.shape != eps.shape:
        raise ShapeError(f"q_sample: z0 {z0.shape} vs eps {eps.shape}")
    a = float(np.sqrt(s.alpha_bar[t]))
    b = float(np.sqrt(1.0 - s.alpha_bar[t]))
    return (a * z0 + b * eps).astype(np.float32)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              s: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta=0) DDIM update from step t to t_prev (< t).

    Predicts z0_hat = (z_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t) and
    re-noises to the target level. t_prev == -1 targets alpha_bar == 1
    exactly, i.e. the update returns z0_hat.
    """
    if t_prev >= t:
        raise ConfigError(f"ddim_step: t_prev={t_prev} must be < t={t}")
    if not (0 <= t < s.T) or t_prev < -1:
        raise IndexError(f"ddim_step: indices t={t}, t_prev={t_prev} out of range")
    if z_t.shape != eps_hat.shape:
        raise ShapeError(f"ddim_step: z_t {z_t.shape} vs eps_hat {eps_hat.shape}")
    a_t = s.sqrt_alpha_bar(t)
    b_t = s.sqrt_one_minus_alpha_bar(t)
    a_p = s.sqrt_alpha_bar(t_prev)
    b_p = s.sqrt_one_minus_alpha_bar(t_prev)
    z0_hat = (z_t - b_t * eps_hat) / a_t
    return (a_p * z0_hat + b_p * eps_hat).astype(np.float32)


def ddim_ladder(s: NoiseSchedule, steps: int) -> list[int]:
    """Descending substep indices, uniformly strided in the noise angle.

    The noise angle arccos(sqrt(alpha_bar)) runs from ~0 (clean) to ~pi/2
    (pure noise). Equal strides in that angle minimize the deterministic
    sampler's per-step contraction, which uniform-in-t strides do not; the
    final rung is the virtual -1 endpoint (alpha_bar == 1).
    """
    if steps < 1:
        raise ConfigError(f"ddim_ladder: steps must be >= 1, got {steps}")
    ang = np.arccos(np.sqrt(np.clip(s.alpha_bar, 0.0, 1.0)))
    targets = np.linspace(ang[-1], 0.0, steps + 1)[:-1]
    ladder: list[int] = []
    for x in targets:
        i = int(np.argmin(np.abs(ang - x)))
        if not ladder or i < ladder[-1]:
            ladder.append(i)
    ladder.append(-1)
    return ladder


def snr_report(s: NoiseSchedule) -> dict:
    """Full diagnostic table plus a terminal-SNR flag.

    Rows carry (t, beta, alpha_bar, snr, sqrt_alpha_bar). ``flagged`` is
    True when the final step still contains signal, the train/inference
    mismatch that makes guidance overexpose long generations.
    """
    snr = s.snr
    sab = np.sqrt(s.alpha_bar)
    rows = [
        {
            "t": int(t),
            "beta": float(s.beta[t]),
            "alpha_bar": float(s.alpha_bar[t]),
            "snr": float(snr[t]),
            "sqrt_alpha_bar": float(sab[t]),
        }
        for t in range(s.T)
    ]
    terminal = float(snr[-1])
    return {
        "rows": rows,
        "terminal_snr": terminal,
        "terminal_alpha_bar": float(s.alpha_bar[-1]),
        "flagged": bool(terminal > 0.0),
        "flag": "non-zero terminal SNR" if terminal > 0.0 else "",
    }
