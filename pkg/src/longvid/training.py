"""Overlap-aware sample construction and the temporal co-training loop.

Training pairs overlap by construction: the condition frames are exactly
the first n_c latent frames of the target clip, with n_c drawn per sample
from a configured range. Each step flips one coin: with probability p the
condition is dropped to the learned null carrier and only the denoiser's
frame-axis group (phi) trains; otherwise the full condition is used and
both frame-axis groups (theta and phi) train. Spatial weights never move.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ShapeError
from .model import Model, partition_params
from .numcore import AdamState, Rng, Tensor
from .schedule import NoiseSchedule, q_sample


@dataclass(frozen=True)
class TrainConfig:
    p: float = 0.1
    n_c_min: int = 1
    n_c_max: int = 4
    n_g: int = 8
    steps: int = 5000
    lr: float = 2e-3
    batch: int = 1
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ConfigError(f"p must be in [0, 1], got {self.p}")
        if not (1 <= self.n_c_min <= self.n_c_max <= self.n_g):
            raise ConfigError(
                f"need 1 <= n_c_min <= n_c_max <= n_g, got "
                f"{self.n_c_min}/{self.n_c_max}/{self.n_g}"
            )
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")


@dataclass(frozen=True)
class ConditionBundle:
    """Condition frames (latent), caption tokens, overlap count, null flag."""

    frames: np.ndarray | None
    text: list[int] | None
    n_c: int
    is_null: bool = False

    def __post_init__(self):
        if self.is_null and (self.frames is not None or self.text is not None):
            raise ConfigError("null bundle must carry neither frames nor text")
        if self.frames is not None and self.frames.shape[0] != self.n_c:
            raise ShapeError(
                f"bundle: {self.frames.shape[0]} frames but n_c={self.n_c}"
            )


NULL_BUNDLE = ConditionBundle(frames=None, text=None, n_c=0, is_null=True)


def build_sample(clip: np.ndarray, caption: list[int], n_c: int, n_g: int,
                 codec) -> tuple[ConditionBundle, np.ndarray]:
    """Target = first n_g encoded frames; condition = its first n_c latent frames."""
    if clip.shape[0] < n_g:
        raise ConfigError(f"clip has {clip.shape[0]} frames, need >= {n_g}")
    if not (1 <= n_c <= n_g):
        raise ConfigError(f"need 1 <= n_c <= n_g, got n_c={n_c}, n_g={n_g}")
    target = codec.encode(clip[:n_g])
    bundle = ConditionBundle(frames=target[:n_c].copy(), text=list(caption), n_c=n_c)
    return bundle, target


def draw_n_c(cfg: TrainConfig, rng: Rng) -> int:
    return int(rng.integers(cfg.n_c_min, cfg.n_c_max + 1))


def co_train_step(model: Model, batch: list[tuple[ConditionBundle, np.ndarray]],
                  cfg: TrainConfig, rng: Rng, sched: NoiseSchedule,
                  opt_state: AdamState, force_branch: str | None = None
                  ) -> tuple[float, str]:
    """One optimization step; returns (loss, branch taken).

    ``force_branch`` pins the coin to "cond" or "uncond" for routing tests.
    """
    if force_branch is None:
        uncond = bool(rng.uniform(0.0, 1.0) < cfg.p)
    else:
        uncond = force_branch == "uncond"
    part = partition_params(model)
    if uncond:
        step_params = part.tensors("phi")
    else:
        step_params = part.tensors("theta") + part.tensors("phi")

    losses = []
    for bundle, target in batch:
        t = int(rng.integers(0, sched.T))
        eps = rng.standard_normal(target.shape)
        z_t = q_sample(target, t, eps, sched)
        use = NULL_BUNDLE if uncond else bundle
        pred = model.predict_eps(z_t, t, use)
        losses.append(nc.mse(pred, Tensor(eps)))
    loss = losses[0]
    for other in losses[1:]:
        loss = nc.add(loss, other)
    if len(losses) > 1:
        loss = nc.mul(loss, 1.0 / len(losses))
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"training loss is not finite: {value}")
    if step_params:
        nc.backward(loss)
        nc.clip_global_norm(step_params, cfg.grad_clip)
        nc.adam_step(step_params, opt_state, cfg.lr)
        trainable = part.tensors("theta") + part.tensors("phi")
        nc.zero_grads(trainable)
    return value, ("uncond" if uncond else "cond")


@dataclass(frozen=True)
class PretrainConfig:
    """Backbone stage: per-frame denoising that stands in for pretrained weights.

    The co-training partition freezes everything outside the frame-axis
    groups, mirroring a backbone inherited from a pretrained image model;
    this stage manufactures that inheritance at desk scale by training the
    per-frame blocks (and the null-condition carriers) on single-frame
    samples, self-conditioned through the projector interface with the
    same condition-dropping coin as co-training.
    """

    steps: int = 3000
    lr: float = 2e-3
    batch: int = 2
    p: float = 0.1
    seed: int = 0


BACKBONE_PREFIXES = ("denoiser.spatial", "denoiser.time.")
BACKBONE_NAMES = ("null_cond_tokens", "text.null")


def backbone_entries(model: Model):
    return [e for e in model.params
            if e.name.startswith(BACKBONE_PREFIXES) or e.name in BACKBONE_NAMES]


def pretrain_backbone(model: Model, dataset, cfg: PretrainConfig,
                      sched: NoiseSchedule) -> "TrainResult":
    """Train the per-frame backbone; frame-axis groups are untouched.

    Works on either architecture; with temporal blocks absent this is the
    whole trainable surface of the ablation twin.
    """
    if len(dataset) == 0:
        raise ConfigError("pretrain_backbone: dataset is empty")
    entries = backbone_entries(model)
    tensors = [e.tensor for e in entries]
    was_trainable = [t.trainable for t in tensors]
    for t in tensors:
        t.trainable = True
    rng = Rng(cfg.seed)
    data_rng = rng.child("data")
    opt = AdamState()
    train_idx = dataset.train_indices
    result = TrainResult()
    try:
        for step in range(cfg.steps):
            losses = []
            uncond = bool(rng.uniform(0.0, 1.0) < cfg.p)
            for _ in range(cfg.batch):
                i = train_idx[data_rng.choice_index(len(train_idx))]
                clip = dataset.videos[i]
                j = int(data_rng.integers(0, clip.shape[0]))
                target = model.codec.encode(clip[j:j + 1])
                if uncond:
                    bundle = NULL_BUNDLE
                else:
                    bundle = ConditionBundle(frames=target.copy(),
                                             text=list(dataset.captions[i]), n_c=1)
                t = int(rng.integers(0, sched.T))
                eps = rng.standard_normal(target.shape)
                z_t = q_sample(target, t, eps, sched)
                losses.append(nc.mse(model.predict_eps(z_t, t, bundle), Tensor(eps)))
            loss = losses[0]
            for other in losses[1:]:
                loss = nc.add(loss, other)
            if len(losses) > 1:
                loss = nc.mul(loss, 1.0 / len(losses))
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"pretrain loss is not finite: {value}")
            nc.backward(loss)
            nc.clip_global_norm(tensors, 1.0)
            nc.adam_step(tensors, opt, cfg.lr)
            nc.zero_grads(tensors)
            result.history.append((step, value, "uncond" if uncond else "cond"))
    finally:
        for t, flag in zip(tensors, was_trainable):
            t.trainable = flag
    return result


def adopt_backbone(target: Model, source: Model) -> None:
    """Copy every shared-name parameter from source into target.

    The inheritance step: a full model adopts the per-frame weights of a
    pretrained temporal-free twin before co-training its frame-axis groups.
    """
    by_name = {e.name: e.tensor for e in source.params}
    for e in target.params:
        src = by_name.get(e.name)
        if src is None:
            continue
        if src.shape != e.tensor.shape:
            raise ShapeError(f"adopt_backbone: {e.name} {src.shape} vs {e.tensor.shape}")
        e.tensor.data[...] = src.data


@dataclass
class TrainResult:
    history: list[tuple[int, float, str]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [h[1] for h in self.history]

    def running_mean(self, window: int = 100) -> list[float]:
        vals = self.losses
        out = []
        for i in range(len(vals)):
            lo = max(0, i - window + 1)
            out.append(float(np.mean(vals[lo:i + 1])))
        return out


def train(model: Model, dataset, cfg: TrainConfig, sched: NoiseSchedule,
          out_dir: Path | str | None = None, log_every: int = 0) -> TrainResult:
    """Run co_train_step for cfg.steps over the dataset's train split.

    Deterministic given cfg.seed. When out_dir is given, persists the
    checkpoint, a (step, loss, branch) CSV log, and a loss-curve figure.
    """
    if len(dataset) == 0:
        raise ConfigError("train: dataset is empty")
    rng = Rng(cfg.seed)
    data_rng = rng.child("data")
    step_rng = rng.child("steps")
    opt_state = AdamState()
    train_idx = dataset.train_indices
    result = TrainResult()
    for step in range(cfg.steps):
        batch = []
        for _ in range(cfg.batch):
            i = train_idx[data_rng.choice_index(len(train_idx))]
            n_c = draw_n_c(cfg, data_rng)
            bundle, target = build_sample(
                dataset.videos[i], dataset.captions[i], n_c, cfg.n_g, model.codec
            )
            batch.append((bundle, target))
        loss, branch = co_train_step(model, batch, cfg, step_rng, sched, opt_state)
        result.history.append((step, loss, branch))
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  loss {loss:.5f}  [{branch}]")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .model import save_checkpoint
        save_checkpoint(model, out_dir / "checkpoint")
        with open(out_dir / "loss.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss", "branch"])
            writer.writerows(result.history)
        from .plots import render_loss_figure
        render_loss_figure(result.history, out_dir / "loss.png")
    return result
