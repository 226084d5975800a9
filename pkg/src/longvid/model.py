"""Neural components: latent codec, text encoder stub, video projector, denoiser.

The codec is an exactly invertible orthogonal patchify map standing in for
a learned autoencoder, which removes reconstruction error from every
downstream test. The denoiser is a single-resolution stack of per-frame
attention blocks (frozen, the "pretrained backbone" role) interleaved with
frame-axis attention blocks (trainable group named phi). The video
projector turns 1..n conditioning frames into one conditioning token slot
per generated frame: per-frame learned-query resamplers, last-frame
padding, a frame-axis transformer (trainable group named theta), and a
frozen two-layer MLP.

Parameter groups:
  theta  - projector frame-axis attention
  phi    - denoiser frame-axis attention blocks
  frozen - everything else (resamplers, spatial blocks, text table, ...)

Condition bundles are duck-typed here: anything with ``frames`` (latent
[n_c, C, h, w] or None), ``text`` (token id list or None) and ``is_null``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ConditioningError, ConfigError, ShapeError
from .numcore import Rng, Tensor

DEFAULT_DIM = 64
DEFAULT_IP_TOKENS = 4
DEFAULT_PATCH = 2
DEFAULT_VOCAB_SIZE = 64
MAX_TEXT_LEN = 16


@dataclass(frozen=True)
class ModelConfig:
    dim: int = DEFAULT_DIM
    ip_tokens: int = DEFAULT_IP_TOKENS
    patch: int = DEFAULT_PATCH
    pixel_channels: int = 3
    spatial_blocks: int = 2
    temporal_blocks: int = 2
    vocab_size: int = DEFAULT_VOCAB_SIZE
    temporal_enabled: bool = True
    seed: int = 0

    @property
    def latent_channels(self) -> int:
        return self.pixel_channels * self.patch * self.patch


@dataclass
class ParamEntry:
    name: str
    tensor: Tensor
    group: str  # theta | phi | frozen


class _Registry:
    def __init__(self):
        self.entries: list[ParamEntry] = []

    def add(self, name: str, data: np.ndarray, group: str) -> Tensor:
        t = Tensor(data, trainable=group in ("theta", "phi"), name=name)
        self.entries.append(ParamEntry(name, t, group))
        return t


def _sinusoidal(n: int, dim: int) -> np.ndarray:
    """Standard sin/cos position table, rows indexed by position."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(dim // 2, dtype=np.float64) / (dim // 2))
    ang = pos * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


_POS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pos_table(n: int, dim: int) -> np.ndarray:
    key = (n, dim)
    if key not in _POS_CACHE:
        _POS_CACHE[key] = _sinusoidal(n, dim)
    return _POS_CACHE[key]


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    freqs = np.exp(-np.log(10000.0) * np.arange(dim // 2, dtype=np.float64) / (dim // 2))
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float32)




class LatentCodec:
    """Orthogonal patchify codec: pixels [F,3,H,W] <-> latents [F,12,H/p,W/p]."""

    def __init__(self, patch: int, channels: int, rng: Rng):
        self.patch = patch
        self.channels = channels
        d = channels * patch * patch
        q, _ = np.linalg.qr(rng.standard_normal((d, d)).astype(np.float64))
        self.proj = q.astype(np.float32)

    @property
    def latent_channels(self) -> int:
        return self.channels * self.patch * self.patch

    def encode(self, video: np.ndarray) -> np.ndarray:
        f, c, h, w = video.shape
        p = self.patch
        if c != self.channels or h % p or w % p:
            raise ShapeError(
                f"encode: frames must be [F,{self.channels},H,W] with H,W divisible by {p}"
            )
        x = video.reshape(f, c, h // p, p, w // p, p)
        x = x.transpose(0, 2, 4, 1, 3, 5).reshape(f, h // p, w // p, c * p * p)
        z = x @ self.proj
        return np.ascontiguousarray(z.transpose(0, 3, 1, 2)).astype(np.float32)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        f, d, hh, ww = latent.shape
        p = self.patch
        if d != self.latent_channels:
            raise ShapeError(f"decode: expected {self.latent_channels} channels, got {d}")
        x = latent.transpose(0, 2, 3, 1) @ self.proj.T
        x = x.reshape(f, hh, ww, self.channels, p, p)
        x = x.transpose(0, 3, 1, 4, 2, 5).reshape(f, self.channels, hh * p, ww * p)
        return np.ascontiguousarray(x).astype(np.float32)


class TextEncoderStub:
    """Deterministic token-embedding table with positional offsets."""

    def __init__(self, reg: _Registry, vocab_size: int, dim: int, rng: Rng):
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = reg.add(
            "text.table", rng.standard_normal((vocab_size, dim)) * np.float32(0.5), "frozen"
        )
        self.null_embedding = reg.add(
            "text.null", rng.standard_normal((1, dim)) * np.float32(0.5), "frozen"
        )

    def encode(self, tokens) -> Tensor:
        if tokens is None or len(tokens) == 0:
            return self.null_embedding
        ids = [int(t) for t in tokens]
        if any(t < 0 or t >= self.vocab_size for t in ids):
            raise ConfigError(f"text_encode: token id outside vocab of {self.vocab_size}")
        if len(ids) > MAX_TEXT_LEN:
            raise ConfigError(f"text_encode: at most {MAX_TEXT_LEN} tokens supported")
        rows = nc.index_select(self.table, 0, ids)
        pos = Tensor(_pos_table(MAX_TEXT_LEN, self.dim)[: len(ids)])
        return nc.add(rows, pos)


class AttentionBlock:
    """Pre-LN single-head residual attention over the second-to-last axis."""

    def __init__(self, reg: _Registry, prefix: str, dim: int, group: str,
                 rng: Rng, kv_dim: int | None = None):
        kv_dim = kv_dim or dim
        s_in = np.float32(1.0 / np.sqrt(dim))
        s_kv = np.float32(1.0 / np.sqrt(kv_dim))
        self.ln_g = reg.add(f"{prefix}.ln_g", np.ones(dim, dtype=np.float32), group)
        self.ln_b = reg.add(f"{prefix}.ln_b", np.zeros(dim, dtype=np.float32), group)
        self.wq = reg.add(f"{prefix}.wq", rng.standard_normal((dim, dim)) * s_in, group)
        self.wk = reg.add(f"{prefix}.wk", rng.standard_normal((kv_dim, dim)) * s_kv, group)
        self.wv = reg.add(f"{prefix}.wv", rng.standard_normal((kv_dim, dim)) * s_kv, group)
        self.wo = reg.add(f"{prefix}.wo", rng.standard_normal((dim, dim)) * np.float32(0.02), group)

    def __call__(self, x: Tensor, kv: Tensor | None = None,
                 pos: np.ndarray | None = None) -> Tensor:
        h = nc.layer_norm(x, self.ln_g, self.ln_b)
        src = h if kv is None else kv
        q = nc.matmul(h, self.wq)
        k = nc.matmul(src, self.wk)
        v = nc.matmul(src, self.wv)
        if pos is not None:
            pq = nc.tile_leading(Tensor(pos), x.shape[0])
            q = nc.add(q, pq)
            if kv is None:
                k = nc.add(k, pq)
        att = nc.scaled_dot_attention(q, k, v)
        return nc.add(x, nc.matmul(att, self.wo))


class VideoProjector:
    """Condition frames -> one conditioning token slot per generated frame."""

    def __init__(self, reg: _Registry, cfg: ModelConfig, rng: Rng):
        d, lc = cfg.dim, cfg.latent_channels
        self.cfg = cfg
        self.queries = reg.add(
            "projector.ip.queries", rng.standard_normal((cfg.ip_tokens, d)), "frozen"
        )
        s_lc = np.float32(1.0 / np.sqrt(lc))
        self.wk = reg.add("projector.ip.wk", rng.standard_normal((lc, d)) * s_lc, "frozen")
        self.wv = reg.add("projector.ip.wv", rng.standard_normal((lc, d)) * s_lc, "frozen")
        self.wo = reg.add(
            "projector.ip.wo", rng.standard_normal((d, d)) * np.float32(1.0 / np.sqrt(d)), "frozen"
        )
        self.temporal = (
            AttentionBlock(reg, "projector.temporal", d, "theta", rng.child("vp_t"))
            if cfg.temporal_enabled else None
        )
        s_d = np.float32(1.0 / np.sqrt(d))
        s_2d = np.float32(1.0 / np.sqrt(2 * d))
        self.mlp_w1 = reg.add("projector.mlp.w1", rng.standard_normal((d, 2 * d)) * s_d, "frozen")
        self.mlp_b1 = reg.add("projector.mlp.b1", np.zeros(2 * d, dtype=np.float32), "frozen")
        self.mlp_w2 = reg.add("projector.mlp.w2", rng.standard_normal((2 * d, d)) * s_2d, "frozen")
        self.mlp_b2 = reg.add("projector.mlp.b2", np.zeros(d, dtype=np.float32), "frozen")

    def ip_features(self, frames_latent: np.ndarray) -> Tensor:
        """Per-frame learned-query resampling; frames stay independent here."""
        n_c, lc, h, w = frames_latent.shape
        tok = Tensor(frames_latent.reshape(n_c, lc, h * w).transpose(0, 2, 1))
        k = nc.matmul(tok, self.wk)
        k = nc.add(k, nc.tile_leading(Tensor(_pos_table(h * w, self.cfg.dim)), n_c))
        v = nc.matmul(tok, self.wv)
        q = nc.tile_leading(self.queries, n_c)
        att = nc.scaled_dot_attention(q, k, v)
        return nc.matmul(att, self.wo)

    @staticmethod
    def pad_indices(n_c: int, n_g: int) -> list[int]:
        return list(range(n_c)) + [n_c - 1] * (n_g - n_c)

    def __call__(self, frames_latent: np.ndarray, n_g: int) -> Tensor:
        n_c = frames_latent.shape[0]
        if n_c == 0:
            raise ConditioningError("project_condition: need at least one condition frame")
        if n_c > n_g:
            raise ConditioningError(f"project_condition: n_c={n_c} exceeds n_g={n_g}")
        feat = self.ip_features(frames_latent)
        if n_c < n_g:
            feat = nc.index_select(feat, 0, self.pad_indices(n_c, n_g))
        if self.temporal is not None:
            x = nc.transpose(feat, (1, 0, 2))
            x = self.temporal(x, pos=_pos_table(n_g, self.cfg.dim))
            feat = nc.transpose(x, (1, 0, 2))
        h = nc.silu(nc.add_lastdim(nc.matmul(feat, self.mlp_w1), self.mlp_b1))
        return nc.add_lastdim(nc.matmul(h, self.mlp_w2), self.mlp_b2)


class Denoiser:
    """Per-frame attention backbone with frame-axis attention interleaved."""

    def __init__(self, reg: _Registry, cfg: ModelConfig, rng: Rng):
        d, lc = cfg.dim, cfg.latent_channels
        self.cfg = cfg
        if cfg.temporal_blocks > cfg.spatial_blocks:
            raise ConfigError("temporal blocks are interleaved after spatial ones; "
                              "need temporal_blocks <= spatial_blocks")
        # orthonormal token embed/readout pair: readout(embed(x)) == x, which
        # makes the untrained backbone behave like a crude noise-passthrough
        q, _ = np.linalg.qr(rng.standard_normal((d, lc)).astype(np.float64))
        self.w_in = reg.add("denoiser.w_in", q.T.astype(np.float32), "frozen")
        self.w_out = reg.add("denoiser.w_out", q.astype(np.float32), "frozen")
        s_d = np.float32(1.0 / np.sqrt(d))
        self.t_w1 = reg.add("denoiser.time.w1", rng.standard_normal((d, d)) * s_d, "frozen")
        self.t_b1 = reg.add("denoiser.time.b1", np.zeros(d, dtype=np.float32), "frozen")
        self.t_w2 = reg.add("denoiser.time.w2", rng.standard_normal((d, d)) * np.float32(0.02), "frozen")
        self.t_b2 = reg.add("denoiser.time.b2", np.zeros(d, dtype=np.float32), "frozen")
        self.spatial = []
        self.cross = []
        self.temporal = []
        for i in range(cfg.spatial_blocks):
            r = rng.child(f"sblock{i}")
            self.spatial.append(AttentionBlock(reg, f"denoiser.spatial{i}.self", d, "frozen", r))
            self.cross.append(AttentionBlock(reg, f"denoiser.spatial{i}.cross", d, "frozen", r.child("x")))
        if cfg.temporal_enabled:
            for i in range(cfg.temporal_blocks):
                self.temporal.append(
                    AttentionBlock(reg, f"denoiser.temporal{i}", d, "phi", rng.child(f"tblock{i}"))
                )

    def __call__(self, z_t: np.ndarray, t: int, cond_tokens: Tensor,
                 text_tokens: Tensor) -> Tensor:
        f, lc, h, w = z_t.shape
        if cond_tokens.shape[0] != f:
            raise ConditioningError(
                f"denoise: {cond_tokens.shape[0]} conditioning slots for {f} frames"
            )
        p = h * w
        tok = Tensor(np.ascontiguousarray(z_t.reshape(f, lc, p).transpose(0, 2, 1)))
        x = nc.matmul(tok, self.w_in)
        temb = Tensor(timestep_embedding(t, self.cfg.dim)[None, :])
        temb = nc.silu(nc.add_lastdim(nc.matmul(temb, self.t_w1), self.t_b1))
        temb = nc.add_lastdim(nc.matmul(temb, self.t_w2), self.t_b2)
        x = nc.add_lastdim(x, nc.reshape(temb, (self.cfg.dim,)))
        kv = nc.concat([cond_tokens, nc.tile_leading(text_tokens, f)], axis=1)
        # position tables ride on q/k inside the blocks, not on the residual
        # stream, so the orthonormal readout stays an identity at init
        spos = _pos_table(p, self.cfg.dim)
        fpos = _pos_table(f, self.cfg.dim)
        for i in range(self.cfg.spatial_blocks):
            x = self.spatial[i](x, pos=spos)
            x = self.cross[i](x, kv=kv)
            if i < len(self.temporal):
                xt = nc.transpose(x, (1, 0, 2))
                xt = self.temporal[i](xt, pos=fpos)
                x = nc.transpose(xt, (1, 0, 2))
        eps_tok = nc.matmul(x, self.w_out)
        return nc.transpose(nc.reshape(eps_tok, (f, h, w, lc)), (0, 3, 1, 2))


class Model:
    """The full stack: codec + text stub + projector + denoiser + null tokens."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        cfg = self.config
        rng = Rng(cfg.seed)
        reg = _Registry()
        self.codec = LatentCodec(cfg.patch, cfg.pixel_channels, rng.child("codec"))
        self.text = TextEncoderStub(reg, cfg.vocab_size, cfg.dim, rng.child("text"))
        self.projector = VideoProjector(reg, cfg, rng.child("projector"))
        self.denoiser = Denoiser(reg, cfg, rng.child("denoiser"))
        self.null_cond_tokens = reg.add(
            "null_cond_tokens",
            rng.child("null").standard_normal((cfg.ip_tokens, cfg.dim)) * np.float32(0.5),
            "frozen",
        )
        self.params: list[ParamEntry] = reg.entries

    def predict_eps(self, z_t: np.ndarray, t: int, bundle) -> Tensor:
        f = z_t.shape[0]
        frames = getattr(bundle, "frames", None)
        text = getattr(bundle, "text", None)
        if getattr(bundle, "is_null", False) or frames is None:
            cond_tokens = nc.tile_leading(self.null_cond_tokens, f)
        else:
            cond_tokens = self.projector(frames, f)
        text_tokens = self.text.encode(text)
        return self.denoiser(z_t, t, cond_tokens, text_tokens)

    def predict_eps_np(self, z_t: np.ndarray, t: int, bundle) -> np.ndarray:
        with nc.no_grad():
            return self.predict_eps(z_t, t, bundle).data


@dataclass
class ParamPartition:
    theta: list[ParamEntry] = field(default_factory=list)
    phi: list[ParamEntry] = field(default_factory=list)
    frozen: list[ParamEntry] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.theta) + len(self.phi) + len(self.frozen)

    def tensors(self, group: str) -> list[Tensor]:
        return [e.tensor for e in getattr(self, group)]


def partition_params(model: Model) -> ParamPartition:
    """Split parameters into theta / phi / frozen; disjoint and exhaustive."""
    part = ParamPartition()
    for e in model.params:
        getattr(part, e.group).append(e)
    return part


# ---------------------------------------------------------------------------
# Checkpoints: manifest JSON plus one FFT1 blob per parameter.

CHECKPOINT_FORMAT = "longvid-checkpoint-v1"


def save_checkpoint(model: Model, directory) -> None:
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model.config),
        "params": [
            {"name": e.name, "shape": list(e.tensor.shape), "group": e.group}
            for e in model.params
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for e in model.params:
        nc.write_fft1(directory / "params" / f"{e.name}.fft1", e.tensor)


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{directory}: unknown checkpoint format")
    model = Model(ModelConfig(**manifest["model_config"]))
    for e in model.params:
        data = nc.read_fft1(directory / "params" / f"{e.name}.fft1")
        if data.shape != e.tensor.shape:
            raise ShapeError(f"checkpoint param {e.name}: shape {data.shape} vs {e.tensor.shape}")
        e.tensor.data[...] = data
    return model


def checkpoint_hash(directory) -> str:
    directory = Path(directory)
    h = hashlib.sha256()
    h.update((directory / "manifest.json").read_bytes())
    for f in sorted((directory / "params").glob("*.fft1")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()
