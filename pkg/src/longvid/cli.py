"""Single command-line entry point wiring all subsystems.

Subcommands: gen-data, train, sample, drift-probe, analyze-schedule,
oracle-check, evaluate. Every run writes all artifacts under --out-dir and
drops exactly one run manifest there; reruns with an identical manifest
reproduce identical artifacts. Exit codes: 0 success, 1 usage error, 2
runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .guidance import GuidanceConfig
from .inference import SamplerConfig, drift_probe, multi_round, total_frames
from .metrics import (consistency_score, default_extractor,
                      frechet_lite_detailed, psnr, ssim)
from .model import Model, ModelConfig, checkpoint_hash, load_checkpoint
from .numcore import Rng, read_fft1, write_fft1
from .oracle import GaussianWorld, oracle_sample_check
from .ppm import read_ppm, write_ppm
from .schedule import (make_linear_schedule, rescale_zero_terminal_snr,
                       snr_report)
from .synthdata import Dataset, make_dataset
from .training import (ConditionBundle, PretrainConfig, TrainConfig,
                       adopt_backbone, pretrain_backbone, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse's exit(2) into exit code 1
        raise UsageError(message)


def _parse_kv_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve(flag_value, config: dict[str, str], key: str, cast, default):
    """Flag wins over config file wins over built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        raw = config[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "on", "yes")
        return cast(raw)
    return default


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seed: int,
                    artifacts: list[str], ckpt_hash: str | None = None) -> None:
    manifest = {
        "tool": "longvid",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "checkpoint_hash": ckpt_hash,
        "artifacts": sorted(artifacts),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# gen-data

def _cmd_gen_data(args) -> int:
    out = _out_dir(args)
    rng = Rng(args.seed)
    ds = make_dataset(args.num_clips, rng, length=args.clip_length)
    artifacts = []
    for i, (video, caption) in enumerate(zip(ds.videos, ds.captions)):
        clip_path = out / f"clip_{i:05d}.fft1"
        tok_path = out / f"clip_{i:05d}.tokens"
        write_fft1(clip_path, video)
        tok_path.write_text(" ".join(str(t) for t in caption) + "\n")
        artifacts += [clip_path.name, tok_path.name]
    dataset_info = {
        "num_clips": len(ds),
        "clip_length": args.clip_length,
        "train_indices": ds.train_indices,
        "eval_indices": ds.eval_indices,
    }
    (out / "dataset.json").write_text(json.dumps(dataset_info, indent=2) + "\n")
    artifacts.append("dataset.json")
    _write_manifest(out, "gen-data",
                    {"num_clips": args.num_clips, "clip_length": args.clip_length},
                    args.seed, artifacts)
    print(f"wrote {len(ds)} clips to {out}")
    return 0


def load_dataset_dir(path: Path | str) -> Dataset:
    path = Path(path)
    info = json.loads((path / "dataset.json").read_text())
    videos, captions = [], []
    for i in range(info["num_clips"]):
        videos.append(read_fft1(path / f"clip_{i:05d}.fft1"))
        tokens = (path / f"clip_{i:05d}.tokens").read_text().split()
        captions.append([int(t) for t in tokens])
    return Dataset(videos=videos, captions=captions, specs=[None] * len(videos))


# ---------------------------------------------------------------------------
# train

def _cmd_train(args) -> int:
    out = _out_dir(args)
    kv = _parse_kv_config(args.config) if args.config else {}
    cfg = TrainConfig(
        p=_resolve(args.p, kv, "p", float, 0.1),
        n_c_min=_resolve(args.n_c_min, kv, "n_c_min", int, 1),
        n_c_max=_resolve(args.n_c_max, kv, "n_c_max", int, 4),
        n_g=_resolve(args.n_g, kv, "n_g", int, 8),
        steps=_resolve(args.steps, kv, "steps", int, 5000),
        lr=_resolve(args.lr, kv, "lr", float, 2e-3),
        batch=_resolve(args.batch, kv, "batch", int, 1),
        seed=_resolve(args.seed if args.seed != 0 else None, kv, "seed", int, 0),
    )
    sampler_defaults = {
        "cfg_scale": _resolve(None, kv, "cfg_scale", float, 7.5),
        "resample_scale": _resolve(None, kv, "resample_scale", float, 0.7),
    }
    dataset = load_dataset_dir(args.data)
    sched = make_linear_schedule()
    model_cfg = ModelConfig(seed=Rng(cfg.seed).child("model").seed,
                            temporal_enabled=not args.disable_temporal)
    model = Model(model_cfg)
    if args.pretrain_steps > 0:
        pre_cfg = PretrainConfig(steps=args.pretrain_steps,
                                 seed=Rng(cfg.seed).child("pretrain").seed)
        if model_cfg.temporal_enabled:
            # pretrain the per-frame twin, then inherit its backbone
            twin = Model(ModelConfig(seed=model_cfg.seed, temporal_enabled=False))
            pretrain_backbone(twin, dataset, pre_cfg, sched)
            adopt_backbone(model, twin)
        else:
            pretrain_backbone(model, dataset, pre_cfg, sched)
    train(model, dataset, cfg, sched, out_dir=out, log_every=args.log_every)
    ckpt = checkpoint_hash(out / "checkpoint")
    config = {**cfg.__dict__, **sampler_defaults,
              "disable_temporal": args.disable_temporal,
              "pretrain_steps": args.pretrain_steps, "data": str(args.data)}
    _write_manifest(out, "train", config, cfg.seed,
                    ["checkpoint", "loss.csv", "loss.png"], ckpt)
    print(f"trained {cfg.steps} steps; checkpoint {ckpt[:12]} in {out}")
    return 0


# ---------------------------------------------------------------------------
# sample / drift-probe condition plumbing

def _load_condition(args, model: Model) -> ConditionBundle:
    frames = None
    n_c = 0
    if args.condition:
        pixels = read_fft1(args.condition)
        n_c = args.condition_frames
        if pixels.shape[0] < n_c:
            raise ConfigError(
                f"condition clip has {pixels.shape[0]} frames, need {n_c}"
            )
        frames = model.codec.encode(pixels[:n_c])
    text = [int(t) for t in args.caption.split()] if args.caption else None
    if frames is None and text is None:
        return ConditionBundle(frames=None, text=None, n_c=0, is_null=True)
    return ConditionBundle(frames=frames, text=text, n_c=n_c)


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        steps=args.steps,
        s=args.cfg_scale,
        r=args.resample_scale,
        m=args.rounds,
        f=args.frames_per_round,
        n_o=args.overlap,
        init_overlap_noise=args.init_overlap_noise,
        resample_per_step=args.resample_per_step,
        seed=args.seed,
    )


def _cmd_sample(args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    cfg = _sampler_config(args)
    cond = _load_condition(args, model)
    sched = make_linear_schedule()
    stitched, _ = multi_round(model, cond, cfg, sched)
    pixels = model.codec.decode(stitched)
    artifacts = ["latent.fft1"]
    write_fft1(out / "latent.fft1", stitched)
    for i, frame in enumerate(pixels):
        name = f"frame_{i:05d}.ppm"
        write_ppm(out / name, frame)
        artifacts.append(name)
    config = {
        **cfg.__dict__,
        "caption": args.caption,
        "condition": str(args.condition) if args.condition else None,
        "condition_frames": args.condition_frames,
        "total_frames": total_frames(cfg),
        "naive_frames": cfg.m * cfg.f,
    }
    _write_manifest(out, "sample", config, args.seed, artifacts,
                    checkpoint_hash(args.checkpoint))
    print(f"sampled {total_frames(cfg)} frames "
          f"({cfg.m} rounds x {cfg.f}, overlap {cfg.n_o}) into {out}")
    return 0


def _cmd_drift_probe(args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    cfg = _sampler_config(args)
    cond = _load_condition(args, model)
    sched = make_linear_schedule()
    r_values = [float(x) for x in args.r_values.split(",")]
    rows = drift_probe(model, cond, cfg, r_values, sched)
    with open(out / "drift.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "r", "latent_std", "mean_intensity"])
        for row in rows:
            writer.writerow([row["round"], row["r"],
                             f"{row['latent_std']:.6f}", f"{row['mean_intensity']:.6f}"])
    from .plots import render_drift_figure
    render_drift_figure(rows, out / "drift.png")
    config = {**cfg.__dict__, "r_values": r_values, "caption": args.caption,
              "condition": str(args.condition) if args.condition else None}
    _write_manifest(out, "drift-probe", config, args.seed,
                    ["drift.csv", "drift.png"], checkpoint_hash(args.checkpoint))
    print(f"probed {len(r_values)} resampling scales over {cfg.m} rounds; see {out}")
    return 0


# ---------------------------------------------------------------------------
# analyze-schedule / oracle-check / evaluate

def _cmd_analyze_schedule(args) -> int:
    out = _out_dir(args)
    sched = make_linear_schedule(args.timesteps, args.beta_start, args.beta_end)
    if args.rescale_zero_terminal:
        sched = rescale_zero_terminal_snr(sched)
    report = snr_report(sched)
    with open(out / "schedule.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "beta", "alpha_bar", "snr"])
        for row in report["rows"]:
            writer.writerow([row["t"], f"{row['beta']:.10g}",
                             f"{row['alpha_bar']:.10g}", f"{row['snr']:.10g}"])
    summary = {"terminal_snr": report["terminal_snr"], "flagged": report["flagged"]}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    from .plots import render_schedule_figure
    render_schedule_figure(report, out / "schedule.png")
    config = {"timesteps": args.timesteps, "beta_start": args.beta_start,
              "beta_end": args.beta_end, "rescale_zero_terminal": args.rescale_zero_terminal}
    _write_manifest(out, "analyze-schedule", config, 0,
                    ["schedule.csv", "summary.json", "schedule.png"])
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_oracle_check(args) -> int:
    sched = make_linear_schedule()
    world = GaussianWorld(mu=np.full(args.dim, args.mu),
                          sigma2=np.full(args.dim, args.sigma2))
    rng = Rng(args.seed).child("oracle")
    report = oracle_sample_check(world, sched, args.steps, args.samples, rng)
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out_dir:
        out = _out_dir(args)
        (out / "oracle.json").write_text(text + "\n")
        config = {"mu": args.mu, "sigma2": args.sigma2, "dim": args.dim,
                  "steps": args.steps, "samples": args.samples}
        _write_manifest(out, "oracle-check", config, args.seed, ["oracle.json"])
    return 0


def _load_video(args) -> np.ndarray:
    if args.video:
        return read_fft1(args.video)
    frames = sorted(Path(args.frames_dir).glob("*.ppm"))
    if not frames:
        raise ConfigError(f"no .ppm frames under {args.frames_dir}")
    return np.stack([read_ppm(p) for p in frames])


def _cmd_evaluate(args) -> int:
    if not args.video and not args.frames_dir:
        raise UsageError("evaluate needs --video or --frames-dir")
    video = _load_video(args)
    result: dict = {"consistency_lite": consistency_score(video)}
    if args.ref:
        ref = read_fft1(args.ref)
        n = min(len(video), len(ref))
        result["psnr_vs_ref"] = float(np.mean(
            [psnr(video[i], ref[i], peak=1.0) for i in range(n)]
        ))
        result["ssim_vs_ref"] = float(np.mean(
            [ssim(video[i], ref[i], peak=1.0) for i in range(n)]
        ))
    if args.fvd_a and args.fvd_b:
        ex = default_extractor()
        fa = np.stack([ex.video_features(read_fft1(p))
                       for p in sorted(Path(args.fvd_a).glob("*.fft1"))])
        fb = np.stack([ex.video_features(read_fft1(p))
                       for p in sorted(Path(args.fvd_b).glob("*.fft1"))])
        fd = frechet_lite_detailed(fa, fb)
        result["fvd_lite"] = fd.value
        result["fvd_lite_regularized"] = fd.regularized
    text = json.dumps(result, sort_keys=True)
    print(text)
    if args.out_dir:
        out = _out_dir(args)
        (out / "metrics.json").write_text(text + "\n")
        _write_manifest(out, "evaluate",
                        {"video": str(args.video or args.frames_dir),
                         "ref": str(args.ref) if args.ref else None},
                        0, ["metrics.json"])
    return 0


# ---------------------------------------------------------------------------
# parser wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="longvid",
                     description="Desk-scale latent video diffusion lab")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("gen-data", parents=[], help="generate synthetic clips")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-clips", type=int, default=100)
    p.add_argument("--clip-length", type=int, default=24)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="co-train the temporal groups")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=float)
    p.add_argument("--n-c-min", type=int)
    p.add_argument("--n-c-max", type=int)
    p.add_argument("--n-g", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--disable-temporal", action="store_true",
                   help="ablation: build the model without frame-axis blocks")
    p.add_argument("--pretrain-steps", type=int, default=0,
                   help="per-frame backbone pretraining steps before co-training")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    def add_sampling_args(p, with_r=True):
        p.add_argument("--out-dir", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--rounds", type=int, default=1)
        p.add_argument("--frames-per-round", type=int, default=16)
        p.add_argument("--overlap", type=int, default=4)
        p.add_argument("--steps", type=int, default=50)
        p.add_argument("--cfg-scale", type=float, default=7.5)
        if with_r:
            p.add_argument("--resample-scale", type=float, default=0.7)
        p.add_argument("--init-overlap-noise", action=argparse.BooleanOptionalAction,
                       default=True)
        p.add_argument("--resample-per-step", action=argparse.BooleanOptionalAction,
                       default=True)
        p.add_argument("--condition", help="FFT1 pixel clip to condition on")
        p.add_argument("--condition-frames", type=int, default=1)
        p.add_argument("--caption", help="space-separated caption token ids")

    p = sub.add_parser("sample", help="multi-round guided DDIM sampling")
    add_sampling_args(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("drift-probe", help="per-round drift across resampling scales")
    add_sampling_args(p, with_r=False)
    p.add_argument("--r-values", default="0,0.7",
                   help="comma-separated resampling scales")
    p.set_defaults(func=_cmd_drift_probe, resample_scale=0.0)

    p = sub.add_parser("analyze-schedule", help="SNR diagnostics for a schedule")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--timesteps", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--rescale-zero-terminal", action="store_true")
    p.set_defaults(func=_cmd_analyze_schedule)

    p = sub.add_parser("oracle-check", help="closed-form sampler verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("evaluate", help="consistency / PSNR / SSIM / fvd-lite")
    p.add_argument("--video", help="FFT1 pixel video")
    p.add_argument("--frames-dir", help="directory of PPM frames")
    p.add_argument("--ref", help="FFT1 reference video for PSNR/SSIM")
    p.add_argument("--fvd-a", help="directory of FFT1 videos (set A)")
    p.add_argument("--fvd-b", help="directory of FFT1 videos (set B)")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if not getattr(args, "subcommand", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
