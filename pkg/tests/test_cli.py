"""Command-line surface: exit codes, determinism, the full pipeline end to end."""

import json

import numpy as np
import pytest

from longvid.cli import dispatch, load_dataset_dir
from longvid.numcore import read_fft1


def run(capsys, *argv):
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_no_arguments_is_usage_error(capsys):
    code, out, err = run(capsys)
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_missing_required_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "gen-data")
    assert code == 1


def test_runtime_failure_maps_to_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "sample", "--out-dir", str(tmp_path / "o"),
                       "--checkpoint", str(tmp_path / "missing"))
    assert code == 2
    assert "error" in err.lower()


def test_help_available_everywhere(capsys):
    for sub in ("gen-data", "train", "sample", "drift-probe",
                "analyze-schedule", "oracle-check", "evaluate"):
        with pytest.raises(SystemExit) as exc:
            dispatch([sub, "--help"])
        assert exc.value.code == 0
        assert sub in capsys.readouterr().out


def test_oracle_check_deterministic(capsys):
    args = ["oracle-check", "--seed", "7", "--samples", "2000", "--steps", "25"]
    code1, out1, _ = run(capsys, *args)
    code2, out2, _ = run(capsys, *args)
    assert code1 == code2 == 0
    assert out1 == out2
    report = json.loads(out1)
    assert report["steps"] == 25 and report["n"] == 2000


def test_analyze_schedule_outputs(tmp_path, capsys):
    out = tmp_path / "an"
    code, stdout, _ = run(capsys, "analyze-schedule", "--out-dir", str(out))
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flagged"] is True
    header = (out / "schedule.csv").read_text().splitlines()
    assert header[0] == "t,beta,alpha_bar,snr"
    assert len(header) == 1001
    assert (out / "schedule.png").stat().st_size > 0
    assert json.loads((out / "manifest.json").read_text())["subcommand"] == "analyze-schedule"

    out2 = tmp_path / "an0"
    run(capsys, "analyze-schedule", "--out-dir", str(out2), "--rescale-zero-terminal")
    summary2 = json.loads((out2 / "summary.json").read_text())
    assert summary2["flagged"] is False
    assert summary2["terminal_snr"] == 0.0


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """gen-data -> train (tiny) once for the CLI end-to-end tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    trained = root / "trained"
    assert dispatch(["gen-data", "--out-dir", str(data), "--seed", "3",
                     "--num-clips", "10", "--clip-length", "12"]) == 0
    assert dispatch(["train", "--out-dir", str(trained), "--data", str(data),
                     "--steps", "4", "--n-g", "4", "--n-c-max", "2",
                     "--seed", "5"]) == 0
    return data, trained


def test_gen_data_artifacts(pipeline_dirs):
    data, _ = pipeline_dirs
    info = json.loads((data / "dataset.json").read_text())
    assert info["num_clips"] == 10
    assert len(info["train_indices"]) == 9
    clip = read_fft1(data / "clip_00000.fft1")
    assert clip.shape == (12, 3, 32, 32)
    ds = load_dataset_dir(data)
    assert len(ds) == 10 and len(ds.captions[0]) == 4


def test_train_artifacts(pipeline_dirs):
    _, trained = pipeline_dirs
    assert (trained / "checkpoint" / "manifest.json").exists()
    lines = (trained / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,branch" and len(lines) == 5
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["checkpoint_hash"]
    assert manifest["config"]["steps"] == 4


def test_sample_frame_count_law_in_manifest(pipeline_dirs, tmp_path, capsys):
    data, trained = pipeline_dirs
    out = tmp_path / "samp"
    code, stdout, err = run(
        capsys, "sample", "--out-dir", str(out),
        "--checkpoint", str(trained / "checkpoint"),
        "--rounds", "3", "--frames-per-round", "16", "--overlap", "4",
        "--steps", "2", "--seed", "11",
        "--condition", str(data / "clip_00001.fft1"), "--condition-frames", "2",
        "--caption", "0 5 10 19",
    )
    assert code == 0, err
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["total_frames"] == 40
    assert manifest["config"]["naive_frames"] == 48
    frames = sorted(out.glob("frame_*.ppm"))
    assert len(frames) == 40
    assert read_fft1(out / "latent.fft1").shape == (40, 12, 16, 16)


def test_sample_deterministic_rerun(pipeline_dirs, tmp_path, capsys):
    _, trained = pipeline_dirs
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, err = run(capsys, "sample", "--out-dir", str(out),
                           "--checkpoint", str(trained / "checkpoint"),
                           "--rounds", "1", "--frames-per-round", "4",
                           "--overlap", "1", "--steps", "2", "--seed", "21")
        assert code == 0, err
        outs.append(out)
    a = (outs[0] / "latent.fft1").read_bytes()
    b = (outs[1] / "latent.fft1").read_bytes()
    assert a == b
    ma = json.loads((outs[0] / "manifest.json").read_text())
    mb = json.loads((outs[1] / "manifest.json").read_text())
    assert ma == mb


def test_drift_probe_csv(pipeline_dirs, tmp_path, capsys):
    _, trained = pipeline_dirs
    out = tmp_path / "drift"
    code, _, err = run(capsys, "drift-probe", "--out-dir", str(out),
                       "--checkpoint", str(trained / "checkpoint"),
                       "--rounds", "2", "--frames-per-round", "4",
                       "--overlap", "1", "--steps", "2", "--seed", "13",
                       "--r-values", "0,0.7")
    assert code == 0, err
    lines = (out / "drift.csv").read_text().splitlines()
    assert lines[0] == "round,r,latent_std,mean_intensity"
    assert len(lines) == 5  # 2 rounds x 2 r values
    assert (out / "drift.png").stat().st_size > 0


def test_evaluate_on_sampled_frames(pipeline_dirs, tmp_path, capsys):
    data, trained = pipeline_dirs
    out = tmp_path / "ev"
    code, _, err = run(capsys, "sample", "--out-dir", str(out),
                       "--checkpoint", str(trained / "checkpoint"),
                       "--rounds", "1", "--frames-per-round", "4",
                       "--overlap", "1", "--steps", "2", "--seed", "31")
    assert code == 0, err
    code, stdout, err = run(capsys, "evaluate", "--frames-dir", str(out),
                            "--ref", str(data / "clip_00000.fft1"))
    assert code == 0, err
    metrics = json.loads(stdout)
    assert -1.0 <= metrics["consistency_lite"] <= 1.0
    assert "psnr_vs_ref" in metrics and "ssim_vs_ref" in metrics


def test_evaluate_fvd_between_clip_sets(pipeline_dirs, tmp_path, capsys):
    data, _ = pipeline_dirs
    # two overlapping subsets of the clips: small but valid feature sets
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir()
    b_dir.mkdir()
    for i in range(10):
        src = (data / f"clip_{i:05d}.fft1").read_bytes()
        for d, sel in ((a_dir, range(0, 40)), (b_dir, range(0, 40))):
            pass
    # fvd-lite needs dim+1=33 videos per set; synthesize by slicing clips
    rngs = np.random.default_rng(5)
    for k in range(34):
        i = k % 10
        clip = read_fft1(data / f"clip_{i:05d}.fft1")
        lo = int(rngs.integers(0, 4))
        from longvid.numcore import write_fft1
        write_fft1(a_dir / f"v{k:03d}.fft1", clip[lo:lo + 8])
        write_fft1(b_dir / f"v{k:03d}.fft1", clip[lo + 1:lo + 9])
    code, stdout, err = run(capsys, "evaluate", "--video",
                            str(a_dir / "v000.fft1"),
                            "--fvd-a", str(a_dir), "--fvd-b", str(b_dir))
    assert code == 0, err
    metrics = json.loads(stdout)
    assert metrics["fvd_lite"] >= 0.0
    assert "fvd_lite_regularized" in metrics


def test_evaluate_requires_input(capsys):
    code, _, err = run(capsys, "evaluate")
    assert code == 1


def test_train_config_file_with_flag_override(pipeline_dirs, tmp_path, capsys):
    data, _ = pipeline_dirs
    cfgfile = tmp_path / "train.cfg"
    cfgfile.write_text(
        "# toy sweep config\n"
        "p=0.2\n"
        "steps=6\n"
        "n_g=4\n"
        "n_c_max=2\n"
        "lr=0.001\n"
        "seed=9\n"
        "cfg_scale=3.5\n"
        "resample_scale=0.5\n"
    )
    out = tmp_path / "tr"
    code, _, err = run(capsys, "train", "--out-dir", str(out),
                       "--data", str(data), "--config", str(cfgfile),
                       "--steps", "2")  # flag wins over config
    assert code == 0, err
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["steps"] == 2
    assert manifest["config"]["p"] == 0.2
    assert manifest["config"]["lr"] == 0.001
    assert manifest["config"]["cfg_scale"] == 3.5
    assert len((out / "loss.csv").read_text().splitlines()) == 3
