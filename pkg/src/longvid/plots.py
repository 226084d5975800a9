"""Figure rendering for the report-producing subcommands.

Every CSV a subcommand writes gets a PNG rendered next to it. Headless
backend; nothing here touches a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def render_schedule_figure(report: dict, path: Path | str) -> None:
    """alpha_bar and SNR curves with the terminal-SNR callout."""
    rows = report["rows"]
    t = [r["t"] for r in rows]
    ab = [r["alpha_bar"] for r in rows]
    snr = [max(r["snr"], 1e-12) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(t, ab, lw=1.2)
    ax1.set_xlabel("t")
    ax1.set_ylabel("alpha_bar")
    ax1.set_title("cumulative signal fraction")
    ax2.semilogy(t, snr, lw=1.2)
    ax2.set_xlabel("t")
    ax2.set_ylabel("SNR")
    flag = "terminal SNR = %.3g%s" % (
        report["terminal_snr"], " (non-zero!)" if report["flagged"] else ""
    )
    ax2.set_title(flag)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_loss_figure(history: list[tuple[int, float, str]], path: Path | str,
                       window: int = 100) -> None:
    """Raw and running-mean training loss."""
    steps = [h[0] for h in history]
    loss = [h[1] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(steps, loss, lw=0.5, alpha=0.4, label="loss")
    if len(loss) > 1:
        run = [float(np.mean(loss[max(0, i - window + 1):i + 1])) for i in range(len(loss))]
        ax.plot(steps, run, lw=1.4, label=f"running mean ({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("eps MSE")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_drift_figure(rows: list[dict], path: Path | str) -> None:
    """Per-round latent std and decoded mean intensity, one line per r."""
    r_values = sorted({row["r"] for row in rows})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for r in r_values:
        sel = [row for row in rows if row["r"] == r]
        k = [row["round"] for row in sel]
        ax1.plot(k, [row["latent_std"] for row in sel], marker="o", ms=3, label=f"r={r:g}")
        ax2.plot(k, [row["mean_intensity"] for row in sel], marker="o", ms=3, label=f"r={r:g}")
    ax1.set_xlabel("round")
    ax1.set_ylabel("latent std")
    ax2.set_xlabel("round")
    ax2.set_ylabel("decoded mean intensity")
    ax1.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
