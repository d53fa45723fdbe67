#!/usr/bin/env python3
"""Render the CSV outputs of a run directory as PNG figures.

Usage: plot_run.py RUN_DIR [RUN_DIR ...] [--out DIR]

Each run directory is expected to hold the files eval/summarize write
(summary.csv, phase_stiffness.csv, rewards.csv). Figures land next to the
data unless --out is given; multiple run directories are overlaid on the
timeseries panels for side-by-side comparison.
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

AXIS_NAMES = ["x", "y", "z"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_summary(runs, out_dir):
    fig, (ax_err, ax_k) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for label, rows in runs:
        t = [float(r["t"]) for r in rows]
        err = [1e3 * float(r["pos_err_mean"]) for r in rows]
        err_lo = [1e3 * float(r["pos_err_lo"]) for r in rows]
        err_hi = [1e3 * float(r["pos_err_hi"]) for r in rows]
        lam = [float(r["lambda_mean"]) for r in rows]
        lam_lo = [float(r["lambda_lo"]) for r in rows]
        lam_hi = [float(r["lambda_hi"]) for r in rows]
        (line,) = ax_err.plot(t, err, label=label)
        ax_err.fill_between(t, err_lo, err_hi, alpha=0.25, color=line.get_color())
        ax_k.plot(t, lam, color=line.get_color())
        ax_k.fill_between(t, lam_lo, lam_hi, alpha=0.25, color=line.get_color())
    ax_err.set_ylabel("position error [mm]")
    ax_err.legend(loc="upper right", fontsize=8)
    ax_k.set_ylabel("mean stiffness [N/m]")
    ax_k.set_xlabel("time [s]")
    fig.tight_layout()
    path = out_dir / "summary.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_phases(rows, out_dir):
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.25
    for ai, axis in enumerate(AXIS_NAMES):
        sub = [r for r in rows if r["axis"] == axis]
        sub.sort(key=lambda r: int(r["phase"]))
        phases = [int(r["phase"]) for r in sub]
        means = [float(r["k_mean"]) for r in sub]
        lo = [float(r["k_mean"]) - float(r["k_min"]) for r in sub]
        hi = [float(r["k_max"]) - float(r["k_mean"]) for r in sub]
        pos = [p + (ai - 1) * width for p in phases]
        ax.bar(pos, means, width, yerr=[lo, hi], capsize=3, label=f"K_{axis}")
    ax.set_xticks([1, 2, 3, 4])
    ax.set_xlabel("episode quarter")
    ax.set_ylabel("stiffness [N/m]")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "phase_stiffness.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_rewards(rows, out_dir):
    fig, ax = plt.subplots(figsize=(7, 4))
    trials = [int(r["trial"]) for r in rows]
    normalized = "reward_normalized" in rows[0]
    key = "reward_normalized" if normalized else "reward"
    ax.bar(trials, [float(r[key]) for r in rows], color="tab:blue")
    ax.set_xlabel("trial")
    ax.set_ylabel("reward / |baseline|" if normalized else "reward")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    path = out_dir / "rewards.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dirs", nargs="+", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    out_dir = args.out if args.out is not None else args.run_dirs[0]
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    summaries = []
    for d in args.run_dirs:
        f = d / "summary.csv"
        if f.exists():
            summaries.append((d.name, read_csv(f)))
    if summaries:
        written.append(plot_summary(summaries, out_dir))

    first = args.run_dirs[0]
    if (first / "phase_stiffness.csv").exists():
        written.append(plot_phases(read_csv(first / "phase_stiffness.csv"), out_dir))
    if (first / "rewards.csv").exists():
        rows = read_csv(first / "rewards.csv")
        if rows:
            written.append(plot_rewards(rows, out_dir))

    if not written:
        print("no plottable CSVs found", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
