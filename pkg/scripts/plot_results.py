#!/usr/bin/env python3
"""
Plot lab outputs.

Renders whichever of these CSVs exist in the given directory:
  sweep.csv                   control rate vs horizon for each plan
  budget_sweep.csv            dFD initiation interval and control rate vs DSP budget
  trajectory.csv              end-effector deviation of the quantized run over time
  controller_sensitivity.csv  worst trajectory error vs n_frac per controller

Usage:
    python scripts/plot_results.py out/iiwa_plan
"""

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def plot_horizon_sweep(frame, ax):
    for label, group in frame.groupby("plan"):
        ax.plot(group["horizon"], group["rate_hz"] / 1e3, marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("horizon (steps)")
    ax.set_ylabel("control rate (kHz)")
    ax.legend()


def plot_budget_sweep(frame, axes):
    for reuse, group in frame.groupby("reuse"):
        label = "reuse" if reuse else "independent"
        axes[0].plot(group["budget"], group["ii_dFD"], marker="o", label=label)
        if "control_rate_hz" in group:
            axes[1].plot(group["budget"], group["control_rate_hz"] / 1e3, marker="o", label=label)
    axes[0].set_ylabel("II (dFD, cycles)")
    axes[1].set_ylabel("control rate (kHz)")
    for ax in axes:
        ax.set_xlabel("DSP budget")
        ax.legend()


def plot_trajectory(frame, ax):
    real = frame[frame["run_id"] == "real"].set_index("step")
    quant = frame[frame["run_id"] == "quantized"].set_index("step")
    cols = ["ee_x", "ee_y", "ee_z"]
    deviation = np.linalg.norm(real[cols].to_numpy() - quant[cols].to_numpy(), axis=1)
    ax.plot(real["t"], deviation * 1e3)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("end-effector deviation (mm)")


def plot_sensitivity(frame, ax):
    for kind, group in frame.groupby("controller"):
        ax.semilogy(group["n_frac"], group["max_error"], marker="o", label=kind)
    ax.set_xlabel("fractional bits")
    ax.set_ylabel("max trajectory error (m)")
    ax.legend()


def main():
    parser = argparse.ArgumentParser(description="Plot sweep, trajectory and sensitivity CSVs")
    parser.add_argument("directory", help="Directory holding the CSV outputs")
    args = parser.parse_args()

    directory = Path(args.directory)
    written = []

    path = directory / "sweep.csv"
    if path.is_file():
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_horizon_sweep(pd.read_csv(path), ax)
        written.append(directory / "horizon_sweep.png")
        fig.savefig(written[-1], dpi=150, bbox_inches="tight")
        plt.close(fig)

    path = directory / "budget_sweep.csv"
    if path.is_file():
        fig, axes = plt.subplots(1, 2, figsize=(11, 4))
        plot_budget_sweep(pd.read_csv(path), axes)
        written.append(directory / "budget_sweep.png")
        fig.savefig(written[-1], dpi=150, bbox_inches="tight")
        plt.close(fig)

    path = directory / "trajectory.csv"
    if path.is_file():
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_trajectory(pd.read_csv(path), ax)
        written.append(directory / "trajectory_deviation.png")
        fig.savefig(written[-1], dpi=150, bbox_inches="tight")
        plt.close(fig)

    path = directory / "controller_sensitivity.csv"
    if path.is_file():
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_sensitivity(pd.read_csv(path), ax)
        written.append(directory / "controller_sensitivity.png")
        fig.savefig(written[-1], dpi=150, bbox_inches="tight")
        plt.close(fig)

    if not written:
        print(f"No known CSV outputs in {directory}")
        sys.exit(1)
    for path in written:
        print(f"Saved {path}")


if __name__ == "__main__":
    main()
