"""Matplotlib renderings of the report data, written straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import TIMING_BUCKET_SECONDS, TimingRecord


def save_error_series(series, path, title="planar error over time") -> None:
    t = [row[0] for row in series]
    e = [row[1] for row in series]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, e, lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("error [m]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trajectory_overlay(estimate, ground_truth, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    for name, traj, style in (
        ("reference", ground_truth, "k-"),
        ("estimate", estimate, "r--"),
    ):
        xy = np.array([p.translation[:2] for _t, p in traj])
        if xy.size:
            ax.plot(xy[:, 0], xy[:, 1], style, lw=1.0, label=name)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_timing_histogram(record: TimingRecord, path) -> None:
    n = record.counts.size
    lefts = np.arange(n) * TIMING_BUCKET_SECONDS * 1000.0
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.bar(lefts, record.counts, width=9.0, align="edge", color="tab:blue")
    ax.set_xlabel("per-scan time [ms] (last bar = overflow)")
    ax.set_ylabel("scans")
    if record.sample_count:
        p95 = record.percentile(95.0) * 1000.0
        ax.axvline(p95, color="tab:red", ls="--", lw=1.0, label=f"p95 = {p95:.1f} ms")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
