"""Figures for the CLI reports, rendered to PNG files with the Agg backend."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    _pyplot().close(fig)
    return path


def line_plot(path, series, xlabel: str, ylabel: str, title: str = "", logx=False, logy=False,
              hlines=()):
    """series: iterable of (label, x, y[, style])."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for item in series:
        label, x, y, *style = item
        ax.plot(x, y, style[0] if style else "-", label=label, lw=1.2, ms=3)
    for y0, lab in hlines:
        ax.axhline(y0, color="k", ls="--", lw=0.8, label=lab)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if any(item[0] for item in series) or hlines:
        ax.legend(fontsize=8)
    return _save(fig, path)


def histogram(path, values, xlabel: str, bound: float | None = None, title: str = "", bins=40):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.asarray(values, dtype=float), bins=bins, color="0.6", edgecolor="k", lw=0.5)
    if bound is not None:
        ax.axvline(bound, color="r", ls="--", lw=1, label=f"bound {bound:.3g}")
        ax.legend(fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("trials")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def density_comparison(path, centers, empirical, stderr, predicted, title: str = ""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(centers, empirical, yerr=stderr, fmt="o", ms=3, capsize=2, label="empirical")
    ax.step(centers, predicted, where="mid", color="r", label="kernel (bin average)")
    ax.set_xlabel("rescaled energy x")
    ax.set_ylabel("intensity per unit x")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def trajectories(path, curves, title: str = ""):
    """curves: iterable of complex arrays z(t)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for z in curves:
        z = np.asarray(z)
        ax.plot(z.real, z.imag, "-", lw=0.8)
        ax.plot(z.real[:1], z.imag[:1], "k.", ms=3)
    ax.set_xlabel("Re z")
    ax.set_ylabel("Im z")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    return _save(fig, path)
