"""Static figures written straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .covering import ExtractionTrace  # noqa: E402
from .wbcp import BesicovitchCertificate  # noqa: E402

_META = {"Software": None}


def _save(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_margins(series: dict[str, Sequence[tuple[int, float]]], path: str | Path) -> Path:
    """Best margin against family size, one line per metric."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(series):
        pts = sorted(series[label])
        ks = [k for k, m in pts if m > 0]
        ms = [m for k, m in pts if m > 0]
        if ks:
            ax.semilogy(ks, ms, marker="o", label=label)
    ax.set_xlabel("family size k")
    ax.set_ylabel("validation margin")
    if series:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_certificate(cert: BesicovitchCertificate, path: str | Path) -> Path:
    """Centers and witness projected on the first two coordinates."""
    cfg = cert.config
    c = cfg.centers if cfg.spec.dim >= 2 else np.column_stack([cfg.centers[:, 0], np.zeros(cfg.k)])
    w = cfg.witness if cfg.spec.dim >= 2 else np.array([cfg.witness[0], 0.0])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(c[:, 0], c[:, 1], c=np.arange(cfg.k), cmap="viridis", zorder=3)
    ax.scatter([w[0]], [w[1]], marker="x", color="red", zorder=4, label="witness")
    for i, p in enumerate(c):
        ax.annotate(str(i), p[:2], textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"{cfg.spec.label()}  k={cfg.k}  margin={cert.margin:.3g}", fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_extraction(trace: ExtractionTrace, path: str | Path) -> Path:
    """Residual mass per round against the geometric decay bound."""
    m = np.arange(len(trace.rounds) + 1)
    resid = [trace.initial_mass] + [r.residual for r in trace.rounds]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(m, resid, marker="o", label="residual")
    ax.plot(m, trace.initial_mass * trace.u**m, ls="--", label=f"u^m bound, u={trace.u:.4g}")
    ax.set_xlabel("round")
    ax.set_ylabel("residual mass")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_weak11(ratios: Sequence[float], bounds: Sequence[float], path: str | Path) -> Path:
    """Weak-type ratio per test function next to its measured multiplicity."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(ratios))
    ax.plot(x, ratios, "o", ms=3, label="sup ratio")
    ax.step(x, bounds, where="mid", color="gray", label="multiplicity N")
    ax.set_xlabel("test function")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
