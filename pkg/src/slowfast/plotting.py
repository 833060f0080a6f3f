"""PNG figures for CLI reports (residual histories, sampled maps, sweeps)."""
from __future__ import annotations

import os
from typing import Any, Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 120,
    "axes.linewidth": 0.6,
    "axes.grid": True,
    "grid.linewidth": 0.3,
    "grid.alpha": 0.5,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}
METADATA = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=METADATA)
    plt.close(fig)
    return path


def residual_figure(results: Dict[str, Any], path: str) -> str:
    """Semilog plot of every residual history present in ``results``."""
    series = [
        ("manifold", "residual_history", r"$E_\eta$", "o-"),
        ("fibers", "residual_history", r"$E_\phi$", "s-"),
        ("fibers", "mu_history", r"$\|\mu_n\|$", "v--"),
        ("curvature", "Q_history", r"$\|Q_n\|$", "d-"),
    ]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for sec, key, label, fmt in series:
            vals = (results.get(sec) or {}).get(key)
            if not vals:
                continue
            y = np.array([np.nan if v is None else v for v in vals], dtype=float)
            y[y <= 0] = np.nan
            ax.semilogy(np.arange(len(y)), y, fmt, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("sup-norm")
        ax.legend()
        return _save(fig, path)


def samples_figure(samples: Dict[str, Any], path: str) -> str:
    """Sampled graph and maps against the slow coordinate (first components)."""
    x = np.asarray(samples["x"], dtype=float)
    x = x[:, 0] if x.ndim > 1 else x
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key, label in (("eta", r"$\eta$"), ("phi", r"$\phi$"), ("psi", r"$\psi$")):
            if samples.get(key) is None:
                continue
            v = np.asarray(samples[key], dtype=float).reshape(len(x), -1)[:, 0]
            ax.plot(x, v, label=label)
        ax.set_xlabel("x")
        ax.legend()
        return _save(fig, path)


def sweep_figure(comparison: Dict[str, Any], path: str) -> str:
    """Log-log distances with the fitted slopes in the legend."""
    s = np.asarray(comparison["values"], dtype=float)
    marks = {"naive": "o", "linear": "s", "quadratic": "^"}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, ups in comparison["upsilon"].items():
            if ups is None:
                continue
            fit = comparison.get("fits", {}).get(name)
            label = name if not fit else f"{name} (slope {fit['slope']:.3f})"
            ax.loglog(s, np.asarray(ups, dtype=float), marks.get(name, "x") + "-", label=label)
        ax.set_xlabel(comparison["sweep"])
        ax.set_ylabel(r"$\upsilon$ at $t=1/\epsilon$")
        ax.legend()
        return _save(fig, path)


def write_figures(results: Dict[str, Any], plot_dir: str, stem: str) -> List[str]:
    """Render whatever figures the results support; returns the written paths."""
    os.makedirs(plot_dir, exist_ok=True)
    out = []
    if any(k in results for k in ("manifold", "fibers", "curvature")):
        out.append(residual_figure(results, os.path.join(plot_dir, f"{stem}_residuals.png")))
    if results.get("samples"):
        out.append(samples_figure(results["samples"], os.path.join(plot_dir, f"{stem}_samples.png")))
    if results.get("comparison"):
        out.append(sweep_figure(results["comparison"], os.path.join(plot_dir, f"{stem}_sweep.png")))
    return out
