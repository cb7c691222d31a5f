"""Figure rendering for the report path.

Figures are built on bare :class:`matplotlib.figure.Figure` objects, so no
pyplot state or interactive backend is involved.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps
from matplotlib.figure import Figure

from .core import AmplitudeState, FieldState

_META = {"Software": None}


def _pick(n: int, limit: int) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, limit)).astype(int))


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_META)
    return path


def plot_fields(fields: FieldState, path, amps: AmplitudeState | None = None,
                title: str | None = None, max_curves: int = 8) -> Path:
    """Envelopes, mixing angle and (optionally) end-state populations per z slice."""
    n_panels = 4 if amps is not None else 3
    fig = Figure(figsize=(4.0 * n_panels, 3.4), layout="constrained")
    axes = fig.subplots(1, n_panels)
    z = np.atleast_1d(fields.z)
    idx = _pick(z.size, max_curves)
    cmap = colormaps["viridis"]
    colors = [cmap(v) for v in np.linspace(0.0, 0.9, idx.size)]
    theta = fields.theta
    for c, k in zip(colors, idx):
        label = f"z={z[k]:.3g}"
        axes[0].plot(fields.tau, fields.omega_p[k], color=c, lw=1.2, label=label)
        axes[1].plot(fields.tau, fields.omega_s[k], color=c, lw=1.2)
        axes[2].plot(fields.tau, theta[k], color=c, lw=1.2)
        if amps is not None:
            pops = amps.populations
            axes[3].plot(fields.tau, np.broadcast_to(pops[0], theta.shape)[k], color=c, lw=1.2)
            axes[3].plot(fields.tau, np.broadcast_to(pops[2], theta.shape)[k], color=c, lw=1.2, ls="--")
    axes[0].set_ylabel(r"$\Omega_p T$")
    axes[1].set_ylabel(r"$\Omega_s T$")
    axes[2].set_ylabel(r"$\theta$")
    axes[2].axhline(np.pi / 2, color="0.6", lw=0.8, ls=":")
    if amps is not None:
        axes[3].set_ylabel(r"$|b_1|^2$ (solid), $|b_3|^2$ (dashed)")
        axes[3].set_ylim(-0.02, 1.02)
    for ax in axes:
        ax.set_xlabel(r"$\tau / T$")
    axes[0].legend(fontsize=7, frameon=False)
    if title:
        fig.suptitle(title, fontsize=10)
    return _save(fig, path)


def plot_efficiency(curve, path, title: str | None = None, z_stirap: float | None = None) -> Path:
    fig = Figure(figsize=(4.5, 3.4), layout="constrained")
    ax = fig.subplots()
    zs = [z for z, e in curve if e is not None]
    es = [e for _, e in curve if e is not None]
    ax.plot(zs, es, "o-", ms=3)
    folded = [z for z, e in curve if e is None]
    if folded:
        ax.plot(folded, np.zeros(len(folded)), "x", color="tab:red", label="fold")
        ax.legend(frameon=False, fontsize=8)
    if z_stirap is not None:
        ax.axvline(z_stirap, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("z")
    ax.set_ylabel("final-state population")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)


def plot_errors(rows: list[dict], path, tolerance: float | None = None,
                quantities=("omega_p", "omega_s")) -> Path:
    fig = Figure(figsize=(4.5, 3.4), layout="constrained")
    ax = fig.subplots()
    z = [r["z"] for r in rows]
    for q in quantities:
        ax.plot(z, [r[f"l2_{q}"] for r in rows], "o-", ms=3, label=q)
    if tolerance is not None:
        ax.axhline(tolerance, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("z")
    ax.set_ylabel("relative L2 error")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_sweep(rows: list[dict], path) -> Path:
    fig = Figure(figsize=(4.5, 3.4), layout="constrained")
    ax = fig.subplots()
    for key, marker in (("z_break", "o"), ("z_pump_measured", "s"), ("z_stirap_est", "^")):
        pts = [(r["q_ratio"], r[key]) for r in rows if r.get(key) is not None and r.get("q_ratio") is not None]
        if pts:
            q, v = zip(*pts)
            ax.plot(q, v, marker, ls="none", label=key)
    ax.set_xscale("log")
    ax.set_xlabel("q")
    ax.set_ylabel("z")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
