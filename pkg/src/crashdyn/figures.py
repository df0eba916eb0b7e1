"""Render the pipeline's figure set to PNG files.

Every figure sits next to the delimited data it visualizes: heatmaps of the
estimated potential and diffusion fields, the calibrated model surfaces, the
averaged index with its sinusoid fit, and the log-log exceedance counts with
their power-law fits.  Rendering is kept deterministic (fixed metadata, no
timestamps) so a rerun reproduces files byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import surfaces
from .kramers_moyal import CoefficientField
from .omori import OmoriEnsemble
from .simulate import IndexResult

_SAVE_OPTS = {"dpi": 150, "metadata": {"Software": "crashdyn"}}


def _save(fig, path):
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def _field_heatmap(ax, field: CoefficientField, values: np.ndarray, label: str):
    binning = field.binning
    masked = np.ma.masked_invalid(values.T)
    mesh = ax.pcolormesh(
        np.append(field.t_axis, field.t_axis[-1] + 1) - 0.5,
        binning.edges,
        masked,
        shading="flat",
        cmap="viridis",
    )
    ax.set_xlabel("trading day")
    ax.set_ylabel("log-return")
    return mesh, label


def save_field_figures(field: CoefficientField, potential_path, diffusion_path) -> None:
    """Heatmaps of the estimated potential and diffusion over (x, t)."""
    for values, label, path in (
        (field.potential, "estimated potential", potential_path),
        (field.diffusion, "estimated diffusion", diffusion_path),
    ):
        fig, ax = plt.subplots(figsize=(7, 4))
        mesh, label = _field_heatmap(ax, field, values, label)
        fig.colorbar(mesh, ax=ax, label=label)
        ax.set_title(label)
        fig.tight_layout()
        _save(fig, path)


def save_model_potential_figure(
    params: surfaces.PotentialParams, path, x_range=(-0.35, 0.35), t_range=(-5.0, 25.0)
) -> None:
    """Heatmap of the closed-form potential surface."""
    xs = np.linspace(x_range[0], x_range[1], 141)
    ts = np.linspace(t_range[0], t_range[1], 241)
    xx, tt = np.meshgrid(xs, ts, indexing="ij")
    values = surfaces.eval_potential(params, xx, tt)
    fig, ax = plt.subplots(figsize=(7, 4))
    mesh = ax.pcolormesh(ts, xs, values, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="model potential")
    ax.set_xlabel("trading day")
    ax.set_ylabel("log-return")
    ax.set_title("model potential surface")
    fig.tight_layout()
    _save(fig, path)


def save_model_diffusion_figure(
    params: surfaces.DiffusionParams, path, t_range=(-5.0, 25.0), t_floor=0.02
) -> None:
    """The diffusion shock-and-relaxation curve."""
    ts = np.linspace(t_range[0], t_range[1], 601)
    values = surfaces.eval_diffusion(params, ts, t_floor)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, values, lw=1.5)
    ax.set_xlabel("trading day")
    ax.set_ylabel("diffusion level")
    ax.set_yscale("log")
    ax.set_title("model diffusion")
    fig.tight_layout()
    _save(fig, path)


def save_index_figure(result: IndexResult, path) -> None:
    """Averaged index with the fitted decaying sinusoid overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(result.times, result.s_mean, "o-", ms=3, lw=1, label="averaged index")
    dense = np.linspace(result.times[1], result.times[-1], 400)
    ax.plot(
        dense,
        surfaces.eval_index_model(result.fit_params, dense),
        "--",
        lw=1.5,
        label="decaying-sinusoid fit",
    )
    ax.set_xlabel("trading day")
    ax.set_ylabel("index level")
    ax.legend()
    ax.set_title(f"index relaxation ({result.n_accepted} accepted trajectories)")
    fig.tight_layout()
    _save(fig, path)


def save_omori_figure(stats: OmoriEnsemble, path) -> None:
    """Mean cumulative exceedance counts per threshold, log-log, with fits."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    mask = stats.times >= 1
    t = stats.times[mask].astype(float)
    for m in stats.multiples:
        counts = stats.mean_counts[m][mask]
        omega = stats.mean_curve_exponent[m]
        ax.loglog(t, counts, "o", ms=4, label=f"threshold {m:g} sigma")
        # power law through the first fitted point
        ref = counts[counts > 0][0] if np.any(counts > 0) else 1.0
        t0 = t[counts > 0][0] if np.any(counts > 0) else 1.0
        ax.loglog(t, ref * (t / t0) ** (1.0 - omega), "-", lw=1,
                  label=f"slope 1 - {omega:.3f}")
    ax.set_xlabel("trading day")
    ax.set_ylabel("cumulative exceedances")
    ax.legend(fontsize=8)
    ax.set_title("aftershock counts")
    fig.tight_layout()
    _save(fig, path)
