"""Finite-lag drift/diffusion estimation and potential reconstruction.

The first and second conditional moments of the day-ahead return, taken per
conditioning bin, estimate the drift and diffusion coefficients at a lag of
one trading day.  The potential is recovered by trapezoid integration of the
negated drift along each supported contiguous run of bins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .density import (
    MIN_ROW_COUNT,
    BinningSpec,
    DensityGrid,
    conditional,
    joint,
    marginal_of_joint,
)
from .errors import DataError
from .ingest import ReturnEnsemble

FIELD_HEADER = ("t", "x_center", "D1", "D2", "U", "supported")


@dataclass(frozen=True)
class CoefficientField:
    """Estimated drift, diffusion and potential on the (x-bin, t) grid.

    Arrays are shaped (n_times, n_bins) with NaN at unsupported cells;
    ``t_axis`` holds the conditioning days (each has data one day ahead).
    ``floored_cells`` counts diffusion estimates clipped up to zero.
    """

    binning: BinningSpec
    t_axis: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray
    potential: np.ndarray
    supported: np.ndarray
    floored_cells: int = 0


def conditional_moment(cond: DensityGrid, k: int) -> np.ndarray:
    """k-th moment of the displacement per conditioning bin (NaN if unsupported).

    Summation runs over the same grid the density lives on:
    M_k(x_i) = sum_j (c_j - c_i)^k P(c_j | c_i) dx.
    """
    if cond.kind != "conditional":
        raise DataError("conditional_moment expects a conditional grid")
    if k not in (1, 2):
        raise DataError(f"moment order must be 1 or 2, got {k}")
    centers = cond.binning.centers
    disp = centers[None, :] - centers[:, None]
    moments = (disp**k * cond.values).sum(axis=1) * cond.binning.dx
    out = np.where(cond.supported, moments, np.nan)
    return out


def estimate_coefficients(
    ensemble: ReturnEnsemble,
    binning: BinningSpec,
    tau: int = 1,
    min_count: int = MIN_ROW_COUNT,
) -> CoefficientField:
    """Drift and diffusion estimates from day-ahead conditional moments.

    For every day t with t+tau on the axis, the conditional density of the
    return tau days ahead is built from per-asset pairs and its first two
    displacement moments (divided by tau) give the coefficients on that day's
    supported bins.  Numerically negative diffusion values are floored at
    zero and counted.
    """
    if tau < 1:
        raise DataError("lag must be a positive number of trading days")
    t_all = [int(t) for t in ensemble.t_axis if t + tau <= int(ensemble.t_axis[-1])]
    if not t_all:
        raise DataError("ensemble spans fewer than 2 usable days at this lag")
    n = binning.n_bins
    d1 = np.full((len(t_all), n), np.nan)
    d2 = np.full((len(t_all), n), np.nan)
    supported = np.zeros((len(t_all), n), dtype=bool)
    floored = 0
    for row, t in enumerate(t_all):
        try:
            jgrid = joint(ensemble, t, t + tau, binning)
        except DataError:
            continue  # no usable pairs that day: row stays unsupported
        cond = conditional(jgrid, marginal_of_joint(jgrid), min_count=min_count)
        m1 = conditional_moment(cond, 1)
        m2 = conditional_moment(cond, 2)
        ok = cond.supported
        d1[row, ok] = m1[ok] / tau
        d2row = m2[ok] / tau
        neg = d2row < 0.0
        if np.any(neg):
            floored += int(neg.sum())
            d2row = np.where(neg, 0.0, d2row)
        d2[row, ok] = d2row
        supported[row] = ok
    return CoefficientField(
        binning=binning,
        t_axis=np.array(t_all, dtype=int),
        drift=d1,
        diffusion=d2,
        potential=np.full((len(t_all), n), np.nan),
        supported=supported,
        floored_cells=floored,
    )


def reconstruct_potential(field: CoefficientField, reference_bin: int | None = None) -> CoefficientField:
    """Fill the potential by trapezoid integration of the negated drift.

    Integration starts at the reference bin (default: the bin containing
    x = 0, where the potential is pinned to zero) and extends over the
    contiguous supported run around it; other bins, and any day on which the
    reference bin itself is unsupported, stay absent.
    """
    binning = field.binning
    if reference_bin is None:
        reference_bin = binning.index_of(0.0)
    if not (0 <= reference_bin < binning.n_bins):
        raise DataError(f"reference bin {reference_bin} outside grid")
    dx = binning.dx
    potential = np.full_like(field.potential, np.nan)
    for row in range(len(field.t_axis)):
        ok = field.supported[row]
        if not ok[reference_bin]:
            continue
        lo = reference_bin
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        hi = reference_bin
        while hi < binning.n_bins - 1 and ok[hi + 1]:
            hi += 1
        d1 = field.drift[row]
        potential[row, reference_bin] = 0.0
        for j in range(reference_bin + 1, hi + 1):
            potential[row, j] = potential[row, j - 1] - 0.5 * (d1[j - 1] + d1[j]) * dx
        for j in range(reference_bin - 1, lo - 1, -1):
            potential[row, j] = potential[row, j + 1] + 0.5 * (d1[j] + d1[j + 1]) * dx
    return replace(field, potential=potential)


def write_field_csv(field: CoefficientField, path) -> None:
    """Export the field, one row per (day, bin): ``t,x_center,D1,D2,U,supported``."""
    centers = field.binning.centers
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELD_HEADER)
        for row, t in enumerate(field.t_axis):
            for j, c in enumerate(centers):
                writer.writerow(
                    (
                        int(t),
                        repr(float(c)),
                        repr(float(field.drift[row, j])),
                        repr(float(field.diffusion[row, j])),
                        repr(float(field.potential[row, j])),
                        "true" if field.supported[row, j] else "false",
                    )
                )
