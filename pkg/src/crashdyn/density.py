"""Histogram estimates of one-point, joint and conditional return densities.

Plain fixed-bin histograms are used throughout: the estimates feed the
drift/diffusion moments on the same grid, so anything fancier (kernels,
adaptive bins) would just decouple the two.  Samples outside the binning
range are counted and excluded from normalization, never clamped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import ReturnEnsemble, pool

# A conditioning bin needs this many paired samples before its conditional
# row (and anything derived from it) is trusted.
MIN_ROW_COUNT = 5

ONE_POINT = "one_point"
JOINT = "joint"
CONDITIONAL = "conditional"


@dataclass(frozen=True)
class BinningSpec:
    """Uniform binning of the return coordinate."""

    x_min: float = -0.35
    x_max: float = 0.35
    n_bins: int = 24

    def __post_init__(self):
        if not (self.x_min < self.x_max):
            raise DataError("binning requires x_min < x_max")
        if self.n_bins < 2:
            raise DataError("binning requires at least 2 bins")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_bins) + 0.5) * self.dx

    def index_of(self, x: float) -> int:
        """Bin index containing ``x`` (right edge closes the last bin)."""
        if not (self.x_min <= x <= self.x_max):
            raise DataError(f"{x} outside binning range [{self.x_min}, {self.x_max}]")
        return min(int((x - self.x_min) / self.dx), self.n_bins - 1)

    def assign(self, x: np.ndarray):
        """(in_range mask, bin index) for an array of samples."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x_min) & (x <= self.x_max)
        idx = np.floor((x - self.x_min) / self.dx).astype(int)
        idx = np.clip(idx, 0, self.n_bins - 1)
        return inside, idx


@dataclass(frozen=True)
class DensityGrid:
    """A binned density: one-point over x, or joint/conditional over (x1, x2).

    ``values`` has shape (n_bins,) for one-point grids and (n_bins, n_bins)
    otherwise, with axis 0 indexing the conditioning coordinate.  For joint
    and conditional grids ``row_counts`` holds the raw pair count per
    conditioning bin and ``supported`` the rows considered trustworthy.
    """

    binning: BinningSpec
    t: object  # int for one-point, (t1, t2) for joint/conditional
    values: np.ndarray
    sample_count: int
    out_of_range: int = 0
    kind: str = ONE_POINT
    row_counts: np.ndarray | None = None
    supported: np.ndarray | None = None


def one_point(ensemble: ReturnEnsemble, t: int, binning: BinningSpec) -> DensityGrid:
    """Normalized histogram density of the pooled return on day ``t``."""
    samples = pool(ensemble, t)
    return density_of_samples(samples, t, binning)


def density_of_samples(samples, t, binning: BinningSpec) -> DensityGrid:
    """One-point density of an arbitrary sample, same conventions as one_point."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise DataError(f"empty sample at t={t}")
    inside, idx = binning.assign(samples)
    n_in = int(inside.sum())
    if n_in == 0:
        raise DataError(f"no samples inside binning range at t={t}")
    counts = np.bincount(idx[inside], minlength=binning.n_bins)
    values = counts / (n_in * binning.dx)
    return DensityGrid(
        binning=binning,
        t=t,
        values=values,
        sample_count=n_in,
        out_of_range=int(samples.size - n_in),
        kind=ONE_POINT,
    )


def joint(ensemble: ReturnEnsemble, t1: int, t2: int, binning: BinningSpec) -> DensityGrid:
    """Joint density of per-asset pairs (x_i(t1), x_i(t2)) on the bin grid."""
    if not t2 > t1:
        raise DataError(f"joint density requires t2 > t1, got ({t1}, {t2})")
    a = ensemble.returns[:, ensemble.column(t1)]
    b = ensemble.returns[:, ensemble.column(t2)]
    paired = np.isfinite(a) & np.isfinite(b)
    if not np.any(paired):
        raise DataError(f"no assets present at both t={t1} and t={t2}")
    in1, i1 = binning.assign(a[paired])
    in2, i2 = binning.assign(b[paired])
    keep = in1 & in2
    n_in = int(keep.sum())
    if n_in == 0:
        raise DataError(f"no paired observations inside binning range for ({t1}, {t2})")
    n = binning.n_bins
    flat = np.bincount(i1[keep] * n + i2[keep], minlength=n * n)
    counts = flat.reshape(n, n)
    values = counts / (n_in * binning.dx**2)
    return DensityGrid(
        binning=binning,
        t=(t1, t2),
        values=values,
        sample_count=n_in,
        out_of_range=int(paired.sum() - n_in),
        kind=JOINT,
        row_counts=counts.sum(axis=1),
    )


def marginal_of_joint(grid: DensityGrid) -> DensityGrid:
    """One-point density of the conditioning coordinate, integrated from a joint."""
    if grid.kind != JOINT:
        raise DataError("marginal_of_joint expects a joint grid")
    values = grid.values.sum(axis=1) * grid.binning.dx
    return DensityGrid(
        binning=grid.binning,
        t=grid.t[0],
        values=values,
        sample_count=grid.sample_count,
        out_of_range=grid.out_of_range,
        kind=ONE_POINT,
    )


def conditional(
    joint_grid: DensityGrid, marginal: DensityGrid, min_count: int = MIN_ROW_COUNT
) -> DensityGrid:
    """Row-wise ratio joint/marginal; rows with thin or empty support are flagged.

    Rows sum to one only when ``marginal`` is consistent with the joint (use
    :func:`marginal_of_joint` for that); rows whose marginal vanishes are
    never divided.
    """
    if joint_grid.kind != JOINT or marginal.kind != ONE_POINT:
        raise DataError("conditional expects (joint, one_point) grids")
    if joint_grid.binning != marginal.binning:
        raise DataError("joint and marginal binning mismatch")
    if joint_grid.t[0] != marginal.t:
        raise DataError(
            f"marginal is for t={marginal.t}, joint conditions on t={joint_grid.t[0]}"
        )
    supported = (joint_grid.row_counts >= min_count) & (marginal.values > 0.0)
    values = np.zeros_like(joint_grid.values)
    values[supported] = joint_grid.values[supported] / marginal.values[supported, None]
    return DensityGrid(
        binning=joint_grid.binning,
        t=joint_grid.t,
        values=values,
        sample_count=joint_grid.sample_count,
        out_of_range=joint_grid.out_of_range,
        kind=CONDITIONAL,
        row_counts=joint_grid.row_counts,
        supported=supported,
    )


def check_normalization(grid: DensityGrid, tol: float = 1e-9) -> None:
    """Raise unless the grid satisfies its normalization contract."""
    dx = grid.binning.dx
    if np.any(grid.values < 0.0):
        raise DataError("negative density values")
    if grid.kind == ONE_POINT:
        total = float(grid.values.sum() * dx)
        if abs(total - 1.0) > tol:
            raise DataError(f"one-point density sums to {total}, not 1")
    elif grid.kind == JOINT:
        total = float(grid.values.sum() * dx * dx)
        if abs(total - 1.0) > tol:
            raise DataError(f"joint density sums to {total}, not 1")
    elif grid.kind == CONDITIONAL:
        rows = grid.values[grid.supported].sum(axis=1) * dx
        if rows.size and np.max(np.abs(rows - 1.0)) > tol:
            raise DataError("a supported conditional row does not sum to 1")
    else:
        raise DataError(f"unknown grid kind {grid.kind!r}")


def write_density_csv(grid: DensityGrid, path) -> None:
    """Export a grid: ``t,x_bin_center,density`` or ``x1_center,x2_center,density``."""
    centers = grid.binning.centers
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if grid.kind == ONE_POINT:
            writer.writerow(("t", "x_bin_center", "density"))
            for c, v in zip(centers, grid.values):
                writer.writerow((int(grid.t), repr(float(c)), repr(float(v))))
        else:
            writer.writerow(("x1_center", "x2_center", "density"))
            for i, c1 in enumerate(centers):
                for j, c2 in enumerate(centers):
                    writer.writerow((repr(float(c1)), repr(float(c2)), repr(float(grid.values[i, j]))))
