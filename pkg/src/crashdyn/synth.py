"""Synthetic ground-truth generators used to validate every estimator stage.

A mean-reverting ensemble with known drift slope and noise level exercises
the density and coefficient estimators; exact (optionally noisy) samples of
the closed-form surfaces exercise the fitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import surfaces
from .errors import DataError
from .ingest import ReturnEnsemble


@dataclass(frozen=True)
class OuSpec:
    """Mean-reverting (Ornstein-Uhlenbeck) ensemble specification.

    ``dt`` is the integration substep in days; daily values are recorded at
    integer days.  With dt = 1 each day is a single linear-drift step, which
    makes the one-day conditional moments exactly linear in the state: that
    is the regime the coefficient estimator is validated against.
    """

    theta: float
    D: float
    n_assets: int
    n_days: int
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (self.theta > 0 and self.D >= 0):
            raise DataError("OU spec requires theta > 0 and D >= 0")
        if self.n_assets < 1 or self.n_days < 2:
            raise DataError("OU spec requires n_assets >= 1 and n_days >= 2")
        if not (0 < self.dt <= 1):
            raise DataError("OU spec requires 0 < dt <= 1")
        steps = 1.0 / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise DataError("1/dt must be an integer number of substeps per day")
        if self.theta * self.dt >= 2:
            raise DataError("theta * dt >= 2 makes the discrete map unstable")

    @property
    def steps_per_day(self) -> int:
        return int(round(1.0 / self.dt))


def generate_ou(spec: OuSpec) -> ReturnEnsemble:
    """Simulate the ensemble; initial states are drawn from stationarity."""
    rng = np.random.default_rng(spec.seed)
    # stationary variance of the discrete map x -> (1 - theta dt) x + noise
    decay = 1.0 - spec.theta * spec.dt
    stat_var = spec.D * spec.dt / (1.0 - decay**2)
    x = rng.normal(0.0, math.sqrt(stat_var), spec.n_assets)
    daily = np.empty((spec.n_assets, spec.n_days))
    daily[:, 0] = x
    noise_scale = math.sqrt(spec.D * spec.dt)
    for day in range(1, spec.n_days):
        for _ in range(spec.steps_per_day):
            x = decay * x + noise_scale * rng.standard_normal(spec.n_assets)
        daily[:, day] = x
    t0 = -(spec.n_days // 2)
    width = len(str(spec.n_assets - 1)) if spec.n_assets > 1 else 1
    ids = tuple(f"ou{i:0{width}d}" for i in range(spec.n_assets))
    return ReturnEnsemble(
        asset_ids=ids,
        t_axis=np.arange(t0, t0 + spec.n_days),
        returns=daily,
    )


def sample_surface(model: str, params, grid, noise_sigma: float = 0.0, seed: int = 0,
                   t_floor: float = 1e-6):
    """Exact model values on a grid, plus optional Gaussian noise.

    For the potential model ``grid`` is a pair (x values, t values) whose
    mesh product is sampled; for the other models it is a time array.
    Returns (coords, values) in the layout :func:`crashdyn.surfaces.fit`
    consumes.
    """
    if model not in surfaces.MODELS:
        raise DataError(f"unknown model {model!r}")
    if noise_sigma < 0:
        raise DataError("noise_sigma must be nonnegative")
    if model == surfaces.POTENTIAL:
        xs, ts = grid
        xs = np.asarray(xs, dtype=float).ravel()
        ts = np.asarray(ts, dtype=float).ravel()
        if xs.size == 0 or ts.size == 0:
            raise DataError("empty sampling grid")
        xx, tt = np.meshgrid(xs, ts, indexing="ij")
        coords = np.column_stack([xx.ravel(), tt.ravel()])
        values = np.asarray(surfaces.eval_potential(params, coords[:, 0], coords[:, 1]))
    else:
        coords = np.asarray(grid, dtype=float).ravel()
        if coords.size == 0:
            raise DataError("empty sampling grid")
        if model == surfaces.DIFFUSION:
            values = np.asarray(surfaces.eval_diffusion(params, coords, t_floor))
        else:
            values = np.asarray(surfaces.eval_index_model(params, coords))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_sigma, values.shape)
    return coords, values
