"""Euler-Maruyama simulation of the post-crash return dynamics.

The return state diffuses in the model potential under the time-dependent
noise level.  The log-return booked to day d is the increment of the state
accumulated over that day's substeps, so the compounded index is simply the
exponential of the state relative to its start.  The averaged index over
accepted (crash-sized) trajectories is then fitted with the decaying-sinusoid
model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import surfaces
from .errors import DataError, SimulationError
from .surfaces import DiffusionParams, FitReport, IndexFitParams, PotentialParams

INDEX_HEADER = ("t", "s_mean", "n_accepted")
TRAJECTORY_HEADER = ("traj", "t", "x", "s")


@dataclass(frozen=True)
class SimConfig:
    """Simulation window, discretization, acceptance filter and seeding.

    The acceptance test keeps trajectories whose index declines by more than
    ``decline_threshold`` over the first simulated day; a nonpositive
    threshold disables the filter.  ``diffusion_scale`` multiplies the noise
    level (0 gives the deterministic drift-only limit).
    """

    t_start: float = 0.0
    t_end: float = 25.0
    substeps_per_day: int = 50
    n_accepted_target: int = 150
    decline_threshold: float = 0.25
    max_attempts: int = 20_000
    seed: int = 0
    x0: float = 0.0
    s0: float = 1.0
    diffusion_scale: float = 1.0

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise DataError("simulation window requires t_end > t_start")
        span = self.t_end - self.t_start
        if abs(span - round(span)) > 1e-9 or round(span) < 1:
            raise DataError("simulation window must span a whole number of days (>= 1)")
        if self.substeps_per_day < 1:
            raise DataError("substeps_per_day must be >= 1")
        if self.decline_threshold >= 1.0:
            raise DataError("decline_threshold must be below 1")
        if self.n_accepted_target < 1 or self.max_attempts < 1:
            raise DataError("trajectory counts must be positive")
        if self.s0 <= 0:
            raise DataError("initial index level must be positive")
        if self.diffusion_scale < 0:
            raise DataError("diffusion_scale must be nonnegative")

    @property
    def n_days(self) -> int:
        return int(round(self.t_end - self.t_start))

    @property
    def step(self) -> float:
        return 1.0 / self.substeps_per_day


@dataclass(frozen=True)
class Trajectory:
    """Daily samples of one simulated path: state x and compounded index s."""

    times: np.ndarray
    x: np.ndarray
    s: np.ndarray


def _index_path(daily_x: np.ndarray, s0: float) -> np.ndarray:
    # The day-d log-return is the increment of the state accumulated over day
    # d, so the compounded index telescopes: s(m) = s0 * exp(x(m) - x(0)).
    return s0 * np.exp(daily_x - daily_x[..., :1])


def daily_returns(daily_x: np.ndarray) -> np.ndarray:
    """Per-day log-returns of a state path: increments between day marks."""
    return np.diff(daily_x, axis=-1)


def drift(params: PotentialParams, x, t):
    """Drift of the return state: negated x-gradient of the potential."""
    grad = surfaces.potential_gradient(params, x, t)
    return -grad if np.isscalar(grad) else -np.asarray(grad)


def model_diffusion_fn(dparams: DiffusionParams, config: SimConfig):
    """Noise level callable (x, t) -> D2 with the power law floored at one substep."""
    floor = config.step
    scale = config.diffusion_scale

    def diffusion_fn(x, t):
        return scale * surfaces.eval_diffusion(dparams, t, t_floor=floor)

    return diffusion_fn


def euler_maruyama_path(drift_fn, diffusion_fn, config: SimConfig, rng) -> Trajectory:
    """Integrate one path with the explicit first-order scheme.

    ``rng`` is a seeded Generator (or an int seed); the path is bitwise
    reproducible given the same stream.  Daily values are read off after each
    day's substeps.  A non-finite state aborts with a diagnostic.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    h = config.step
    sqrt_h = math.sqrt(h)
    noise = rng.standard_normal(config.n_days * config.substeps_per_day)
    x = config.x0
    daily = np.empty(config.n_days + 1)
    daily[0] = x
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for day in range(config.n_days):
            base = config.t_start + day
            for j in range(config.substeps_per_day):
                t = base + j * h
                d2 = float(diffusion_fn(x, t))
                if d2 < 0:
                    raise SimulationError(f"negative diffusion {d2} at t={t}")
                x = x + float(drift_fn(x, t)) * h + math.sqrt(d2) * sqrt_h * noise[k]
                k += 1
                if not math.isfinite(x):
                    raise SimulationError(f"state diverged at t={t + h}")
            daily[day + 1] = x
    times = config.t_start + np.arange(config.n_days + 1, dtype=float)
    return Trajectory(times=times, x=daily, s=_index_path(daily, config.s0))


def simulate_trajectory(
    pparams: PotentialParams, dparams: DiffusionParams, config: SimConfig, rng
) -> Trajectory:
    """One path of the full model (potential drift + power-law noise)."""
    return euler_maruyama_path(
        lambda x, t: drift(pparams, x, t),
        model_diffusion_fn(dparams, config),
        config,
        rng,
    )


def _trajectory_stream(seed: int, index: int) -> np.random.Generator:
    # one independent, reproducible stream per attempt index
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def euler_maruyama_ensemble(drift_fn, diffusion_fn, config: SimConfig,
                            n_paths: int, first_index: int = 0):
    """Vectorized batch of paths with per-path seeded substreams.

    Returns (daily states, finite mask): shape (n_paths, n_days + 1); rows
    that overflowed are flagged instead of raising so callers can discard
    them deterministically.
    """
    h = config.step
    sqrt_h = math.sqrt(h)
    n_steps = config.n_days * config.substeps_per_day
    noise = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        noise[i] = _trajectory_stream(config.seed, first_index + i).standard_normal(n_steps)
    x = np.full(n_paths, config.x0, dtype=float)
    daily = np.empty((n_paths, config.n_days + 1))
    daily[:, 0] = x
    k = 0
    with np.errstate(invalid="ignore", over="ignore"):
        for day in range(config.n_days):
            base = config.t_start + day
            for j in range(config.substeps_per_day):
                t = base + j * h
                d2 = diffusion_fn(x, t)
                x = x + drift_fn(x, t) * h + np.sqrt(d2 * h) * noise[:, k]
                k += 1
            daily[:, day + 1] = x
    ok = np.isfinite(daily).all(axis=1)
    return daily, ok


@dataclass(frozen=True)
class IndexResult:
    """Averaged index over accepted trajectories plus its sinusoid fit."""

    times: np.ndarray
    s_mean: np.ndarray
    n_accepted: int
    n_attempted: int
    n_aborted: int
    accepted_x: np.ndarray  # daily states of accepted paths, (n_accepted, n_days + 1)
    accepted_s: np.ndarray | None
    fit_report: FitReport
    fit_params: IndexFitParams
    partial: bool

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_attempted if self.n_attempted else 0.0

    @property
    def accepted_returns(self) -> np.ndarray:
        """Daily log-returns of the accepted paths, days 1..n_days."""
        return daily_returns(self.accepted_x)

    @property
    def return_times(self) -> np.ndarray:
        """Day labels of the return series (day d covers (d-1, d])."""
        return self.times[1:].astype(int)

    @property
    def mean_index_returns(self) -> np.ndarray:
        """Daily log-returns of the averaged index itself."""
        return np.diff(np.log(self.s_mean))


def default_index_fit_init(times: np.ndarray, s_mean: np.ndarray) -> IndexFitParams:
    """Data-driven starting point for the decaying-sinusoid fit."""
    tail = s_mean[-min(8, len(s_mean)):]
    level = float(np.mean(tail))
    head = s_mean[: min(10, len(s_mean))]
    amp = float(np.max(np.abs(head - level))) if len(head) else 0.05
    amp = max(amp, 1e-3)
    return IndexFitParams(
        A0=level, A1=amp, A2=amp / 2.0, alpha1=0.1, alpha2=0.6, omega=1.0, gamma=-2.4
    )


def simulate_index(
    pparams: PotentialParams,
    dparams: DiffusionParams,
    config: SimConfig,
    fit_init: IndexFitParams | None = None,
    fit_tol: float = 1e-10,
    fit_max_iter: int = 20_000,
    keep_trajectories: bool = False,
    batch_size: int = 512,
) -> IndexResult:
    """Generate paths until enough pass the crash filter, average, and fit.

    Attempts are consumed in index order, so the accepted set (and therefore
    every output) is a deterministic function of the configuration alone.
    The first simulated day (the crash anchor at the window start) is
    excluded from the sinusoid fit.
    """
    drift_fn = lambda x, t: drift(pparams, x, t)  # noqa: E731
    diffusion_fn = model_diffusion_fn(dparams, config)
    target = config.n_accepted_target
    accepted_rows = []
    attempted = 0
    aborted = 0
    while len(accepted_rows) < target and attempted < config.max_attempts:
        count = min(batch_size, config.max_attempts - attempted)
        daily, ok = euler_maruyama_ensemble(
            drift_fn, diffusion_fn, config, count, first_index=attempted
        )
        attempted += count
        aborted += int((~ok).sum())
        if config.decline_threshold > 0.0:
            first_day = np.exp(daily[:, 1] - daily[:, 0])  # s(1)/s(0)
            declined = first_day < (1.0 - config.decline_threshold)
        else:
            declined = np.ones(count, dtype=bool)
        for i in np.nonzero(ok & declined)[0]:
            if len(accepted_rows) >= target:
                break
            accepted_rows.append(daily[i])
    if not accepted_rows:
        raise SimulationError(
            f"no trajectory passed the decline filter in {attempted} attempts"
        )
    partial = len(accepted_rows) < target
    accepted = np.vstack(accepted_rows)
    s_paths = _index_path(accepted, config.s0)
    s_mean = s_paths.mean(axis=0)
    times = config.t_start + np.arange(config.n_days + 1, dtype=float)

    fit_t = times[1:]
    fit_s = s_mean[1:]
    init = fit_init if fit_init is not None else default_index_fit_init(fit_t, fit_s)
    report = surfaces.fit(
        surfaces.INDEX, fit_t, fit_s, init.as_vector(), tol=fit_tol, max_iter=fit_max_iter
    )
    return IndexResult(
        times=times,
        s_mean=s_mean,
        n_accepted=len(accepted_rows),
        n_attempted=attempted,
        n_aborted=aborted,
        accepted_x=accepted,
        accepted_s=s_paths if keep_trajectories else None,
        fit_report=report,
        fit_params=IndexFitParams.from_vector(report.params),
        partial=partial,
    )


def write_index_csv(result: IndexResult, path) -> None:
    """Averaged index series: ``t,s_mean,n_accepted``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_HEADER)
        for t, s in zip(result.times, result.s_mean):
            writer.writerow((repr(float(t)), repr(float(s)), result.n_accepted))


def write_trajectories_csv(result: IndexResult, path) -> None:
    """Per-trajectory daily dump: ``traj,t,x,s`` for every accepted path."""
    if result.accepted_s is None:
        raise DataError("trajectories were not kept; rerun with keep_trajectories=True")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for i in range(result.n_accepted):
            for j, t in enumerate(result.times):
                writer.writerow(
                    (
                        i,
                        repr(float(t)),
                        repr(float(result.accepted_x[i, j])),
                        repr(float(result.accepted_s[i, j])),
                    )
                )
