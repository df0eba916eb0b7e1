"""Aftershock statistics: cumulative threshold-exceedance counts and their
power-law exponents.

The cumulative number of days whose absolute return exceeds a threshold
grows like t^(1 - exponent) after a crash; the exponent is read off a
log-log least-squares fit over days with positive counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class OmoriResult:
    """Cumulative exceedance counts for one threshold, plus the fitted exponent."""

    threshold: float
    times: np.ndarray
    counts: np.ndarray
    omega: float | None = None
    fit_residual: float | None = None


def return_std(values, times=None, window=None) -> float:
    """Population standard deviation, optionally restricted to a time window."""
    values = np.asarray(values, dtype=float)
    if window is not None:
        if times is None:
            raise DataError("a window needs matching times")
        times = np.asarray(times, dtype=float)
        lo, hi = window
        values = values[(times >= lo) & (times <= hi)]
    if values.size == 0:
        raise DataError("empty window")
    return float(np.std(values))


def cumulative_count(times, values, threshold: float) -> OmoriResult:
    """N(t): number of days t' <= t with |x(t')| above the threshold."""
    if not threshold > 0:
        raise DataError("threshold must be positive")
    times = np.asarray(times, dtype=int)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.size == 0:
        raise DataError("times and values must be equally sized and nonempty")
    if np.any(np.diff(times) <= 0):
        raise DataError("times must be strictly increasing")
    counts = np.cumsum(np.abs(values) > threshold).astype(int)
    return OmoriResult(threshold=float(threshold), times=times, counts=counts)


def fit_omori(result: OmoriResult) -> OmoriResult:
    """Least-squares slope of log N vs log t over t >= 1 with N > 0.

    The exponent is one minus that slope; day 0 (log t divergent) and days
    before the first event carry no information and are excluded.
    """
    times = np.asarray(result.times, dtype=float)
    counts = np.asarray(result.counts, dtype=float)
    mask = (times >= 1) & (counts > 0)
    if mask.sum() < 3:
        raise DataError("need at least 3 positive counts at t >= 1 to fit")
    lt = np.log(times[mask])
    ln = np.log(counts[mask])
    design = np.column_stack([lt, np.ones_like(lt)])
    coef, _, _, _ = np.linalg.lstsq(design, ln, rcond=None)
    slope = float(coef[0])
    ssr = float(np.sum((design @ coef - ln) ** 2))
    return replace(result, omega=1.0 - slope, fit_residual=ssr)


@dataclass(frozen=True)
class OmoriEnsemble:
    """Per-trajectory and mean-curve exceedance statistics for several thresholds.

    Thresholds are multiples of a common scale ``sigma`` (normally the
    standard deviation of the averaged-index return series); exponents are
    fitted per trajectory and averaged, and the mean cumulative curve is
    fitted as well since either view is a sensible single-index analog.
    """

    multiples: tuple
    sigma: float             # threshold base actually used
    sigmas: np.ndarray       # per-trajectory standard deviations, for reference
    exponents: dict          # multiple -> per-trajectory exponent array
    mean_exponent: dict      # multiple -> average of per-trajectory exponents
    mean_counts: dict        # multiple -> mean cumulative curve (float)
    mean_curve_exponent: dict
    mean_curve_residual: dict
    times: np.ndarray
    skipped: dict            # multiple -> trajectories without a fittable count


def ensemble_statistics(
    returns: np.ndarray, times, multiples=(1.0, 1.5), sigma: float | None = None
) -> OmoriEnsemble:
    """Exceedance statistics over an ensemble of daily-return series (rows).

    ``sigma`` sets the threshold base for all trajectories; by default it is
    the mean of the per-trajectory standard deviations.  Pass the standard
    deviation of the averaged-index returns to reproduce the single-index
    reading of the statistics.
    """
    returns = np.asarray(returns, dtype=float)
    times = np.asarray(times, dtype=int)
    if returns.ndim != 2 or returns.shape[1] != times.size:
        raise DataError("returns must be (n_trajectories, n_days) matching times")
    if not multiples:
        raise DataError("need at least one threshold multiple")
    sigmas = np.std(returns, axis=1)
    base = float(sigmas.mean()) if sigma is None else float(sigma)
    if not base > 0:
        raise DataError("threshold base sigma must be positive")
    exponents = {}
    mean_exponent = {}
    mean_counts = {}
    mean_curve_exponent = {}
    mean_curve_residual = {}
    skipped = {}
    for m in multiples:
        omegas = []
        count_rows = np.empty_like(returns)
        n_skipped = 0
        for i in range(returns.shape[0]):
            res = cumulative_count(times, returns[i], m * base)
            count_rows[i] = res.counts
            try:
                omegas.append(fit_omori(res).omega)
            except DataError:
                n_skipped += 1
        if not omegas:
            raise DataError(f"no trajectory has fittable counts at multiple {m}")
        mean_curve = count_rows.mean(axis=0)
        curve = OmoriResult(threshold=float(m) * base, times=times, counts=mean_curve)
        curve = fit_omori(curve)
        exponents[m] = np.array(omegas)
        mean_exponent[m] = float(np.mean(omegas))
        mean_counts[m] = mean_curve
        mean_curve_exponent[m] = float(curve.omega)
        mean_curve_residual[m] = float(curve.fit_residual)
        skipped[m] = n_skipped
    return OmoriEnsemble(
        multiples=tuple(multiples),
        sigma=base,
        sigmas=sigmas,
        exponents=exponents,
        mean_exponent=mean_exponent,
        mean_counts=mean_counts,
        mean_curve_exponent=mean_curve_exponent,
        mean_curve_residual=mean_curve_residual,
        times=times,
        skipped=skipped,
    )


def write_counts_csv(times, counts, path) -> None:
    """Cumulative counts for one threshold: ``t,N``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "N"))
        for t, n in zip(times, counts):
            value = int(n) if float(n).is_integer() else repr(float(n))
            writer.writerow((int(t), value))


def summary_dict(stats: OmoriEnsemble) -> dict:
    """JSON-ready summary of thresholds, exponents and residuals."""
    per_threshold = []
    for m in stats.multiples:
        per_threshold.append(
            {
                "multiple": float(m),
                "threshold": float(m) * stats.sigma,
                "exponent_mean": stats.mean_exponent[m],
                "exponent_std": float(np.std(stats.exponents[m])),
                "exponent_mean_curve": stats.mean_curve_exponent[m],
                "mean_curve_residual": stats.mean_curve_residual[m],
                "n_fitted": int(stats.exponents[m].size),
                "n_skipped": int(stats.skipped[m]),
            }
        )
    return {
        "sigma": stats.sigma,
        "sigma_trajectory_mean": float(stats.sigmas.mean()),
        "n_trajectories": int(stats.sigmas.size),
        "thresholds": per_threshold,
    }


def write_summary_json(stats: OmoriEnsemble, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(stats), fh, indent=2, sort_keys=True)
        fh.write("\n")
