"""Price ingestion and construction of the pooled daily log-return ensemble.

Close prices for many assets are aligned on a common trading-day axis whose
origin is the crash day, and per-asset log-returns x_i(t) = ln(S_i(t+1)/S_i(t))
are pooled into one matrix.  Days on which an asset has no quote simply
contribute no return; nothing is imputed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .errors import DataError

ENSEMBLE_HEADER = ("t", "asset", "x")


@dataclass(frozen=True)
class CsvLayout:
    """Column layout of a long-format price file (one row per asset-day)."""

    asset_col: str = "asset"
    date_col: str = "date"
    close_col: str = "close"
    delimiter: str = ","


@dataclass(frozen=True)
class PriceSeries:
    """Close prices of one asset on strictly increasing trading-day indices."""

    asset_id: str
    days: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        days = np.asarray(self.days, dtype=int)
        closes = np.asarray(self.closes, dtype=float)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "closes", closes)
        if days.ndim != 1 or closes.shape != days.shape:
            raise DataError(f"{self.asset_id}: days and closes must be 1-d and equally long")
        if len(days) < 2:
            raise DataError(f"{self.asset_id}: need at least 2 observations")
        if np.any(np.diff(days) <= 0):
            raise DataError(f"{self.asset_id}: trading-day indices must be strictly increasing")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0.0):
            raise DataError(f"{self.asset_id}: close prices must be finite and positive")


@dataclass(frozen=True)
class ReturnEnsemble:
    """Pooled log-return matrix, assets in rows, contiguous trading days in columns.

    Absent entries are NaN.  The time axis is anchored so that the crash day
    has index 0 (for crash data; synthetic ensembles may use any span).
    """

    asset_ids: tuple
    t_axis: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        t_axis = np.asarray(self.t_axis, dtype=int)
        returns = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        object.__setattr__(self, "t_axis", t_axis)
        object.__setattr__(self, "returns", returns)
        if len(set(self.asset_ids)) != len(self.asset_ids):
            raise DataError("duplicate asset ids in ensemble")
        if returns.shape != (len(self.asset_ids), len(t_axis)):
            raise DataError("returns matrix shape does not match asset list and time axis")
        if len(t_axis) == 0:
            raise DataError("empty time axis")
        if np.any(np.diff(t_axis) != 1):
            raise DataError("time axis must be contiguous integer trading days")
        if np.any(np.isinf(returns)):
            raise DataError("returns must be finite where present (NaN marks absence)")
        empty = ~np.any(np.isfinite(returns), axis=0)
        if np.any(empty):
            days = t_axis[empty].tolist()
            raise DataError(f"no asset has a return on trading days {days}; assets do not overlap")

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    def column(self, t: int) -> int:
        """Index of trading day ``t`` in the axis."""
        t0 = int(self.t_axis[0])
        if t < t0 or t > int(self.t_axis[-1]):
            raise DataError(f"trading day {t} outside axis [{t0}, {int(self.t_axis[-1])}]")
        return int(t) - t0


def load_prices(path, layout: CsvLayout = CsvLayout()) -> list:
    """Parse a long-format close-price CSV into one PriceSeries per asset.

    Calendar dates are mapped to consecutive integers over the days on which
    any asset traded (position in the sorted union of observed dates).
    """
    series, _ = load_prices_with_calendar(path, layout)
    return series


def load_prices_with_calendar(path, layout: CsvLayout = CsvLayout()):
    """Like :func:`load_prices` but also return the ordered ISO-date calendar.

    The calendar maps trading-day index -> ISO date; callers use it to resolve
    a crash date to its trading-day index.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"price file not found: {path}")
    rows = []  # (asset, iso_date, close, line_no)
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=layout.delimiter)
        if reader.fieldnames is None:
            raise DataError(f"{path}: no rows")
        for col in (layout.asset_col, layout.date_col, layout.close_col):
            if col not in reader.fieldnames:
                raise DataError(f"{path}: missing column '{col}' (have {reader.fieldnames})")
        for rec in reader:
            line_no = reader.line_num
            asset = (rec.get(layout.asset_col) or "").strip()
            raw_date = (rec.get(layout.date_col) or "").strip()
            raw_close = (rec.get(layout.close_col) or "").strip()
            if not asset or not raw_date or not raw_close:
                raise DataError(f"{path}:{line_no}: incomplete row")
            try:
                iso = date.fromisoformat(raw_date).isoformat()
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: bad date '{raw_date}': {exc}") from None
            try:
                close = float(raw_close)
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad close '{raw_close}'") from None
            if not math.isfinite(close) or close <= 0.0:
                raise DataError(f"{path}:{line_no}: non-positive close {close} for {asset} {iso}")
            if (asset, iso) in seen:
                raise DataError(f"{path}:{line_no}: duplicate (asset, date) pair ({asset}, {iso})")
            seen.add((asset, iso))
            rows.append((asset, iso, close))
    if not rows:
        raise DataError(f"{path}: no rows")

    calendar = sorted({iso for _, iso, _ in rows})
    day_index = {iso: i for i, iso in enumerate(calendar)}
    by_asset: dict = {}
    for asset, iso, close in rows:
        by_asset.setdefault(asset, []).append((day_index[iso], close))
    out = []
    for asset, obs in by_asset.items():
        obs.sort()
        days = np.array([d for d, _ in obs], dtype=int)
        closes = np.array([c for _, c in obs], dtype=float)
        out.append(PriceSeries(asset_id=asset, days=days, closes=closes))
    return out, tuple(calendar)


def compute_returns(series, crash_day: int) -> ReturnEnsemble:
    """Pool per-asset daily log-returns, re-anchoring the axis at the crash day.

    The return x_i(t) = ln(S_i(t+1)/S_i(t)) exists only where an asset has
    closes on both trading days t and t+1; gaps stay absent.  Assets without a
    single consecutive pair are kept as all-absent rows and counted in a
    warning.
    """
    if not series:
        raise DataError("no price series")
    lo = min(int(s.days[0]) for s in series)
    hi = max(int(s.days[-1]) for s in series)
    if not (lo <= crash_day <= hi):
        raise DataError(f"crash day {crash_day} outside observed day range [{lo}, {hi}]")

    per_asset = []
    all_gap = []
    t_min, t_max = None, None
    for s in series:
        consecutive = np.diff(s.days) == 1
        ts = s.days[:-1][consecutive] - crash_day
        xs = np.log(s.closes[1:][consecutive] / s.closes[:-1][consecutive])
        per_asset.append((s.asset_id, ts, xs))
        if len(ts) == 0:
            all_gap.append(s.asset_id)
        else:
            t_min = int(ts[0]) if t_min is None else min(t_min, int(ts[0]))
            t_max = int(ts[-1]) if t_max is None else max(t_max, int(ts[-1]))
    if t_min is None:
        raise DataError("no asset has two consecutive trading days")
    if all_gap:
        warnings.warn(f"{len(all_gap)} asset(s) contribute no returns: {sorted(all_gap)}")

    t_axis = np.arange(t_min, t_max + 1)
    returns = np.full((len(per_asset), len(t_axis)), np.nan)
    for row, (_, ts, xs) in enumerate(per_asset):
        returns[row, ts - t_min] = xs
    return ReturnEnsemble(
        asset_ids=tuple(a for a, _, _ in per_asset), t_axis=t_axis, returns=returns
    )


def pool(ensemble: ReturnEnsemble, t: int) -> np.ndarray:
    """All returns present on trading day ``t``, in stored asset order."""
    col = ensemble.returns[:, ensemble.column(t)]
    return col[np.isfinite(col)]


def write_ensemble_csv(ensemble: ReturnEnsemble, path) -> None:
    """Write the ensemble in long format with header ``t,asset,x``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENSEMBLE_HEADER)
        for j, t in enumerate(ensemble.t_axis):
            col = ensemble.returns[:, j]
            for i, asset in enumerate(ensemble.asset_ids):
                if np.isfinite(col[i]):
                    writer.writerow((int(t), asset, repr(float(col[i]))))


def read_ensemble_csv(path) -> ReturnEnsemble:
    """Read an ensemble written by :func:`write_ensemble_csv`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"ensemble file not found: {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ENSEMBLE_HEADER:
            raise DataError(f"{path}: expected header {','.join(ENSEMBLE_HEADER)}")
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 fields")
            try:
                entries.append((int(rec[0]), rec[1], float(rec[2])))
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    if not entries:
        raise DataError(f"{path}: no rows")
    assets = list(dict.fromkeys(asset for _, asset, _ in entries))
    row_of = {a: i for i, a in enumerate(assets)}
    t_min = min(t for t, _, _ in entries)
    t_max = max(t for t, _, _ in entries)
    t_axis = np.arange(t_min, t_max + 1)
    returns = np.full((len(assets), len(t_axis)), np.nan)
    for t, asset, x in entries:
        returns[row_of[asset], t - t_min] = x
    return ReturnEnsemble(asset_ids=tuple(assets), t_axis=t_axis, returns=returns)
