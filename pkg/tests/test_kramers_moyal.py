import numpy as np
import pytest

from crashdyn.density import BinningSpec, DensityGrid, CONDITIONAL
from crashdyn.errors import DataError
from crashdyn.ingest import ReturnEnsemble
from crashdyn.kramers_moyal import (
    conditional_moment,
    estimate_coefficients,
    reconstruct_potential,
)
from crashdyn.surfaces import OCT87_POTENTIAL
from crashdyn.simulate import drift as model_drift
from crashdyn.synth import OuSpec, generate_ou

BINNING = BinningSpec(-0.35, 0.35, 24)


def conditional_grid(binning, rows, supported=None):
    rows = np.asarray(rows, dtype=float)
    if supported is None:
        supported = rows.sum(axis=1) > 0
    return DensityGrid(
        binning=binning,
        t=(0, 1),
        values=rows,
        sample_count=100,
        kind=CONDITIONAL,
        row_counts=np.full(binning.n_bins, 100),
        supported=np.asarray(supported, dtype=bool),
    )


def test_moment_of_delta_at_same_bin_is_zero():
    n = BINNING.n_bins
    rows = np.zeros((n, n))
    for i in range(n):
        rows[i, i] = 1.0 / BINNING.dx
    cond = conditional_grid(BINNING, rows)
    np.testing.assert_allclose(conditional_moment(cond, 1), 0.0, atol=1e-15)
    np.testing.assert_allclose(conditional_moment(cond, 2), 0.0, atol=1e-15)


def test_moment_of_shifted_delta():
    n = BINNING.n_bins
    rows = np.zeros((n, n))
    supported = np.zeros(n, dtype=bool)
    for i in range(n - 1):
        rows[i, i + 1] = 1.0 / BINNING.dx
        supported[i] = True
    cond = conditional_grid(BINNING, rows, supported)
    m1 = conditional_moment(cond, 1)
    m2 = conditional_moment(cond, 2)
    np.testing.assert_allclose(m1[supported], BINNING.dx, rtol=1e-12)
    np.testing.assert_allclose(m2[supported], BINNING.dx**2, rtol=1e-12)
    assert np.isnan(m1[~supported]).all()


def test_moment_order_validated():
    cond = conditional_grid(BINNING, np.zeros((24, 24)))
    with pytest.raises(DataError):
        conditional_moment(cond, 3)


def test_gaussian_conditional_moments_match_direct_sums():
    centers = BINNING.centers
    n = BINNING.n_bins
    rows = np.zeros((n, n))
    mu, s = 0.05, 0.06
    weights = np.exp(-0.5 * ((centers - mu) / s) ** 2)
    weights /= weights.sum() * BINNING.dx
    rows[:] = weights  # same displaced-Gaussian row for every conditioning bin
    cond = conditional_grid(BINNING, rows, supported=np.ones(n, dtype=bool))
    m1 = conditional_moment(cond, 1)
    m2 = conditional_moment(cond, 2)
    # direct-summation oracle over the same grid, written independently
    for i in range(n):
        d = centers - centers[i]
        m1_direct = float(np.sum(d * rows[i]) * BINNING.dx)
        m2_direct = float(np.sum(d * d * rows[i]) * BINNING.dx)
        assert m1[i] == pytest.approx(m1_direct, rel=1e-12)
        assert m2[i] == pytest.approx(m2_direct, rel=1e-12)
        # and the discretized Gaussian matches its continuous moments
        assert m1[i] == pytest.approx(mu - centers[i], abs=2e-3)
        assert m2[i] == pytest.approx((mu - centers[i]) ** 2 + s**2, abs=2e-3)


def persistence_ensemble(n=5000, seed=0):
    rng = np.random.default_rng(seed)
    col = rng.normal(0.0, 0.1, n)
    mat = np.column_stack([col, col])
    return ReturnEnsemble(
        asset_ids=tuple(f"a{i}" for i in range(n)),
        t_axis=np.array([0, 1]),
        returns=mat,
    )


def test_pure_persistence_gives_zero_coefficients():
    field = estimate_coefficients(persistence_ensemble(), BINNING)
    ok = field.supported
    assert ok.any()
    np.testing.assert_allclose(field.drift[ok], 0.0, atol=1e-15)
    np.testing.assert_allclose(field.diffusion[ok], 0.0, atol=1e-15)


def ou_field(theta=0.5, diffusion=0.01, n_assets=100_000, seed=12, n_days=3):
    # dt = 1: each day is one linear-drift step, so the one-day conditional
    # moments are exactly linear in the state
    spec = OuSpec(theta=theta, D=diffusion, n_assets=n_assets, n_days=n_days, dt=1.0, seed=seed)
    ens = generate_ou(spec)
    return estimate_coefficients(ens, BINNING)


def weighted_slope(x, y, w):
    x, y, w = np.asarray(x), np.asarray(y), np.asarray(w, dtype=float)
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    return float(np.sum(w * (x - xm) * (y - ym)) / np.sum(w * (x - xm) ** 2))


def field_row_slope(field, row):
    ok = field.supported[row]
    centers = field.binning.centers[ok]
    # weight by the pooled sample mass per bin to tame noisy tail bins
    weights = np.exp(-0.5 * (centers / 0.12) ** 2)
    return weighted_slope(centers, field.drift[row, ok], weights)


def test_ou_drift_slope_and_diffusion_level():
    field = ou_field()
    slope = field_row_slope(field, 0)
    assert abs(slope - (-0.5)) < 0.05  # within 10% of -theta
    centers = field.binning.centers
    central = field.supported[0] & (np.abs(centers) < 0.05)
    d2 = field.diffusion[0, central]
    assert np.all(np.abs(d2 - 0.01) < 0.0015)  # within 15% of D


def test_ou_drift_statistically_linear():
    # residuals of a straight-line fit stay within sampling error of the
    # per-bin moment estimates on stationary mean-reverting data
    spec = OuSpec(theta=0.5, D=0.01, n_assets=150_000, n_days=2, dt=1.0, seed=31)
    ens = generate_ou(spec)
    field = estimate_coefficients(ens, BINNING)
    ok = field.supported[0]
    centers = BINNING.centers[ok]
    d1 = field.drift[0, ok]
    inside, idx = BINNING.assign(ens.returns[:, 0])
    counts = np.bincount(idx[inside], minlength=BINNING.n_bins)[ok]
    coef = np.polyfit(centers, d1, 1, w=np.sqrt(counts))
    resid = d1 - np.polyval(coef, centers)
    se = np.sqrt(spec.D / np.maximum(counts, 1))
    assert np.all(np.abs(resid) < 5.0 * se + 1e-4)


def test_two_day_single_bin_support():
    mat = np.array([[0.1, 0.12]] * 6)
    ens = ReturnEnsemble(
        asset_ids=tuple(f"a{i}" for i in range(6)),
        t_axis=np.array([0, 1]),
        returns=mat,
    )
    field = estimate_coefficients(ens, BINNING)
    assert field.supported.sum() == 1
    assert field.supported[0, BINNING.index_of(0.1)]


def test_single_day_rejected():
    ens = ReturnEnsemble(
        asset_ids=("a",),
        t_axis=np.array([0]),
        returns=np.array([[0.1]]),
    )
    with pytest.raises(DataError, match="fewer than 2"):
        estimate_coefficients(ens, BINNING)


def test_negative_diffusion_floored_and_counted():
    field = estimate_coefficients(persistence_ensemble(), BINNING)
    assert field.floored_cells == 0
    assert np.all(field.diffusion[field.supported] >= 0.0)


def synthetic_field(binning, t_axis, drift_fn):
    nt, nb = len(t_axis), binning.n_bins
    centers = binning.centers
    d1 = np.array([[drift_fn(c, t) for c in centers] for t in t_axis], dtype=float)
    from crashdyn.kramers_moyal import CoefficientField

    return CoefficientField(
        binning=binning,
        t_axis=np.asarray(t_axis),
        drift=d1,
        diffusion=np.full((nt, nb), 0.01),
        potential=np.full((nt, nb), np.nan),
        supported=np.ones((nt, nb), dtype=bool),
    )


def test_zero_drift_gives_zero_potential():
    field = synthetic_field(BINNING, [0], lambda x, t: 0.0)
    out = reconstruct_potential(field)
    np.testing.assert_allclose(out.potential[0], 0.0, atol=1e-15)


def test_linear_drift_gives_quadratic_potential():
    theta = 0.5
    field = synthetic_field(BINNING, [0], lambda x, t: -theta * x)
    out = reconstruct_potential(field)
    centers = BINNING.centers
    ref = centers[BINNING.index_of(0.0)]
    # closed-form antiderivative; trapezoid is exact for a linear integrand
    expected = theta * (centers**2 - ref**2) / 2.0
    np.testing.assert_allclose(out.potential[0], expected, atol=1e-15)


def test_constant_drift_gives_linear_potential():
    c = 0.03
    field = synthetic_field(BINNING, [0], lambda x, t: c)
    out = reconstruct_potential(field)
    centers = BINNING.centers
    ref = centers[BINNING.index_of(0.0)]
    np.testing.assert_allclose(out.potential[0], -c * (centers - ref), atol=1e-15)


def test_unsupported_reference_bin_leaves_day_absent():
    field = synthetic_field(BINNING, [0, 1], lambda x, t: -x)
    mask = field.supported.copy()
    mask[1, BINNING.index_of(0.0)] = False
    from dataclasses import replace

    field = replace(field, supported=mask)
    out = reconstruct_potential(field)
    assert np.isfinite(out.potential[0]).all()
    assert np.isnan(out.potential[1]).all()


def test_potential_only_on_contiguous_run():
    field = synthetic_field(BINNING, [0], lambda x, t: -x)
    mask = field.supported.copy()
    mask[0, 3] = False  # break the run left of the reference bin
    from dataclasses import replace

    field = replace(field, supported=mask)
    out = reconstruct_potential(field)
    assert np.isnan(out.potential[0, :4]).all()
    assert np.isfinite(out.potential[0, 4:]).all()


def test_derivative_of_potential_recovers_drift():
    # criterion: central difference of the reconstructed potential matches the
    # negated drift within trapezoid tolerance, on OU and on model-drift fields
    ou = reconstruct_potential(ou_field())
    fields = [ou]
    t_axis = np.arange(1, 6)
    fields.append(
        reconstruct_potential(
            synthetic_field(BINNING, t_axis, lambda x, t: model_drift(OCT87_POTENTIAL, x, t))
        )
    )
    dx = BINNING.dx
    for field in fields:
        for row in range(len(field.t_axis)):
            u = field.potential[row]
            d1 = field.drift[row]
            ok = np.isfinite(u)
            idx = np.nonzero(ok)[0]
            if len(idx) < 3:
                continue
            inner = idx[1:-1]
            diff = (u[inner + 1] - u[inner - 1]) / (2 * dx)
            d1_grad = np.gradient(d1[idx], dx)
            bound = dx * np.max(np.abs(d1_grad)) + 1e-12
            assert np.all(np.abs(diff + d1[inner]) <= bound)


def test_translation_equivariance():
    c = 0.173
    spec = OuSpec(theta=0.5, D=0.01, n_assets=20_000, n_days=2, dt=1.0, seed=5)
    ens = generate_ou(spec)
    shifted = ReturnEnsemble(
        asset_ids=ens.asset_ids,
        t_axis=ens.t_axis,
        returns=ens.returns + c,
    )
    base = estimate_coefficients(ens, BINNING)
    # matched binning: the grid shifts with the data, so every sample lands in
    # the same relative bin and the profile is carried along exactly
    moved_binning = BinningSpec(BINNING.x_min + c, BINNING.x_max + c, BINNING.n_bins)
    moved = estimate_coefficients(shifted, moved_binning)
    np.testing.assert_array_equal(base.supported, moved.supported)
    ok = base.supported
    np.testing.assert_allclose(moved.drift[ok], base.drift[ok], atol=1e-12)
    np.testing.assert_allclose(moved.diffusion[ok], base.diffusion[ok], atol=1e-12)


def test_m2_dominates_m1_squared_on_random_ensembles():
    rng = np.random.default_rng(99)
    for _ in range(20):
        n = int(rng.integers(200, 2000))
        a = rng.normal(0.0, 0.1, n)
        b = 0.3 * a + rng.normal(0.0, 0.08, n)
        ens = ReturnEnsemble(
            asset_ids=tuple(f"a{i}" for i in range(n)),
            t_axis=np.array([0, 1]),
            returns=np.column_stack([a, b]),
        )
        field = estimate_coefficients(ens, BINNING)
        ok = field.supported[0]
        m1 = field.drift[0, ok]
        m2 = field.diffusion[0, ok] + 0.0  # tau = 1, so these are the raw moments
        assert np.all(m2 - m1**2 >= -1e-12)