import math

import numpy as np
import pytest

from crashdyn.errors import DataError, SimulationError
from crashdyn.simulate import (
    SimConfig,
    daily_returns,
    drift,
    euler_maruyama_ensemble,
    euler_maruyama_path,
    simulate_index,
    simulate_trajectory,
)
from crashdyn.surfaces import (
    OCT87_DIFFUSION,
    OCT87_POTENTIAL,
    PotentialParams,
    eval_potential,
)

ZERO_DRIFT = lambda x, t: 0.0 * x  # noqa: E731
ZERO_DIFF = lambda x, t: 0.0 * x  # noqa: E731


def test_config_validation():
    with pytest.raises(DataError):
        SimConfig(t_start=5.0, t_end=5.0)
    with pytest.raises(DataError):
        SimConfig(t_end=25.3)
    with pytest.raises(DataError):
        SimConfig(substeps_per_day=0)
    with pytest.raises(DataError):
        SimConfig(decline_threshold=1.5)
    with pytest.raises(DataError):
        SimConfig(s0=0.0)


def test_zero_dynamics_stays_put():
    config = SimConfig(t_end=5.0, substeps_per_day=10, x0=0.02, s0=2.0)
    traj = euler_maruyama_path(ZERO_DRIFT, ZERO_DIFF, config, rng=0)
    np.testing.assert_array_equal(traj.x, np.full(6, 0.02))
    np.testing.assert_array_equal(traj.s, np.full(6, 2.0))


def test_same_seed_gives_identical_trajectories():
    config = SimConfig(t_end=10.0, substeps_per_day=20, seed=7)
    a = simulate_trajectory(OCT87_POTENTIAL, OCT87_DIFFUSION, config, rng=7)
    b = simulate_trajectory(OCT87_POTENTIAL, OCT87_DIFFUSION, config, rng=7)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.s, b.s)


def test_index_path_positive_and_consistent():
    config = SimConfig(t_end=25.0, substeps_per_day=20)
    traj = simulate_trajectory(OCT87_POTENTIAL, OCT87_DIFFUSION, config, rng=3)
    assert np.all(traj.s > 0)
    # the index is the exponential of the state relative to its start
    np.testing.assert_allclose(traj.s, np.exp(traj.x - traj.x[0]), rtol=1e-12)
    # and the daily returns telescope back to the state increments
    np.testing.assert_allclose(
        np.log(traj.s[1:] / traj.s[:-1]), daily_returns(traj.x), rtol=1e-10, atol=1e-12
    )


def test_diverging_path_raises_diagnostic():
    config = SimConfig(t_end=2.0, substeps_per_day=5)
    exploding = lambda x, t: 1e308 * (1.0 + 0.0 * x)  # noqa: E731
    with pytest.raises(SimulationError, match="diverged"):
        euler_maruyama_path(exploding, ZERO_DIFF, config, rng=0)


def test_negative_diffusion_rejected():
    config = SimConfig(t_end=1.0, substeps_per_day=4)
    with pytest.raises(SimulationError, match="negative diffusion"):
        euler_maruyama_path(ZERO_DRIFT, lambda x, t: -1.0, config, rng=0)


def test_drift_is_negated_gradient():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = float(rng.uniform(-0.3, 0.3))
        t = float(rng.uniform(0, 25))
        h = 1e-6
        fd = (
            eval_potential(OCT87_POTENTIAL, x + h, t)
            - eval_potential(OCT87_POTENTIAL, x - h, t)
        ) / (2 * h)
        assert drift(OCT87_POTENTIAL, x, t) == pytest.approx(-fd, rel=1e-5, abs=1e-10)


def test_flat_potential_gives_zero_drift():
    params = PotentialParams(
        A=0.0, B=0.0, omega=3.9, omega1=1.0, alpha=0.6,
        beta1=0.5, beta2=0.1, a=0.96, b=2.5, gamma=0.9,
    )
    xs = np.linspace(-0.5, 0.5, 11)
    np.testing.assert_allclose(drift(params, xs, 3.0), 0.0, atol=1e-18)


def test_ou_stationary_variance():
    # constant-coefficient mean-reverting dynamics against the closed form
    theta, c = 1.0, 0.02
    config = SimConfig(t_end=12.0, substeps_per_day=25, seed=11, x0=0.0)
    daily, ok = euler_maruyama_ensemble(
        lambda x, t: -theta * x, lambda x, t: c, config, n_paths=10_000
    )
    assert ok.all()
    final = daily[:, -1]
    target = c / (2 * theta)
    assert abs(float(np.var(final)) - target) < 0.1 * target


def test_strong_convergence_rate_near_one():
    # additive-noise scheme order measured against a fine-step reference on
    # shared Wiener increments
    theta, c = 0.8, 0.04
    T = 4.0
    n_paths = 300
    fine = 512  # steps over T
    rng = np.random.default_rng(17)
    dw_fine = rng.normal(0.0, math.sqrt(T / fine), (n_paths, fine))

    def euler_at(level):
        # level: number of fine steps summed into one coarse step
        steps = fine // level
        dt = T * level / fine
        dw = dw_fine.reshape(n_paths, steps, level).sum(axis=2)
        x = np.zeros(n_paths)
        x[:] = 0.1
        for k in range(steps):
            x = x - theta * x * dt + math.sqrt(c) * dw[:, k]
        return x

    reference = euler_at(1)
    levels = [16, 32, 64, 128]
    errors = [float(np.mean(np.abs(euler_at(lv) - reference))) for lv in levels]
    hs = [T * lv / fine for lv in levels]
    rate = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert 0.4 <= rate <= 1.2


def test_acceptance_filter_vacuous_at_zero_threshold():
    config = SimConfig(
        t_end=3.0, substeps_per_day=5, n_accepted_target=20, max_attempts=20,
        decline_threshold=0.0, seed=5,
    )
    result = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config)
    assert result.n_accepted == 20
    assert result.acceptance_rate == 1.0


def test_deterministic_limit_without_noise():
    config = SimConfig(
        t_end=5.0, substeps_per_day=20, n_accepted_target=3, max_attempts=3,
        decline_threshold=0.0, diffusion_scale=0.0, seed=1,
    )
    result = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config)
    # without noise every trajectory is the same drift-only path
    np.testing.assert_array_equal(result.accepted_x[0], result.accepted_x[1])
    np.testing.assert_array_equal(result.accepted_x[0], result.accepted_x[2])


def test_partial_result_flagged_when_attempts_run_out():
    config = SimConfig(
        t_end=3.0, substeps_per_day=10, n_accepted_target=500, max_attempts=40,
        decline_threshold=0.05, seed=2,
    )
    result = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config)
    assert result.partial
    assert 0 < result.n_accepted < 500
    assert result.n_attempted == 40


def test_simulate_index_rerun_is_bitwise_identical():
    config = SimConfig(
        t_end=8.0, substeps_per_day=10, n_accepted_target=12, max_attempts=4000, seed=9,
    )
    a = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config)
    b = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config)
    np.testing.assert_array_equal(a.s_mean, b.s_mean)
    assert a.fit_report == b.fit_report


def test_batch_size_does_not_change_accepted_set():
    config = SimConfig(
        t_end=6.0, substeps_per_day=10, n_accepted_target=10, max_attempts=4000, seed=13,
    )
    a = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config, batch_size=64)
    b = simulate_index(OCT87_POTENTIAL, OCT87_DIFFUSION, config, batch_size=1024)
    np.testing.assert_array_equal(a.accepted_x, b.accepted_x)
    np.testing.assert_array_equal(a.s_mean, b.s_mean)
