import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wickprop.enkf import (Ensemble, EnkfConfig, analysis, enkf_step, forecast, kalman_gain, prior_ensemble,
                           run_enkf, simulate_ou_observations)
from wickprop.errors import ConfigurationError, DegenerateEnsembleError, NumericalError, ParameterError

TRUTH = (4.0, 1.0, 0.05)


def test_identical_members_stay_put():
    ens = Ensemble(np.tile([[2.0], [0.5], [0.1]], (1, 10)))
    out = enkf_step(ens, 0.7, 0.3, 0.01, 1e-3, seed=0, step=0)
    assert np.array_equal(out.members, ens.members)


def test_parameter_free_forecast_gives_no_update():
    rng = np.random.default_rng(0)
    members = rng.random((3, 50))
    members[2] = 0.0
    ens = Ensemble(members)
    pred = forecast(ens, 0.4, 0.0, seed=1, step=3)
    assert np.all(pred == 0.4)
    out = enkf_step(ens, 0.9, 0.4, 0.0, 1e-3, seed=1, step=3)
    assert np.abs(out.members - ens.members).max() <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 60), st.floats(-3, 3), st.floats(1e-6, 1.0))
def test_analysis_never_increases_spread(seed, l, obs, r):
    rng = np.random.default_rng(seed)
    ens = Ensemble(rng.normal(size=(3, l)) * [[2.0], [1.0], [0.2]])
    pred = rng.normal(size=l)
    out, _ = analysis(ens, pred, obs, r)
    assert out.cov_trace() <= ens.cov_trace() * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2))
def test_mean_shift_lies_along_gain(seed, obs):
    rng = np.random.default_rng(seed)
    ens = Ensemble(rng.random((3, 40)))
    pred = rng.normal(size=40)
    out, K = analysis(ens, pred, obs, 1e-3)
    shift = out.mean - ens.mean
    assert np.allclose(shift, K[:, 0] * (obs - pred.mean()), atol=1e-12)


def test_gain_scaling():
    A_z = np.array([[1.0, -1.0], [0.5, -0.5], [0.0, 0.0]])
    A_x = np.array([[2.0, -2.0]])
    K = kalman_gain(A_z, A_x, 1e-3)
    assert np.allclose(K[:, 0], np.array([4.0, 2.0, 0.0]) / (8.0 + 1e-3))


def test_non_finite_gain():
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        kalman_gain(np.ones((3, 2)), np.array([[np.nan, 1.0]]), 1e-3)


def test_degenerate_and_invalid_inputs():
    with pytest.raises(DegenerateEnsembleError):
        Ensemble(np.zeros((3, 1)))
    with pytest.raises(ParameterError):
        Ensemble(np.zeros((2, 5)))
    with pytest.raises(NumericalError):
        Ensemble(np.full((3, 4), np.nan))
    for bad in (dict(obs_noise=0.0), dict(theta_prior=(5.0, 0.0)), dict(n_members=1), dict(tail=0),
                dict(tail=400)):
        with pytest.raises(ConfigurationError):
            EnkfConfig(**bad)
    with pytest.raises(ParameterError):
        run_enkf(np.zeros(10), EnkfConfig(n_steps=20))


def test_prior_respects_bounds():
    ens = prior_ensemble(EnkfConfig(seed=3))
    lo = np.array([0.0, -3.0, 0.0])[:, None]
    hi = np.array([5.0, 3.0, 0.5])[:, None]
    assert ens.size == 250
    assert np.all((ens.members >= lo) & (ens.members <= hi))


def observations(seed, n_steps=300):
    return simulate_ou_observations(*TRUTH, x0=0.0, dt=0.01, n_steps=n_steps, seed=seed)


def test_trace_non_increasing_over_run():
    res = run_enkf(observations(0), EnkfConfig(seed=0))
    assert res.cov_traces.shape == (301,)
    assert res.monotone_trace
    assert np.all(np.diff(res.cov_traces) <= 1e-12 * res.cov_traces[:-1])


def test_same_seed_is_bit_identical():
    a = run_enkf(observations(2), EnkfConfig(seed=2))
    b = run_enkf(observations(2), EnkfConfig(seed=2))
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.cov_traces, b.cov_traces)


def test_recovers_theta_and_mu():
    est = np.array([run_enkf(observations(s), EnkfConfig(seed=s)).estimate for s in range(5)])
    theta, mu, _ = np.median(est, axis=0)
    assert abs(theta - 4.0) <= 0.8
    assert abs(mu - 1.0) <= 0.2


def test_tail_average():
    cfg = EnkfConfig(seed=1, n_steps=50, tail=5)
    res = run_enkf(observations(1, 50), cfg)
    assert np.array_equal(res.estimate, res.means[-5:].mean(axis=0))


def test_deterministic_forecast_flag():
    ens = prior_ensemble(EnkfConfig())
    a = forecast(ens, 0.5, 0.01, seed=0, step=0, stochastic=False)
    theta, mu, _ = ens.members
    assert np.allclose(a, 0.5 + theta * (mu - 0.5) * 0.01)
