import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import quad
from wickprop.chaos import ChaosIndexSet, MultiIndex, index_set, wick_features
from wickprop.errors import BlowupError, ConfigurationError, ParameterError, ShapeError, StructuralError
from wickprop.estimator import relative_l2
from wickprop.noise import NoiseBatch, gaussian_coords, simulate_brownian
from wickprop.sde import (AffineSdeModel, CallbackSdeModel, HestonModel, PropagatorTable, WickDriftSdeModel,
                          reconstruct_paths, simulate_em_sde, solve_affine_propagators, solve_wick_drift_propagators)
from wickprop.timebasis import TimeGrid, make_basis

GRID = TimeGrid(1.0, 1000)
OU = AffineSdeModel.ou(theta=2.0, sigma=0.5, x0=1.0)


def ou_table(kind="trig", J=4, K=1, grid=GRID, model=OU, **kw):
    return solve_affine_propagators(model, make_basis(kind, J, grid), index_set(1, J, K), grid, **kw)


def test_ou_mean_propagator_is_exponential_decay():
    tab = ou_table()
    err = np.abs(tab.values[0, 0] - np.exp(-2.0 * GRID.times)).max()
    assert err <= 1e-8


def test_ou_constant_mode_matches_duhamel_quadrature():
    tab = ou_table()
    theta, sigma = 2.0, 0.5
    for k in (100, 400, 1000):
        t = GRID.times[k]
        ref = sigma * quad(lambda s: np.exp(-theta * (t - s)), 0.0, t)
        assert abs(tab.values[1, 0, k] - ref) <= 1e-6
    closed = sigma * (1 - np.exp(-theta * GRID.times)) / theta
    assert np.abs(tab.values[1, 0] - closed).max() <= 1e-6


def test_ou_higher_degrees_vanish():
    tab = ou_table(K=3)
    high = tab.index_set.degrees >= 2
    assert np.abs(tab.values[high]).max() <= 1e-12


def test_initial_condition_is_exact():
    cases = ((ou_table(K=2), 1.0), (ou_table("haar", 8, 2, TimeGrid(1.0, 64), AffineSdeModel.gbm(0.05, 0.2, 1.5)), 1.5))
    for tab, x0 in cases:
        assert tab.values[0, 0, 0] == x0
        assert np.all(tab.values[1:, :, 0] == 0.0)


def test_ou_variance_identity_at_64_haar_modes():
    grid = TimeGrid(1.0, 1024)
    tab = ou_table("haar", 64, 1, grid)
    theta, sigma = 2.0, 0.5
    target = sigma**2 * (1 - np.exp(-2 * theta)) / (2 * theta)
    total = np.sum(tab.values[tab.index_set.degrees == 1, 0, -1] ** 2)
    assert abs(total - target) <= 0.02 * target


def gbm_second_moment_gap(K):
    grid = TimeGrid(1.0, 256)
    tab = solve_affine_propagators(AffineSdeModel.gbm(0.05, 0.2), make_basis("trig", 4, grid), index_set(1, 4, K), grid)
    exact = np.exp(2 * 0.05 + 0.2**2)
    return abs(np.sum(tab.values[:, 0, -1] ** 2) - exact) / exact


def test_gbm_second_moment_converges_in_order():
    gaps = [gbm_second_moment_gap(K) for K in (1, 2, 4)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.05


def test_gbm_degree_norms_decay():
    grid = TimeGrid(1.0, 256)
    tab = solve_affine_propagators(AffineSdeModel.gbm(0.05, 0.2), make_basis("trig", 4, grid), index_set(1, 4, 4), grid)
    norms = tab.degree_sup_norms()
    assert np.all(np.diff(norms[1:5]) < 0)


@pytest.mark.parametrize("model", [OU, AffineSdeModel.gbm(0.05, 0.2), AffineSdeModel(0.3, 0.1, -0.5, 0.2, 0.1)])
def test_graded_and_joint_solves_agree(model):
    grid = TimeGrid(1.0, 128)
    basis = make_basis("haar", 8, grid)
    iset = index_set(1, 8, 3)
    g = solve_affine_propagators(model, basis, iset, grid, order="graded").values
    j = solve_affine_propagators(model, basis, iset, grid, order="joint").values
    assert np.abs(g - j).max() <= 1e-12


def test_unknown_solve_order():
    with pytest.raises(ParameterError):
        ou_table(order="random")


def test_index_set_not_closed_is_structural():
    iset = ChaosIndexSet(1, 2, 2, [MultiIndex(), MultiIndex((((0, 0), 2),))])
    with pytest.raises(StructuralError):
        solve_affine_propagators(OU, make_basis("trig", 2, GRID), iset, GRID)


def test_setup_mismatches():
    with pytest.raises(ConfigurationError):
        solve_affine_propagators(OU, make_basis("trig", 2, GRID), index_set(1, 4, 1), GRID)
    with pytest.raises(ConfigurationError):
        solve_affine_propagators(OU, make_basis("trig", 4, GRID), index_set(2, 4, 1), GRID)
    with pytest.raises(ConfigurationError):
        solve_affine_propagators(OU, make_basis("trig", 4, TimeGrid(2.0, 1000)), index_set(1, 4, 1), GRID)


def test_non_finite_coefficients_rejected():
    with pytest.raises(ParameterError):
        AffineSdeModel(1.0, a=np.inf)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_propagator_blowup_names_step():
    grid = TimeGrid(1.0, 10)
    with pytest.raises(BlowupError) as info:
        solve_wick_drift_propagators(WickDriftSdeModel(2.0, (0.0, 0.0, 1e200)), make_basis("trig", 1, grid),
                                     index_set(1, 1, 2), grid, substeps=1)
    assert info.value.step == 0


def test_linear_wick_drift_reduces_to_affine():
    model = AffineSdeModel.ou(theta=2.0, sigma=0.5, x0=1.0, mu=0.7)
    wick = WickDriftSdeModel(x0=1.0, drift_coeffs=(model.a, model.b), sigma=0.5)
    basis = make_basis("trig", 4, GRID)
    iset = index_set(1, 4, 2)
    u_aff = solve_affine_propagators(model, basis, iset, GRID).values
    u_wick = solve_wick_drift_propagators(wick, basis, iset, GRID).values
    assert np.abs(u_aff - u_wick).max() <= 1e-10


def scalar_rk4(f, x0, T, n):
    h = T / n
    x = x0
    out = [x]
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x)
    return np.array(out)


def test_noiseless_wick_drift_is_deterministic_ode():
    coeffs = (1.0, -1.0, -0.5, 0.1)
    grid = TimeGrid(1.0, 100)
    tab = solve_wick_drift_propagators(WickDriftSdeModel(0.2, coeffs, 0.0), make_basis("trig", 3, grid),
                                       index_set(1, 3, 3), grid, substeps=4)
    assert np.all(tab.values[1:] == 0.0)
    ref = scalar_rk4(lambda x: sum(c * x**p for p, c in enumerate(coeffs)), 0.2, 1.0, 800)[::8]
    assert np.abs(tab.values[0, 0] - ref).max() <= 1e-8


def test_zero_drift_gives_integrated_basis():
    grid = TimeGrid(1.0, 64)
    basis = make_basis("haar", 8, grid)
    iset = index_set(1, 8, 2)
    tab = solve_wick_drift_propagators(WickDriftSdeModel(0.0, (0.0,), 0.3), basis, iset, grid)
    for j in range(8):
        row = iset.index_of(MultiIndex.unit(0, j))
        assert np.abs(tab.values[row, 0] - 0.3 * basis.G[j]).max() <= 1e-12
    assert np.all(tab.values[iset.degrees == 2] == 0.0)


def test_wick_drift_order_above_index_set():
    with pytest.raises(ParameterError):
        solve_wick_drift_propagators(WickDriftSdeModel(0.0, (0.0, 0.0, 0.0, 1.0), 0.1), make_basis("trig", 2, GRID),
                                     index_set(1, 2, 2), GRID)


def test_wick_drift_step_halving():
    grid = TimeGrid(1.0, 100)
    model = WickDriftSdeModel(0.5, (0.0, 1.0, 0.0, -1.0), 0.4)
    basis = make_basis("trig", 3, grid)
    iset = index_set(1, 3, 3)
    coarse = solve_wick_drift_propagators(model, basis, iset, grid, substeps=4).values
    fine = solve_wick_drift_propagators(model, basis, iset, grid, substeps=8).values
    assert np.abs(coarse - fine).max() <= 1e-8


def features_for(iset, n_paths, grid, basis, seed=0):
    noise = simulate_brownian(n_paths, 1, grid, seed)
    return noise, wick_features(gaussian_coords(noise, basis), iset)


def test_mean_only_reconstruction():
    tab = ou_table(K=0)
    _, feats = features_for(tab.index_set, 5, GRID, make_basis("trig", 4, GRID))
    paths = reconstruct_paths(tab, feats)
    assert paths.shape == (5, 1, GRID.n_steps + 1)
    assert np.all(paths == tab.values[0, 0])


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_reconstruction_is_linear_in_fluctuations(lam):
    grid = TimeGrid(1.0, 64)
    basis = make_basis("haar", 4, grid)
    tab = solve_affine_propagators(OU, basis, index_set(1, 4, 1), grid)
    _, feats = features_for(tab.index_set, 6, grid, basis)
    base = reconstruct_paths(tab, feats) - tab.values[0, 0]
    scaled = reconstruct_paths(tab, feats.scaled(lam)) - tab.values[0, 0]
    assert np.allclose(scaled, lam * base, atol=1e-12)


def test_reconstruction_index_mismatch():
    tab = ou_table(K=1)
    _, feats = features_for(index_set(1, 4, 2), 3, GRID, make_basis("trig", 4, GRID))
    with pytest.raises(ShapeError):
        reconstruct_paths(tab, feats)


def test_ou_reconstruction_tracks_euler_maruyama():
    grid = TimeGrid(1.0, 1024)
    basis = make_basis("haar", 64, grid)
    model = AffineSdeModel.ou(theta=2.0, sigma=0.5, x0=1.0, mu=1.0)
    tab = solve_affine_propagators(model, basis, index_set(1, 64, 1), grid)
    noise, feats = features_for(tab.index_set, 200, grid, basis, seed=3)
    err = relative_l2(reconstruct_paths(tab, feats), simulate_em_sde(model, noise))
    assert err <= 0.05


def zero_noise(n_paths, d, grid):
    return NoiseBatch(np.zeros((n_paths, d, grid.n_steps)), grid)


def test_em_zero_noise_ou_within_euler_bound():
    theta, T = 2.0, 1.0
    x = simulate_em_sde(OU, zero_noise(2, 1, GRID))
    assert np.abs(x[:, 0] - np.exp(-theta * GRID.times)).max() <= 2 * theta**2 * 1.0 * GRID.dt * T


def test_em_zero_noise_gbm():
    x = simulate_em_sde(AffineSdeModel.gbm(0.05, 0.2, 2.0), zero_noise(1, 1, GRID))
    assert np.abs(x[0, 0] - 2.0 * np.exp(0.05 * GRID.times)).max() <= 2 * 0.05**2 * 2.0 * GRID.dt * np.e


def test_heston_frozen_variance():
    grid = TimeGrid(1.0, 100)
    noise = simulate_brownian(4, 2, grid, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = HestonModel(mu=0.05, kappa=0.0, theta_v=0.04, zeta=0.0, rho=1.0, s0=1.0, v0=0.09)
    x = simulate_em_sde(model, noise)
    assert np.all(x[:, 1] == 0.09)
    assert np.all(x[:, 0] > 0)


def test_heston_feller_warning_only():
    with pytest.warns(RuntimeWarning, match="Feller"):
        m = HestonModel(mu=0.0, kappa=1.0, theta_v=0.01, zeta=1.0, rho=0.0)
    assert not m.feller_satisfied()
    with pytest.raises(ParameterError):
        HestonModel(mu=0.0, kappa=1.0, theta_v=0.04, zeta=0.1, rho=1.5)


def test_em_callback_and_shape_checks():
    grid = TimeGrid(1.0, 50)
    noise = simulate_brownian(3, 2, grid, seed=0)
    model = CallbackSdeModel((1.0, 2.0), lambda t, x: -x, lambda t, x: 0.1 * np.ones_like(x))
    x = simulate_em_sde(model, noise)
    assert x.shape == (3, 2, 51)
    with pytest.raises(ShapeError):
        simulate_em_sde(OU, noise)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_em_blowup_names_step():
    grid = TimeGrid(1.0, 50)
    model = CallbackSdeModel((1.0,), lambda t, x: 1e300 * x * x, lambda t, x: 0.0 * x)
    with pytest.raises(BlowupError) as info:
        simulate_em_sde(model, zero_noise(1, 1, grid))
    assert 1 <= info.value.step <= 50


def test_em_thread_invariance():
    grid = TimeGrid(1.0, 200)
    noise = simulate_brownian(50, 1, grid, seed=5)
    assert np.array_equal(simulate_em_sde(OU, noise, threads=1), simulate_em_sde(OU, noise, threads=4))


def test_propagator_csv(tmp_path):
    grid = TimeGrid(1.0, 4)
    tab = ou_table(J=2, grid=grid)
    path = tab.to_csv(tmp_path / "u.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["alpha_id", "state_component", "t", "value"]
    assert len(rows) == 1 + 3 * 5
    assert float(rows[1][3]) == 1.0


def test_table_shape_checked():
    with pytest.raises(ShapeError):
        PropagatorTable(np.zeros((2, 1, 5)), index_set(1, 2, 1), TimeGrid(1.0, 4))
