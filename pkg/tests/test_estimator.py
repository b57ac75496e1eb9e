import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wickprop.chaos import WickFeatures, index_set, wick_features
from wickprop.errors import (ConditioningError, ConfigurationError, EmptyDataError, ParameterError,
                             RankDeficiencyError, ShapeError, UndefinedMetricError)
from wickprop.estimator import (FitConfig, SweepSpec, TimeDictionary, extrapolate_propagators, mc_projection,
                                relative_l2, ridge_fit, rmse_per_node, sensitivity_sweep)
from wickprop.noise import gaussian_coords, simulate_brownian
from wickprop.sde import AffineSdeModel, PropagatorTable, simulate_em_sde, solve_affine_propagators
from wickprop.spde import CoefficientField
from wickprop.timebasis import TimeGrid, make_basis, project_time_series, reconstruct_time_series

THETA, SIGMA = 2.0, 0.5
TOL = 0.05 * SIGMA / np.sqrt(THETA)


def ou_data(n_paths, seed=0, x0=0.0, J=4, n_steps=256, K=1):
    grid = TimeGrid(1.0, n_steps)
    basis = make_basis("trig", J, grid)
    iset = index_set(1, J, K)
    model = AffineSdeModel.ou(THETA, SIGMA, x0=x0)
    noise = simulate_brownian(n_paths, 1, grid, seed)
    feats = wick_features(gaussian_coords(noise, basis), iset)
    truth = solve_affine_propagators(model, basis, iset, grid)
    return grid, feats, simulate_em_sde(model, noise), truth


@pytest.fixture(scope="module")
def ou_5000():
    return ou_data(5000, seed=11)


def test_constant_trajectories_project_to_mean():
    grid, feats, X, _ = ou_data(400)
    c = 2.5
    tab = mc_projection(np.full_like(X, c), feats, grid)
    assert np.all(tab.values[0] == pytest.approx(c, abs=1e-15))
    assert np.abs(tab.values[1:]).max() <= 4 * abs(c) / np.sqrt(400)


def test_single_path_projection_is_biased(ou_5000):
    grid, feats, X, truth = ou_5000
    tab = mc_projection(X[:1], feats.subset([0]), grid)
    assert np.abs(tab.values - truth.values).max() > TOL


def test_mean_column_only_gives_pathwise_mean():
    grid, feats, X, _ = ou_data(50)
    only = WickFeatures(feats.values[:, :1], index_set(1, 4, 0))
    tab = mc_projection(X, only, grid)
    assert np.allclose(tab.values[0], X.mean(axis=0), rtol=0, atol=1e-15)


def test_mc_and_ridge_recover_analytic_ou(ou_5000):
    grid, feats, X, truth = ou_5000
    mc = mc_projection(X, feats, grid)
    ridge = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid)
    assert np.abs(mc.values - truth.values).max() <= TOL
    assert np.abs(ridge.values - truth.values).max() <= TOL
    # 4-sigma Monte Carlo band of the projection estimate, per node
    band = np.sqrt(np.mean((X[:, None] * feats.values[:, :, None, None]) ** 2, axis=0) / X.shape[0]).squeeze()
    assert np.all(np.abs(mc.values[:, 0] - ridge.values[:, 0]) <= 2 * 4 * band + 1e-15)


def test_exact_synthetic_recovery():
    rng = np.random.default_rng(3)
    grid = TimeGrid(1.0, 10)
    iset = index_set(1, 3, 2)
    feats = WickFeatures(rng.standard_normal((40, len(iset))), iset)
    U = rng.standard_normal((len(iset), 1, 11))
    X = np.einsum("ia,ask->isk", feats.values, U)
    tab = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid)
    assert np.abs(tab.values - U).max() <= 1e-8


def test_large_ridge_shrinks_to_zero():
    grid, feats, X, _ = ou_data(200)
    free = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid).values
    shrunk = ridge_fit(X, feats, FitConfig("ridge", 1e12), grid).values
    mask = free != 0
    assert np.all(np.abs(shrunk[mask]) <= 1e-6 * np.abs(free[mask]))


def test_rank_deficiency_suggests_ridge():
    grid, feats, X, _ = ou_data(3, K=2)
    with pytest.raises(RankDeficiencyError, match="ridge"):
        ridge_fit(X, feats, FitConfig("ridge", 0.0), grid)
    tab = ridge_fit(X, feats, FitConfig("ridge", 1e-3), grid)
    assert np.all(np.isfinite(tab.values))


def test_default_ridge_is_scale_aware():
    grid, feats, X, _ = ou_data(300)
    a = ridge_fit(X, feats, FitConfig("ridge"), grid).values
    b = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid).values
    assert np.abs(a - b).max() <= 1e-6


def test_fit_is_deterministic():
    grid, feats, X, _ = ou_data(300)
    cfg = FitConfig("ridge", 1e-6)
    assert np.array_equal(ridge_fit(X, feats, cfg, grid).values, ridge_fit(X, feats, cfg, grid).values)


def test_compressed_fit_equals_projected_fit():
    grid, feats, X, _ = ou_data(300)
    basis = make_basis("trig", 8, grid)
    full = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid).values
    comp = ridge_fit(X, feats, FitConfig("ridge", 0.0, compression=basis), grid).values
    assert np.allclose(comp, reconstruct_time_series(project_time_series(full, basis), basis), atol=1e-10)


def test_window_fraction_truncates():
    grid, feats, X, _ = ou_data(100)
    tab = ridge_fit(X, feats, FitConfig("ridge", 0.0, window_fraction=0.75), grid)
    assert tab.grid.n_steps == 192
    full = ridge_fit(X, feats, FitConfig("ridge", 0.0), grid)
    assert np.allclose(tab.values, full.values[:, :, :193], atol=1e-12)
    mc = ridge_fit(X, feats, FitConfig("mc_projection", window_fraction=0.5), grid)
    assert mc.values.shape[2] == 129


def test_spatial_fit_returns_field():
    rng = np.random.default_rng(0)
    grid = TimeGrid(0.05, 4)
    iset = index_set(2, 2, 1)
    feats = WickFeatures(rng.standard_normal((30, len(iset))), iset)
    U = rng.standard_normal((len(iset), 5, 8))
    cf = ridge_fit(np.einsum("ia,akx->ikx", feats.values, U), feats, FitConfig("ridge", 0.0), grid, spatial=True)
    assert isinstance(cf, CoefficientField)
    assert np.abs(cf.values - U).max() <= 1e-10


def test_fit_input_errors():
    grid, feats, X, _ = ou_data(10)
    with pytest.raises(ShapeError):
        ridge_fit(X[:5], feats, FitConfig(), grid)
    with pytest.raises(EmptyDataError):
        mc_projection(X[:0], feats.subset([]), grid)
    for bad in (dict(kind="nn"), dict(ridge=-1.0), dict(window_fraction=0.0), dict(window_fraction=1.5)):
        with pytest.raises(ConfigurationError):
            FitConfig(**bad)


def test_relative_l2_examples():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((5, 3, 7))
    assert relative_l2(truth, truth) == 0.0
    assert relative_l2(np.zeros_like(truth), truth) == pytest.approx(1.0, abs=1e-15)
    assert relative_l2(2 * truth, truth) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        relative_l2(truth, np.zeros_like(truth))
    with pytest.raises(ShapeError):
        relative_l2(truth[:, :2], truth)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 2.0, 4.0, 0.125]))
def test_relative_l2_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((4, 6)) + 0.1
    pred = rng.standard_normal((4, 6))
    assert relative_l2(c * pred, c * truth) == relative_l2(pred, truth)


def test_rmse_per_node():
    a = np.zeros((3, 1, 4))
    b = np.ones((3, 1, 4)) * np.arange(4)
    assert np.allclose(rmse_per_node(a, b), np.arange(4))


def test_constant_propagator_extrapolates_exactly():
    full = TimeGrid(1.0, 100)
    window = full.truncate(60)
    iset = index_set(1, 2, 1)
    tab = PropagatorTable(np.full((3, 1, 61), 0.7), iset, window)
    for dictionary in (TimeDictionary.polynomial(0), TimeDictionary.polynomial(2),
                       TimeDictionary((("poly", 0), ("exp", -1.0)))):
        out = extrapolate_propagators(tab, dictionary, full)
        assert out.values.shape == (3, 1, 101)
        assert np.abs(out.values - 0.7).max() <= 1e-10


def test_ou_mean_extrapolates_with_true_rate():
    full = TimeGrid(1.0, 1000)
    window = full.truncate(500)
    model = AffineSdeModel.ou(THETA, SIGMA, x0=1.0)
    tab = solve_affine_propagators(model, make_basis("trig", 2, window), index_set(1, 2, 1), window)
    out = extrapolate_propagators(tab, TimeDictionary((("exp", -THETA),)), full)
    beyond = full.times > window.horizon
    assert np.abs(out.values[0, 0, beyond] - np.exp(-THETA * full.times[beyond])).max() <= 1e-8


def test_ill_conditioned_dictionary():
    window = TimeGrid(0.01, 10)
    tab = PropagatorTable(np.zeros((1, 1, 11)), index_set(1, 1, 0), window)
    with pytest.raises(ConditioningError) as info:
        extrapolate_propagators(tab, TimeDictionary.polynomial(3), TimeGrid(1.0, 1000))
    assert info.value.condition_number > 1e8
    with pytest.raises(ConfigurationError):
        TimeDictionary((("poly", 5),))
    with pytest.raises(ConfigurationError):
        TimeDictionary(())


def sweep(model, axis, values, **kw):
    opts = dict(n_steps=256, n_time_modes=64, n_test=100, seed=2)
    opts.update(kw)
    spec = SweepSpec(model, **opts)
    return [r["relative_l2"] for r in sensitivity_sweep(spec, axis, values)]


def test_ou_sweep_over_time_modes_decreases():
    errs = sweep(AffineSdeModel.ou(THETA, SIGMA, x0=1.0, mu=1.0), "n_time_modes", [4, 16, 64])
    assert errs[0] > errs[1] > errs[2]


def test_ou_sweep_over_order_is_flat():
    errs = sweep(AffineSdeModel.ou(THETA, SIGMA, x0=1.0, mu=1.0), "max_order", [1, 2], n_time_modes=8)
    assert abs(errs[0] - errs[1]) <= 1e-12


def test_gbm_sweep_over_order_decreases():
    errs = sweep(AffineSdeModel.gbm(0.05, 0.5), "max_order", [1, 2, 4], n_time_modes=4, basis_kind="trig")
    assert errs[0] > errs[1] > errs[2]


def test_sweep_rows_and_validation():
    spec = SweepSpec(AffineSdeModel.gbm(0.05, 0.2), n_steps=64, n_time_modes=4, n_test=20)
    rows = sensitivity_sweep(spec, "n_paths", [50, 100])
    assert [r["value"] for r in rows] == [50, 100]
    assert set(rows[0]) == {"axis", "value", "relative_l2", "wall_time"}
    with pytest.raises(ParameterError):
        sensitivity_sweep(spec, "n_time_modes", [8, 4])
    with pytest.raises(ParameterError):
        sensitivity_sweep(spec, "dt", [1])
