"""Model-free propagator estimation from trajectory data.

Solutions are linear in the Wick features with deterministic coefficients,
so propagators are estimated by linear methods: the Monte Carlo projection
``E[X_t xi_alpha]`` or ridge regression of trajectories on the features.
Also holds the relative L2 metric, dictionary extrapolation of fitted
propagators in time, and parameter sweeps.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .chaos import WickFeatures, index_set, wick_features
from .errors import (ConditioningError, ConfigurationError, EmptyDataError, ParameterError,
                     RankDeficiencyError, ShapeError, UndefinedMetricError)
from .noise import gaussian_coords, simulate_brownian
from .sde import AffineSdeModel, PropagatorTable, reconstruct_paths, simulate_em_sde, solve_affine_propagators
from .spde import CoefficientField
from .timebasis import BasisSet, TimeGrid, make_basis, project_time_series, reconstruct_time_series

ESTIMATOR_KINDS = ("mc_projection", "ridge")
RIDGE_FLOOR = 1e-8


@dataclass(frozen=True)
class FitConfig:
    kind: str = "ridge"
    ridge: float | None = None
    compression: BasisSet | None = None
    window_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator {self.kind!r}")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigurationError("ridge strength must be >= 0")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ConfigurationError("window fraction must lie in (0, 1]")


def _wrap(values: np.ndarray, features: WickFeatures, grid: TimeGrid, spatial: bool):
    if spatial:
        return CoefficientField(values, features.index_set, grid)
    return PropagatorTable(values, features.index_set, grid)


def _time_axis(spatial: bool) -> int:
    # trajectories are (N, d, n_t) for SDEs and (N, n_t, n_x) for SPDEs
    return 1 if spatial else 2


def _window(trajectories: np.ndarray, grid: TimeGrid, fraction: float, spatial: bool):
    if fraction >= 1.0:
        return trajectories, grid
    n = max(1, int(round(fraction * grid.n_steps)))
    sub = grid.truncate(n)
    sl = [slice(None)] * trajectories.ndim
    sl[_time_axis(spatial)] = slice(0, n + 1)
    return trajectories[tuple(sl)], sub


def _check_paths(trajectories, features):
    trajectories = np.asarray(trajectories, dtype=float)
    if trajectories.shape[0] == 0 or features.n_paths == 0:
        raise EmptyDataError("no trajectories to fit")
    if trajectories.shape[0] != features.n_paths:
        raise ShapeError(f"{trajectories.shape[0]} trajectories but {features.n_paths} feature rows")
    return trajectories


def mc_projection(trajectories, features: WickFeatures, grid: TimeGrid, spatial: bool = False):
    """u_alpha(t) ~ (1/N) sum_i X^(i)(t) xi_alpha^(i)."""
    X = _check_paths(trajectories, features)
    n = X.shape[0]
    values = np.tensordot(features.values, X, axes=(0, 0)) / n
    return _wrap(values, features, grid, spatial)


def default_ridge(gram: np.ndarray) -> float:
    return RIDGE_FLOOR * float(np.mean(np.diag(gram)))


def solve_normal_equations(design: np.ndarray, targets: np.ndarray, ridge: float | None) -> np.ndarray:
    """Solve (Phi^T Phi + lam I) U = Phi^T X with a Cholesky factorization."""
    gram = design.T @ design
    lam = default_ridge(gram) if ridge is None else float(ridge)
    rhs = design.T @ targets
    a = gram + lam * np.eye(gram.shape[0])
    if lam == 0.0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise RankDeficiencyError(
                f"normal equations are singular (condition number {cond:.3e}); use a ridge strength > 0"
            )
    try:
        factor = la.cho_factor(a, lower=True, check_finite=True)
    except la.LinAlgError as exc:
        raise RankDeficiencyError(f"normal equations not positive definite ({exc}); use a ridge strength > 0") from None
    return la.cho_solve(factor, rhs)


def ridge_fit(trajectories, features: WickFeatures, config: FitConfig, grid: TimeGrid, spatial: bool = False):
    """Per-node (or per temporal coefficient) ridge regression onto the features.

    With ``config.compression`` set, trajectories are first projected onto
    that temporal basis, the coefficients are regressed, and the fitted
    propagators are rebuilt on the grid.  ``window_fraction < 1`` restricts
    the fit to the leading part of the grid; the returned table then lives
    on the truncated grid.
    """
    X = _check_paths(trajectories, features)
    X, grid = _window(X, grid, config.window_fraction, spatial)
    if config.kind == "mc_projection":
        return mc_projection(X, features, grid, spatial)
    n = X.shape[0]
    tax = _time_axis(spatial)
    basis = config.compression
    if basis is not None:
        if basis.grid.n_steps != grid.n_steps:
            raise ShapeError("compression basis grid does not match the fitting window")
        moved = np.moveaxis(X, tax, -1)
        coeffs = project_time_series(moved, basis)
        U = solve_normal_equations(features.values, coeffs.reshape(n, -1), config.ridge)
        U = U.reshape((-1,) + coeffs.shape[1:])
        values = np.moveaxis(reconstruct_time_series(U, basis), -1, tax)
    else:
        U = solve_normal_equations(features.values, X.reshape(n, -1), config.ridge)
        values = U.reshape((-1,) + X.shape[1:])
    return _wrap(values, features, grid, spatial)


def relative_l2(predicted, truth) -> float:
    """Mean over paths of ||pred - truth|| / ||truth|| (norm over all non-path axes)."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ShapeError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    n = truth.shape[0]
    denom = np.linalg.norm(truth.reshape(n, -1), axis=1)
    if np.any(denom == 0):
        raise UndefinedMetricError("relative L2 error undefined for a zero-norm reference")
    return float(np.mean(np.linalg.norm((predicted - truth).reshape(n, -1), axis=1) / denom))


def rmse_per_node(predicted, truth, time_axis: int = -1) -> np.ndarray:
    """Root mean square error at each time node (averaged over every other axis)."""
    diff = np.moveaxis(np.asarray(predicted) - np.asarray(truth), time_axis, -1)
    return np.sqrt(np.mean(diff.reshape(-1, diff.shape[-1]) ** 2, axis=0))


@dataclass(frozen=True)
class TimeDictionary:
    """Atoms ``("poly", p)`` for t^p (p <= 3) and ``("exp", c)`` for exp(c t)."""

    atoms: tuple
    max_condition: float = 1e8

    def __post_init__(self):
        if not self.atoms:
            raise ConfigurationError("time dictionary needs at least one atom")
        for kind, par in self.atoms:
            if kind == "poly" and par not in (0, 1, 2, 3):
                raise ConfigurationError(f"monomial degree must be 0..3, got {par}")
            if kind not in ("poly", "exp"):
                raise ConfigurationError(f"unknown atom kind {kind!r}")

    @classmethod
    def polynomial(cls, degree: int) -> "TimeDictionary":
        return cls(tuple(("poly", p) for p in range(degree + 1)))

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.array([t**p if kind == "poly" else np.exp(p * t) for kind, p in self.atoms])

    def condition(self, t) -> float:
        A = self.evaluate(t)
        return float(np.linalg.cond(A @ A.T))


def extrapolate_propagators(table, dictionary: TimeDictionary, full_grid: TimeGrid):
    """Fit each tabulated propagator onto the dictionary over its own grid
    (the training window) and evaluate the fit on ``full_grid``."""
    window_t = table.grid.times
    cond = dictionary.condition(window_t)
    if not np.isfinite(cond) or cond > dictionary.max_condition:
        raise ConditioningError(cond)
    spatial = isinstance(table, CoefficientField)
    tax = 1 if spatial else 2
    vals = np.moveaxis(table.values, tax, -1)
    flat = vals.reshape(-1, vals.shape[-1])
    A = dictionary.evaluate(window_t).T
    coef, *_ = np.linalg.lstsq(A, flat.T, rcond=None)
    full = (dictionary.evaluate(full_grid.times).T @ coef).T.reshape(vals.shape[:-1] + (full_grid.n_steps + 1,))
    full = np.moveaxis(full, -1, tax)
    if spatial:
        return CoefficientField(full, table.index_set, full_grid)
    return PropagatorTable(full, table.index_set, full_grid)


# --- sensitivity sweeps -----------------------------------------------------

SWEEP_AXES = ("n_time_modes", "max_order", "n_paths")


@dataclass(frozen=True)
class SweepSpec:
    """Scalar affine SDE experiment evaluated against Euler-Maruyama on shared noise.

    ``method="solver"`` builds propagators from the ODE system;
    ``method="ridge"`` estimates them from ``n_paths`` training paths and
    scores on ``n_test`` fresh paths.
    """

    model: AffineSdeModel
    horizon: float = 1.0
    n_steps: int = 1024
    basis_kind: str = "haar"
    n_time_modes: int = 64
    max_order: int = 1
    n_paths: int = 200
    n_test: int = 200
    seed: int = 0
    method: str = "solver"
    ridge: float | None = None
    extra: dict = field(default_factory=dict)


def evaluate_sweep_point(spec: SweepSpec) -> float:
    grid = TimeGrid(spec.horizon, spec.n_steps)
    basis = make_basis(spec.basis_kind, spec.n_time_modes, grid)
    iset = index_set(1, spec.n_time_modes, spec.max_order)
    if spec.method == "solver":
        noise = simulate_brownian(spec.n_test, 1, grid, spec.seed)
        table = solve_affine_propagators(spec.model, basis, iset, grid)
        pred = reconstruct_paths(table, wick_features(gaussian_coords(noise, basis), iset))
        return relative_l2(pred, simulate_em_sde(spec.model, noise))
    if spec.method == "ridge":
        train = simulate_brownian(spec.n_paths, 1, grid, spec.seed, stream=0)
        test = simulate_brownian(spec.n_test, 1, grid, spec.seed, stream=1)
        feats = wick_features(gaussian_coords(train, basis), iset)
        table = ridge_fit(simulate_em_sde(spec.model, train), feats, FitConfig("ridge", spec.ridge), grid)
        pred = reconstruct_paths(table, wick_features(gaussian_coords(test, basis), iset))
        return relative_l2(pred, simulate_em_sde(spec.model, test))
    raise ConfigurationError(f"unknown sweep method {spec.method!r}")


def sensitivity_sweep(spec: SweepSpec, axis: str, values) -> list:
    """Rows ``{axis, value, relative_l2, wall_time}`` for each value, ascending."""
    if axis not in SWEEP_AXES:
        raise ParameterError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if values != sorted(values):
        raise ParameterError("sweep values must be sorted ascending")
    rows = []
    for v in values:
        start = time.perf_counter()
        metric = evaluate_sweep_point(replace(spec, **{axis: int(v)}))
        rows.append({"axis": axis, "value": int(v), "relative_l2": metric,
                     "wall_time": time.perf_counter() - start})
    return rows
