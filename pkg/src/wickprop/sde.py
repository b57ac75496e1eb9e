"""Propagator ODE systems for scalar SDEs and trajectory reconstruction.

For ``dX = F(X) dt + B(X) dW`` the chaos coefficients ``u_alpha(t) = E[X_t xi_alpha]``
solve a deterministic ODE system.  Two closed cases are solved here:

* affine coefficients ``F = a + b x``, ``B = c + d x`` (OU, GBM, ...);
* drifts given as Wick polynomials ``F = sum_p a_p X^{<>p}`` with additive noise.

Both are integrated with fixed-step RK4 on a refinement of the output grid.
Heston-type models have no closed propagator system and are only simulated
(``simulate_em_sde``); their propagators come from the estimator module.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .chaos import ChaosIndexSet, WickFeatures, wick_polynomial
from .errors import BlowupError, ConfigurationError, ParameterError, ShapeError
from .noise import NoiseBatch
from .parallel import for_each_chunk
from .timebasis import BasisSet, TimeGrid, basis_values

DEFAULT_SUBSTEPS = 4


@dataclass(frozen=True)
class AffineSdeModel:
    """dX = (a + b X) dt + (c + d X) dW,  X(0) = x0."""

    x0: float
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.x0, self.a, self.b, self.c, self.d])):
            raise ParameterError("affine SDE coefficients must be finite")

    @classmethod
    def ou(cls, theta: float, sigma: float, x0: float = 1.0, mu: float = 0.0) -> "AffineSdeModel":
        return cls(x0=x0, a=theta * mu, b=-theta, c=sigma, d=0.0)

    @classmethod
    def gbm(cls, mu: float, sigma: float, x0: float = 1.0) -> "AffineSdeModel":
        return cls(x0=x0, a=0.0, b=mu, c=0.0, d=sigma)

    @property
    def state_dim(self) -> int:
        return 1

    @property
    def noise_dim(self) -> int:
        return 1

    def drift(self, t, x):
        return self.a + self.b * x

    def diffusion(self, t, x):
        return self.c + self.d * x


@dataclass(frozen=True)
class WickDriftSdeModel:
    """dX = sum_p a_p X^{<>p} dt + sigma dW with the drift read in Wick form."""

    x0: float
    drift_coeffs: tuple
    sigma: float = 0.0

    @property
    def order(self) -> int:
        return len(self.drift_coeffs) - 1


@dataclass(frozen=True)
class HestonModel:
    mu: float
    kappa: float
    theta_v: float
    zeta: float
    rho: float
    s0: float = 1.0
    v0: float = 0.04

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.s0 <= 0 or self.v0 < 0:
            raise ParameterError("need S0 > 0 and V0 >= 0")
        if not self.feller_satisfied():
            warnings.warn(
                f"Feller condition 2 kappa theta_v >= zeta^2 violated "
                f"({2 * self.kappa * self.theta_v:.4g} < {self.zeta ** 2:.4g})",
                RuntimeWarning,
                stacklevel=2,
            )

    def feller_satisfied(self) -> bool:
        return 2.0 * self.kappa * self.theta_v >= self.zeta**2

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def noise_dim(self) -> int:
        return 2


@dataclass(frozen=True)
class CallbackSdeModel:
    """Diagonal-noise SDE with user drift/diffusion ``f(t, x) -> array`` on (n_paths, dim)."""

    x0: tuple
    drift: Callable
    diffusion: Callable

    @property
    def state_dim(self) -> int:
        return len(self.x0)

    @property
    def noise_dim(self) -> int:
        return len(self.x0)


@dataclass(frozen=True)
class PropagatorTable:
    """values[alpha, state_component, k] = u_alpha(t_k)."""

    values: np.ndarray = field(repr=False)
    index_set: ChaosIndexSet
    grid: TimeGrid

    def __post_init__(self):
        if self.values.shape[0] != len(self.index_set) or self.values.shape[2] != self.grid.n_steps + 1:
            raise ShapeError(f"propagator values have shape {self.values.shape}")

    @property
    def state_dim(self) -> int:
        return self.values.shape[1]

    def degree_sup_norms(self) -> np.ndarray:
        """max over t and alpha of |u_alpha(t)|, grouped by |alpha|."""
        degs = self.index_set.degrees
        return np.array([np.abs(self.values[degs == g]).max(initial=0.0) for g in range(int(degs.max()) + 1)])

    def to_csv(self, path) -> Path:
        path = Path(path)
        times = self.grid.times
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha_id", "state_component", "t", "value"])
            for a in range(self.values.shape[0]):
                for s in range(self.values.shape[1]):
                    for k, t in enumerate(times):
                        w.writerow([a, s, repr(float(t)), repr(float(self.values[a, s, k]))])
        return path


def _stage_basis_values(basis: BasisSet, fine: TimeGrid, n_modes: int) -> np.ndarray:
    """Basis values at RK4 stage times, shape (n_fine, 3, n_modes) for (t, t+h/2, t+h).

    Haar functions are constant on each aligned step; all three stages take
    the value of the step's own cell so that breakpoints never leak across.
    """
    t = fine.times
    h = fine.dt
    if basis.kind == "haar":
        if fine.n_steps % basis.size:
            raise ConfigurationError("haar propagator solve needs the refined grid aligned with the basis")
        mid = basis_values("haar", basis.size, basis.horizon, t[:-1] + 0.5 * h)[:n_modes].T
        return np.repeat(mid[:, None, :], 3, axis=1)
    out = np.empty((fine.n_steps, 3, n_modes))
    for s, off in enumerate((0.0, 0.5 * h, h)):
        out[:, s, :] = basis_values(basis.kind, basis.size, basis.horizon, t[:-1] + off)[:n_modes].T
    return out


def _check_setup(basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid):
    if iset.n_components != 1:
        raise ConfigurationError(f"scalar SDE solver needs a 1-component index set, got {iset.n_components}")
    if iset.n_modes > basis.size:
        raise ConfigurationError(f"index set uses {iset.n_modes} modes, basis has {basis.size}")
    if not np.isclose(basis.horizon, grid.horizon, rtol=1e-12):
        raise ConfigurationError("basis horizon differs from grid horizon")
    return iset.predecessors


def _rk4(rhs, u0: np.ndarray, n_fine: int, h: float, substeps: int, n_out: int, rows=None, stages=None):
    """Fixed-step RK4; ``rhs(n, s, y)`` gets the fine step and stage slot (0, 1, 1, 2).

    With ``rows``/``stages`` given only those rows are advanced while the
    other rows are read from previously recorded stage inputs ``stages``
    (shape (n_fine, 4, len(u0))); the inputs for ``rows`` are recorded too.
    """
    out = np.empty((n_out,) + u0.shape)
    y = u0.copy()
    out[0] = y
    for n in range(n_fine):
        if rows is None:
            k1 = rhs(n, 0, y)
            k2 = rhs(n, 1, y + 0.5 * h * k1)
            k3 = rhs(n, 1, y + 0.5 * h * k2)
            k4 = rhs(n, 2, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            ks = []
            inc = np.zeros_like(y[rows])
            for s, (slot, frac) in enumerate(((0, 0.0), (1, 0.5), (1, 0.5), (2, 1.0))):
                full = stages[n, s].copy()
                full[rows] = y[rows] + (frac * h * ks[-1] if ks else 0.0)
                stages[n, s, rows] = full[rows]
                k = rhs(n, slot, full)[rows]
                ks.append(k)
            inc = (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
            y[rows] = y[rows] + inc
        if not np.all(np.isfinite(y)):
            raise BlowupError(n // substeps, f"non-finite propagator at output step {n // substeps}")
        if (n + 1) % substeps == 0:
            out[(n + 1) // substeps] = y
    return out


def _integrate(rhs, u0, grid, substeps, iset, order):
    fine = grid.refine(substeps)
    if order == "joint":
        return _rk4(rhs, u0, fine.n_steps, fine.dt, substeps, grid.n_steps + 1)
    if order != "graded":
        raise ParameterError(f"unknown solve order {order!r}")
    stages = np.zeros((fine.n_steps, 4) + u0.shape)
    y = u0.copy()
    result = None
    for rows in iset.degree_slices():
        if rows.size == 0:
            continue
        traj = _rk4(rhs, y, fine.n_steps, fine.dt, substeps, grid.n_steps + 1, rows=rows, stages=stages)
        result = traj if result is None else result
        result[:, rows] = traj[:, rows]
    return result


def solve_affine_propagators(model: AffineSdeModel, basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid,
                             substeps: int = DEFAULT_SUBSTEPS, order: str = "graded") -> PropagatorTable:
    """RK4 solution of

        u_a' = a delta_{a0} + b u_a + sum_i sqrt(a_i) e_i(t) (c delta_{a-e_i,0} + d u_{a-e_i}),

    with ``u_a(0) = x0 delta_{a0}``.  ``order="graded"`` integrates one degree
    at a time over the whole horizon (the system is block lower-triangular in
    the degree); ``"joint"`` advances all coefficients together.
    """
    a_idx, coord, b_idx, weight = _check_setup(basis, iset, grid)
    fine = grid.refine(substeps)
    e_stage = _stage_basis_values(basis, fine, iset.n_modes)
    n = len(iset)
    scatter = sp.csr_matrix((np.ones(a_idx.size), (a_idx, np.arange(a_idx.size))), shape=(n, a_idx.size))
    from_root = (b_idx == 0).astype(float)

    def rhs(step, slot, y):
        e = e_stage[step, slot, coord]
        du = model.b * y
        du[0] += model.a
        if a_idx.size:
            du += scatter @ (weight * e * (model.c * from_root + model.d * y[b_idx]))
        return du

    u0 = np.zeros(n)
    u0[0] = model.x0
    vals = _integrate(rhs, u0, grid, substeps, iset, order)
    return PropagatorTable(np.ascontiguousarray(vals.T[:, None, :]), iset, grid)


def solve_wick_drift_propagators(model: WickDriftSdeModel, basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid,
                                 substeps: int = DEFAULT_SUBSTEPS) -> PropagatorTable:
    """RK4 on ``u' = sum_p a_p (u^{<>p}) + sigma sum_i e_i(t) [alpha = e_i]``."""
    if model.order > iset.max_order:
        raise ParameterError(f"drift order {model.order} exceeds the index set's max order {iset.max_order}")
    a_idx, coord, b_idx, weight = _check_setup(basis, iset, grid)
    fine = grid.refine(substeps)
    e_stage = _stage_basis_values(basis, fine, iset.n_modes)
    first = b_idx == 0
    f_rows, f_coord, f_w = a_idx[first], coord[first], weight[first]
    coeffs = tuple(float(c) for c in model.drift_coeffs)

    def rhs(step, slot, y):
        du = wick_polynomial(y, coeffs, iset)
        du[f_rows] += model.sigma * f_w * e_stage[step, slot, f_coord]
        return du

    u0 = np.zeros(len(iset))
    u0[0] = model.x0
    vals = _integrate(rhs, u0, grid, substeps, iset, "joint")
    return PropagatorTable(np.ascontiguousarray(vals.T[:, None, :]), iset, grid)


def reconstruct_paths(table: PropagatorTable, features: WickFeatures) -> np.ndarray:
    """X[i, s, k] = sum_alpha u_alpha^s(t_k) xi_alpha^(i), shape (n_paths, state_dim, n_steps + 1)."""
    if features.index_set != table.index_set:
        raise ShapeError("feature and propagator index sets differ")
    return np.einsum("ia,ask->isk", features.values, table.values, optimize=True)


def simulate_em_sde(model, noise: NoiseBatch, grid: TimeGrid | None = None, threads=None) -> np.ndarray:
    """Left-endpoint Euler-Maruyama on the noise grid, shape (n_paths, state_dim, n_steps + 1).

    Heston uses full truncation (``max(V, 0)`` inside drift and diffusion) and
    reads ``noise`` component 0 as W^S and component 1 as the already
    correlated W^V.
    """
    grid = grid or noise.grid
    if grid.n_steps != noise.grid.n_steps:
        raise ShapeError("noise grid does not match simulation grid")
    if noise.n_components != model.noise_dim:
        raise ShapeError(f"model needs {model.noise_dim} noise components, batch has {noise.n_components}")
    dt = grid.dt
    times = grid.times
    dW = noise.increments
    out = np.empty((noise.n_paths, model.state_dim, grid.n_steps + 1))

    if isinstance(model, HestonModel):
        out[:, 0, 0] = model.s0
        out[:, 1, 0] = model.v0

        def step(x, k, sl):
            s, v = x[:, 0], x[:, 1]
            vp = np.maximum(v, 0.0)
            sq = np.sqrt(vp)
            return np.stack(
                [s + model.mu * s * dt + sq * s * dW[sl, 0, k],
                 v + model.kappa * (model.theta_v - vp) * dt + model.zeta * sq * dW[sl, 1, k]],
                axis=1,
            )
    elif isinstance(model, AffineSdeModel):
        out[:, 0, 0] = model.x0

        def step(x, k, sl):
            return x + model.drift(times[k], x) * dt + model.diffusion(times[k], x) * dW[sl, :, k]
    elif isinstance(model, CallbackSdeModel):
        out[:, :, 0] = np.asarray(model.x0, dtype=float)

        def step(x, k, sl):
            return x + np.asarray(model.drift(times[k], x)) * dt + np.asarray(model.diffusion(times[k], x)) * dW[sl, :, k]
    else:
        raise ConfigurationError(f"unsupported model type {type(model).__name__}")

    def work(a, b):
        sl = slice(a, b)
        x = out[sl, :, 0]
        for k in range(grid.n_steps):
            x = step(x, k, sl)
            if not np.all(np.isfinite(x)):
                raise BlowupError(k + 1)
            out[sl, :, k + 1] = x

    for_each_chunk(noise.n_paths, work, threads)
    return out
