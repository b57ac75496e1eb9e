"""Propagator fields for SPDEs on the periodic unit interval.

Linear part ``nu * Laplacian`` is applied exactly in Fourier space.  KL
eigenfunctions of the driving noise are torus Fourier modes, so the forcing
of each first-order field stays in a single Fourier mode and its Duhamel
integral is a scalar per (KL mode, temporal mode).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chaos import ChaosIndexSet, WickFeatures, wick_polynomial
from .errors import BlowupError, ConfigurationError, ParameterError, ShapeError
from .noise import QBrownian, QSpectrum
from .parallel import for_each_chunk
from .timebasis import BasisSet, TimeGrid, duhamel_increment

DEFAULT_SUBSTEPS = 4


def _fourier_rates(n_x: int, nu: float) -> np.ndarray:
    k = np.fft.rfftfreq(n_x, d=1.0 / n_x)
    return nu * (2 * np.pi * k) ** 2


def heat_semigroup(values: np.ndarray, nu: float, h: float) -> np.ndarray:
    """exp(h nu Laplacian) applied along the last axis (periodic, spectral)."""
    n_x = values.shape[-1]
    spec = np.fft.rfft(values, axis=-1)
    spec *= np.exp(-_fourier_rates(n_x, nu) * h)
    return np.fft.irfft(spec, n=n_x, axis=-1)


@dataclass(frozen=True)
class HeatSpdeModel:
    """dX = nu X_xx dt + dW on [0, 1) with periodic boundary, X(0) = chi0."""

    nu: float
    spectrum: QSpectrum
    chi0: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_x = self.spectrum.n_x
        if n_x < 2 or n_x & (n_x - 1):
            raise ConfigurationError(f"n_x must be a power of two, got {n_x}")
        if not self.nu > 0:
            raise ConfigurationError(f"diffusivity must be positive, got {self.nu}")
        chi0 = np.asarray(self.chi0)
        if chi0.shape != (n_x,) or np.iscomplexobj(chi0):
            raise ConfigurationError(f"chi0 must be a real array of length {n_x}")

    @property
    def n_x(self) -> int:
        return self.spectrum.n_x

    @property
    def x(self) -> np.ndarray:
        return self.spectrum.x


@dataclass(frozen=True)
class SemilinearSpdeModel:
    """Heat model plus a Wick-polynomial reaction ``sum_p a_p X^{<>p}``."""

    heat: HeatSpdeModel
    reaction_coeffs: tuple

    @property
    def order(self) -> int:
        return len(self.reaction_coeffs) - 1


@dataclass(frozen=True)
class CoefficientField:
    """values[alpha, k, i] = u_alpha(t_k, x_i)."""

    values: np.ndarray = field(repr=False)
    index_set: ChaosIndexSet
    grid: TimeGrid

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[:2] != (len(self.index_set), self.grid.n_steps + 1):
            raise ShapeError(f"coefficient field has shape {self.values.shape}")

    @property
    def mean(self) -> np.ndarray:
        return self.values[0]


def check_eigenfunctions(spectrum: QSpectrum, nu: float, n_modes: int, tol: float = 1e-8):
    """Every retained KL function must be an eigenfunction of nu * Laplacian."""
    f = spectrum.eigenfunctions()[:n_modes]
    lap = heat_semigroup(f, nu, 1.0)
    expected = np.exp(-nu * spectrum.laplacian_rates()[:n_modes])[:, None] * f
    if np.abs(lap - expected).max() > tol * max(1.0, np.abs(f).max()):
        raise ConfigurationError("KL eigenfunctions are not eigenfunctions of the spatial operator")


def _first_order_rows(iset: ChaosIndexSet):
    """(row, KL mode, temporal mode) for each unit multi-index."""
    rows = []
    for r, alpha in enumerate(iset):
        if alpha.degree == 1:
            (m, j), _ = alpha.items[0]
            rows.append((r, m, j))
    return rows


def _check_setup(model: HeatSpdeModel, basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid):
    if iset.n_components > model.spectrum.n_modes:
        raise ConfigurationError(
            f"index set uses {iset.n_components} KL modes, spectrum has {model.spectrum.n_modes}"
        )
    if iset.n_modes > basis.size:
        raise ConfigurationError(f"index set uses {iset.n_modes} temporal modes, basis has {basis.size}")
    if not np.isclose(basis.horizon, grid.horizon, rtol=1e-12):
        raise ConfigurationError("basis horizon differs from grid horizon")
    check_eigenfunctions(model.spectrum, model.nu, iset.n_components)


def solve_heat_propagators(model: HeatSpdeModel, basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid) -> CoefficientField:
    """Closed-form propagators of the stochastic heat equation.

    ``u_0`` decays mode by mode, ``u_{e_ki}(t) = sqrt(lambda_k) f_k D_ki(t)`` with
    ``D_ki(t) = int_0^t exp(-nu (2 pi n_k)^2 (t - s)) e_i(s) ds`` and every
    higher-order field vanishes.
    """
    _check_setup(model, basis, iset, grid)
    times = grid.times
    out = np.zeros((len(iset), grid.n_steps + 1, model.n_x))
    spec0 = np.fft.rfft(np.asarray(model.chi0, dtype=float))
    rates = _fourier_rates(model.n_x, model.nu)
    out[0] = np.fft.irfft(spec0[None, :] * np.exp(-rates[None, :] * times[:, None]), n=model.n_x, axis=-1)

    f = model.spectrum.eigenfunctions()
    lam = model.spectrum.eigenvalues
    kl_rates = model.nu * model.spectrum.laplacian_rates()
    rows = _first_order_rows(iset)
    for m in sorted({m for _, m, _ in rows}):
        D = _duhamel_series(basis, kl_rates[m], times, iset.n_modes)
        for r, mm, j in rows:
            if mm == m:
                out[r] = np.sqrt(lam[m]) * D[j][:, None] * f[m][None, :]
    return CoefficientField(out, iset, grid)


def _duhamel_series(basis: BasisSet, rate: float, times: np.ndarray, n_modes: int) -> np.ndarray:
    """D_j(t_k) for j < n_modes via the exact one-step recursion, shape (n_modes, n_t)."""
    D = np.zeros((n_modes, times.size))
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        inc = duhamel_increment(basis.kind, basis.size, basis.horizon, rate, times[k], times[k + 1])[:n_modes]
        D[:, k + 1] = np.exp(-rate * h) * D[:, k] + inc
    return D


def solve_semilinear_propagators(model: SemilinearSpdeModel, basis: BasisSet, iset: ChaosIndexSet, grid: TimeGrid,
                                 substeps: int = DEFAULT_SUBSTEPS) -> CoefficientField:
    """Strang splitting per grid step.

    Half step of the exact linear flow (spectral decay plus the Duhamel
    integral of the first-order noise forcing), a full step of the pointwise
    Wick-polynomial reaction by RK4 with ``substeps`` substeps, then another
    exact linear half step.
    """
    heat = model.heat
    if model.order > iset.max_order:
        raise ParameterError(f"reaction order {model.order} exceeds max order {iset.max_order}")
    _check_setup(heat, basis, iset, grid)
    coeffs = tuple(float(c) for c in model.reaction_coeffs)
    f = heat.spectrum.eigenfunctions()
    lam = heat.spectrum.eigenvalues
    kl_rates = heat.nu * heat.spectrum.laplacian_rates()
    rows = _first_order_rows(iset)
    forcing_shape = np.array([np.sqrt(lam[m]) * f[m] for _, m, _ in rows]).reshape(len(rows), heat.n_x)
    row_idx = np.array([r for r, _, _ in rows], dtype=np.int64)

    def linear_half(U, t0, t1):
        U = heat_semigroup(U, heat.nu, t1 - t0)
        if rows:
            amp = np.array([
                duhamel_increment(basis.kind, basis.size, basis.horizon, kl_rates[m], t0, t1)[j] for _, m, j in rows
            ])
            U[row_idx] += amp[:, None] * forcing_shape
        return U

    def reaction(U):
        return wick_polynomial(U, coeffs, iset)

    times = grid.times
    out = np.empty((len(iset), grid.n_steps + 1, heat.n_x))
    U = np.zeros((len(iset), heat.n_x))
    U[0] = heat.chi0
    out[:, 0] = U
    react = any(coeffs)
    for k in range(grid.n_steps):
        t0, t1 = times[k], times[k + 1]
        tm = 0.5 * (t0 + t1)
        U = linear_half(U, t0, tm)
        if react:
            h = (t1 - t0) / substeps
            for _ in range(substeps):
                k1 = reaction(U)
                k2 = reaction(U + 0.5 * h * k1)
                k3 = reaction(U + 0.5 * h * k2)
                k4 = reaction(U + h * k3)
                U = U + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        U = linear_half(U, tm, t1)
        if not np.all(np.isfinite(U)):
            raise BlowupError(k + 1)
        out[:, k + 1] = U
    return CoefficientField(out, iset, grid)


def reconstruct_field(cf: CoefficientField, features: WickFeatures) -> np.ndarray:
    """X[i, k, x] = sum_alpha u_alpha(t_k, x) xi_alpha^(i)."""
    if features.index_set != cf.index_set:
        raise ShapeError("feature and coefficient index sets differ")
    return np.einsum("ia,akx->ikx", features.values, cf.values, optimize=True)


def phi4_drift(x):
    """Ordinary cubic reaction 3x - x^3 of the dynamic Phi^4_1 model."""
    return 3.0 * x - x**3


def simulate_em_spde(nu: float, chi0, noise, grid: TimeGrid, drift: Callable | None = None,
                     threads=None) -> np.ndarray:
    """Exponential Euler-Maruyama reference solver.

    Per step ``X <- exp(dt nu Laplacian) (X + dt drift(X) + dW)`` with the
    drift evaluated pointwise at the left endpoint.  ``noise`` is a
    ``QBrownian`` or an increment array of shape (n_paths, n_steps, n_x).
    Returns realizations of shape (n_paths, n_steps + 1, n_x).
    """
    if isinstance(noise, QBrownian):
        if noise.grid.n_steps != grid.n_steps:
            raise ShapeError("noise grid does not match the simulation grid")
        dW = noise.field_increments
    else:
        dW = np.asarray(noise, dtype=float)
    chi0 = np.asarray(chi0, dtype=float)
    if dW.ndim != 3 or dW.shape[1] != grid.n_steps or dW.shape[2] != chi0.size:
        raise ShapeError(f"noise increments have shape {dW.shape}; expected (n_paths, {grid.n_steps}, {chi0.size})")
    n_paths = dW.shape[0]
    dt = grid.dt
    decay = np.exp(-_fourier_rates(chi0.size, nu) * dt)
    out = np.empty((n_paths, grid.n_steps + 1, chi0.size))
    out[:, 0] = chi0

    def work(a, b):
        X = out[a:b, 0].copy()
        for k in range(grid.n_steps):
            Y = X + dW[a:b, k]
            if drift is not None:
                Y = Y + dt * drift(X)
            X = np.fft.irfft(np.fft.rfft(Y, axis=-1) * decay, n=chi0.size, axis=-1)
            if not np.all(np.isfinite(X)):
                raise BlowupError(k + 1)
            out[a:b, k + 1] = X

    for_each_chunk(n_paths, work, threads)
    return out
