"""Brownian and Q-Brownian drivers, Gaussian coordinates and truncated reconstructions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParameterError, ShapeError
from .parallel import for_each_chunk
from .timebasis import BasisSet, TimeGrid, antiderivative_values, basis_values


def path_generator(seed: int, path: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, stream, path) triple."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(stream), int(path), 0]))


@dataclass(frozen=True)
class NoiseBatch:
    """Brownian increments ``dW[path, component, step]`` on a grid."""

    increments: np.ndarray = field(repr=False)
    grid: TimeGrid
    seed: int | None = None

    def __post_init__(self):
        if self.increments.ndim != 3 or self.increments.shape[2] != self.grid.n_steps:
            raise ShapeError(
                f"increments must have shape (n_paths, d, {self.grid.n_steps}), got {self.increments.shape}"
            )

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_components(self) -> int:
        return self.increments.shape[1]

    @property
    def paths(self) -> np.ndarray:
        """W(t_k), shape (n_paths, d, n_steps + 1) with W(0) = 0."""
        out = np.zeros(self.increments.shape[:2] + (self.grid.n_steps + 1,))
        np.cumsum(self.increments, axis=2, out=out[:, :, 1:])
        return out

    def component(self, m: int) -> "NoiseBatch":
        return NoiseBatch(self.increments[:, m : m + 1, :], self.grid, self.seed)

    def subset(self, rows) -> "NoiseBatch":
        return NoiseBatch(self.increments[rows], self.grid, self.seed)

    @classmethod
    def from_paths(cls, paths: np.ndarray, grid: TimeGrid, seed=None) -> "NoiseBatch":
        return cls(np.diff(paths, axis=2), grid, seed)


def simulate_brownian(n_paths: int, d: int, grid: TimeGrid, seed: int, stream: int = 0, threads=None) -> NoiseBatch:
    """I.i.d. N(0, dt) increments; path ``i`` draws from its own Philox stream."""
    if n_paths < 1 or d < 1:
        raise ParameterError(f"need n_paths >= 1 and d >= 1, got ({n_paths}, {d})")
    inc = np.empty((n_paths, d, grid.n_steps))
    scale = np.sqrt(grid.dt)

    def work(a, b):
        for i in range(a, b):
            inc[i] = path_generator(seed, i, stream).standard_normal((d, grid.n_steps))
        inc[a:b] *= scale

    for_each_chunk(n_paths, work, threads)
    return NoiseBatch(inc, grid, seed)


def correlate_brownian(batch_s: NoiseBatch, batch_indep: NoiseBatch, rho: float) -> NoiseBatch:
    """dW^V = rho dW^S + sqrt(1 - rho^2) dW^2."""
    if not -1.0 <= rho <= 1.0:
        raise ParameterError(f"correlation must lie in [-1, 1], got {rho}")
    if batch_s.increments.shape != batch_indep.increments.shape:
        raise ShapeError("correlated batches must share shape")
    if rho == 1.0:
        return NoiseBatch(batch_s.increments.copy(), batch_s.grid, batch_s.seed)
    if rho == 0.0:
        return NoiseBatch(batch_indep.increments.copy(), batch_indep.grid, batch_indep.seed)
    inc = rho * batch_s.increments + np.sqrt(1.0 - rho * rho) * batch_indep.increments
    return NoiseBatch(inc, batch_s.grid, batch_s.seed)


@dataclass(frozen=True)
class GaussianCoords:
    """xi[path, component, mode]."""

    xi: np.ndarray = field(repr=False)
    basis_kind: str = "haar"

    @property
    def n_paths(self) -> int:
        return self.xi.shape[0]

    @property
    def n_components(self) -> int:
        return self.xi.shape[1]

    @property
    def n_modes(self) -> int:
        return self.xi.shape[2]

    def subset(self, rows) -> "GaussianCoords":
        return GaussianCoords(self.xi[rows], self.basis_kind)


def _check_horizon(basis: BasisSet, grid: TimeGrid):
    if not np.isclose(basis.horizon, grid.horizon, rtol=1e-12, atol=0.0):
        raise ConfigurationError(f"basis horizon {basis.horizon} differs from grid horizon {grid.horizon}")


def _left_values(basis: BasisSet, grid: TimeGrid) -> np.ndarray:
    if basis.grid == grid:
        return basis.E
    return basis_values(basis.kind, basis.size, basis.horizon, grid.times[:-1])


def gaussian_coords(batch: NoiseBatch, basis: BasisSet) -> GaussianCoords:
    """Left-endpoint Ito sums ``xi[i, m, j] = sum_k e_j(t_k) dW[i, m, k]``."""
    _check_horizon(basis, batch.grid)
    E = _left_values(basis, batch.grid)
    return GaussianCoords(np.einsum("imk,jk->imj", batch.increments, E), basis.kind)


def reconstruct_brownian(coords: GaussianCoords, basis: BasisSet, grid: TimeGrid, n: int) -> NoiseBatch:
    """Truncated expansion ``sum_{j<=n} xi_j G_j(t)`` evaluated on ``grid``."""
    if not 0 <= n <= basis.size:
        raise ParameterError(f"truncation {n} outside [0, {basis.size}]")
    if n > coords.n_modes:
        raise ParameterError(f"truncation {n} exceeds available coordinates ({coords.n_modes})")
    _check_horizon(basis, grid)
    G = antiderivative_values(basis.kind, basis.size, basis.horizon, grid.times)[:n]
    paths = np.einsum("imj,jk->imk", coords.xi[:, :, :n], G)
    return NoiseBatch.from_paths(paths, grid, None)


# --- Q-Brownian motion on the periodic unit interval ------------------------

@dataclass(frozen=True)
class QSpectrum:
    """Karhunen-Loeve eigensystem on the torus [0, 1).

    Mode ``k`` is a Fourier function identified by ``(wavenumber, kind)`` with
    kind in {"const", "sin", "cos"}; ``eigenvalues[k]`` is its variance rate.
    """

    eigenvalues: np.ndarray
    wavenumbers: tuple
    kinds: tuple
    n_x: int

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size != len(self.wavenumbers) or lam.size != len(self.kinds):
            raise ConfigurationError("eigenvalues, wavenumbers and kinds must have equal length")
        if np.any(lam < 0):
            raise ConfigurationError("KL eigenvalues must be non-negative")
        for n, kind in zip(self.wavenumbers, self.kinds):
            if kind not in ("const", "sin", "cos") or (kind == "const") != (n == 0):
                raise ConfigurationError(f"invalid torus mode ({n}, {kind})")
            if 2 * n >= self.n_x:
                raise ConfigurationError(f"wavenumber {n} is not resolved on {self.n_x} grid points")

    @property
    def n_modes(self) -> int:
        return len(self.wavenumbers)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) / self.n_x

    def eigenfunctions(self) -> np.ndarray:
        """f_k(x_i), shape (n_modes, n_x), orthonormal for the weight dx = 1/n_x."""
        x = self.x
        rows = []
        for n, kind in zip(self.wavenumbers, self.kinds):
            if kind == "const":
                rows.append(np.ones_like(x))
            elif kind == "sin":
                rows.append(np.sqrt(2.0) * np.sin(2 * np.pi * n * x))
            else:
                rows.append(np.sqrt(2.0) * np.cos(2 * np.pi * n * x))
        return np.array(rows).reshape(self.n_modes, self.n_x)

    def laplacian_rates(self) -> np.ndarray:
        """(2 pi n)^2 per mode, i.e. minus the Laplacian eigenvalue."""
        return (2 * np.pi * np.asarray(self.wavenumbers, dtype=float)) ** 2

    def with_eigenvalues(self, eigenvalues) -> "QSpectrum":
        return QSpectrum(np.asarray(eigenvalues, dtype=float), self.wavenumbers, self.kinds, self.n_x)


def torus_modes(n_modes: int, include_constant: bool = True):
    """First ``n_modes`` torus functions: const, sin 1, cos 1, sin 2, cos 2, ..."""
    modes = [(0, "const")] if include_constant else []
    n = 1
    while len(modes) < n_modes:
        modes.append((n, "sin"))
        modes.append((n, "cos"))
        n += 1
    modes = modes[:n_modes]
    return tuple(m[0] for m in modes), tuple(m[1] for m in modes)


def power_law_spectrum(n_modes: int, n_x: int, sigma: float = 0.1, decay: float = 0.0,
                       include_constant: bool = True) -> QSpectrum:
    """lambda_k = sigma^2 k^(-decay) for k = 1..n_modes."""
    if n_modes < 1:
        raise ConfigurationError("need at least one KL mode")
    wavenumbers, kinds = torus_modes(n_modes, include_constant)
    k = np.arange(1, n_modes + 1, dtype=float)
    return QSpectrum(sigma**2 * k ** (-decay), wavenumbers, kinds, n_x)


@dataclass(frozen=True)
class QBrownian:
    """Q-Brownian motion kept in KL coordinates: ``W = sum_k sqrt(lambda_k) beta^k f_k``."""

    spectrum: QSpectrum
    modes: NoiseBatch

    @property
    def grid(self) -> TimeGrid:
        return self.modes.grid

    @property
    def field(self) -> np.ndarray:
        """W(t_k, x_i), shape (n_paths, n_steps + 1, n_x)."""
        return kl_field(self.modes.paths, self.spectrum)

    @property
    def field_increments(self) -> np.ndarray:
        return kl_field(self.modes.increments, self.spectrum)


def kl_field(mode_values: np.ndarray, spectrum: QSpectrum) -> np.ndarray:
    """Combine per-mode series (n_paths, n_modes, n_t) into (n_paths, n_t, n_x)."""
    weights = np.sqrt(spectrum.eigenvalues)[:, None] * spectrum.eigenfunctions()
    return np.einsum("ikt,kx->itx", mode_values, weights)


def simulate_q_brownian(spectrum: QSpectrum, grid: TimeGrid, n_paths: int, seed: int, stream: int = 0,
                        threads=None) -> QBrownian:
    return QBrownian(spectrum, simulate_brownian(n_paths, spectrum.n_modes, grid, seed, stream, threads))


def reconstruct_q_brownian(coords: GaussianCoords, spectrum: QSpectrum, basis: BasisSet, grid: TimeGrid,
                           n_modes: int, n: int) -> np.ndarray:
    """Doubly truncated field ``sum_{k<=K} sqrt(lambda_k) (sum_{j<=n} xi_kj G_j(t)) f_k``."""
    if not 0 <= n_modes <= spectrum.n_modes:
        raise ParameterError(f"KL truncation {n_modes} outside [0, {spectrum.n_modes}]")
    if not 0 <= n <= basis.size:
        raise ParameterError(f"temporal truncation {n} outside [0, {basis.size}]")
    if coords.n_components < n_modes:
        raise ShapeError("coordinates do not cover the requested KL modes")
    beta = reconstruct_brownian(GaussianCoords(coords.xi[:, :n_modes], coords.basis_kind), basis, grid, n).paths
    sub = QSpectrum(spectrum.eigenvalues[:n_modes], spectrum.wavenumbers[:n_modes], spectrum.kinds[:n_modes],
                    spectrum.n_x)
    return kl_field(beta, sub)
