"""Orthonormal temporal bases of L^2([0, T]) on a uniform grid.

Two families are supported:

* ``haar``  -- constant function followed by the dyadic Haar wavelets,
  ordered by (level, shift).
* ``trig``  -- constant function followed by ``sqrt(2/T) cos((j-1) pi t / T)``.

Values at a breakpoint use the right-continuous limit, and grid samples are
taken at left endpoints so that discrete sums match Ito sums downstream.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, ParameterError, ShapeError

BASIS_KINDS = ("haar", "trig")


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)

    def truncate(self, n_steps: int) -> "TimeGrid":
        """Grid covering only the first ``n_steps`` steps (same dt)."""
        if not 1 <= n_steps <= self.n_steps:
            raise ParameterError(f"n_steps must lie in [1, {self.n_steps}]")
        return TimeGrid(n_steps * self.dt, n_steps)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _haar_level_shift(j: np.ndarray):
    """(level, shift) of 1-based haar index j >= 2."""
    level = np.floor(np.log2(j - 1)).astype(int)
    shift = (j - 1) - (1 << level)
    return level, shift


def basis_values(kind: str, size: int, horizon: float, t) -> np.ndarray:
    """Evaluate e_1..e_size at times ``t`` (right-continuous), shape (size, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((size, t.size))
    out[0] = 1.0 / np.sqrt(horizon)
    if size == 1:
        return out
    if kind == "trig":
        j = np.arange(2, size + 1)[:, None]
        out[1:] = np.sqrt(2.0 / horizon) * np.cos((j - 1) * np.pi * t[None, :] / horizon)
        return out
    # t == T belongs to the last dyadic cell
    s = np.clip(t / horizon, 0.0, np.nextafter(1.0, 0.0))
    for j in range(2, size + 1):
        level, shift = _haar_level_shift(np.array(j))
        level, shift = int(level), int(shift)
        x = s * (1 << level) - shift
        amp = np.sqrt((1 << level) / horizon)
        out[j - 1] = np.where((x >= 0) & (x < 0.5), amp, np.where((x >= 0.5) & (x < 1.0), -amp, 0.0))
    return out


def antiderivative_values(kind: str, size: int, horizon: float, t) -> np.ndarray:
    """Closed-form G_j(t) = int_0^t e_j(s) ds, shape (size, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((size, t.size))
    out[0] = t / np.sqrt(horizon)
    if size == 1:
        return out
    if kind == "trig":
        j = np.arange(2, size + 1)[:, None]
        w = (j - 1) * np.pi / horizon
        out[1:] = np.sqrt(2.0 / horizon) * np.sin(w * t[None, :]) / w
        return out
    for j in range(2, size + 1):
        level, shift = _haar_level_shift(np.array(j))
        level, shift = int(level), int(shift)
        width = horizon / (1 << level)
        a = shift * width
        m = a + 0.5 * width
        b = a + width
        amp = np.sqrt((1 << level) / horizon)
        out[j - 1] = amp * np.where(t < m, np.clip(t - a, 0.0, None), np.clip(b - t, 0.0, None))
    return out


@dataclass(frozen=True)
class BasisSet:
    """Basis tables on a grid.

    ``E[j, k] = e_{j+1}(t_k)`` for the left endpoints ``k = 0..n_steps-1`` and
    ``G[j, k] = G_{j+1}(t_k)`` for all nodes ``k = 0..n_steps``.
    """

    kind: str
    size: int
    grid: TimeGrid
    E: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def evaluate(self, t) -> np.ndarray:
        return basis_values(self.kind, self.size, self.horizon, t)

    def antiderivative(self, t) -> np.ndarray:
        return antiderivative_values(self.kind, self.size, self.horizon, t)

    def gram(self) -> np.ndarray:
        return self.grid.dt * self.E @ self.E.T

    def is_aligned(self) -> bool:
        return self.kind == "haar" and self.grid.n_steps % self.size == 0

    def to_csv(self, path, table: str = "E") -> Path:
        """Write a table with one row per basis function and one column per node."""
        path = Path(path)
        data = {"E": self.E, "G": self.G}[table]
        times = self.grid.times[: data.shape[1]]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j"] + [repr(float(t)) for t in times])
            for j, row in enumerate(data, start=1):
                writer.writerow([j] + [repr(float(v)) for v in row])
        return path


def make_basis(kind: str, size: int, grid: TimeGrid) -> BasisSet:
    if kind not in BASIS_KINDS:
        raise ConfigurationError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")
    if size < 1:
        raise ConfigurationError(f"basis size must be >= 1, got {size}")
    if kind == "haar":
        if not _is_power_of_two(size):
            raise ConfigurationError(f"haar basis size must be a power of two, got {size}")
        if grid.n_steps % size:
            raise ConfigurationError(
                f"haar basis requires n_steps to be a multiple of the basis size "
                f"(n_steps={grid.n_steps}, size={size})"
            )
    times = grid.times
    E = basis_values(kind, size, grid.horizon, times[:-1])
    G = antiderivative_values(kind, size, grid.horizon, times)
    E.setflags(write=False)
    G.setflags(write=False)
    return BasisSet(kind, size, grid, E, G)


def antiderivative_at(basis: BasisSet, j: int, t: float) -> float:
    """G_j(t) for a 1-based index j."""
    if not 1 <= j <= basis.size:
        raise ParameterError(f"basis index must lie in [1, {basis.size}], got {j}")
    if not 0.0 <= t <= basis.horizon:
        raise DomainError(f"t={t} outside [0, {basis.horizon}]")
    return float(antiderivative_values(basis.kind, j, basis.horizon, [t])[j - 1, 0])


def project_time_series(values, basis: BasisSet) -> np.ndarray:
    """Left-endpoint Riemann coefficients ``c_j = dt * sum_k v(t_k) e_j(t_k)``.

    ``values`` has the time axis last (length ``n_steps + 1``); leading axes
    are carried through, so the result has shape ``values.shape[:-1] + (size,)``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != basis.grid.n_steps + 1:
        raise ShapeError(
            f"time series length {values.shape[-1]} does not match grid nodes {basis.grid.n_steps + 1}"
        )
    return basis.grid.dt * values[..., :-1] @ basis.E.T


def reconstruct_time_series(coefficients, basis: BasisSet) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape[-1] != basis.size:
        raise ShapeError(f"expected {basis.size} coefficients, got {coefficients.shape[-1]}")
    return coefficients @ basis.evaluate(basis.grid.times)


def _relax_factor(rate: float, h: np.ndarray) -> np.ndarray:
    """(1 - exp(-rate h)) / rate, with the rate -> 0 limit h."""
    h = np.asarray(h, dtype=float)
    if rate == 0.0:
        return h
    return -np.expm1(-rate * h) / rate


def duhamel_increment(kind: str, size: int, horizon: float, rate: float, t0: float, t1: float) -> np.ndarray:
    """Exact ``int_{t0}^{t1} exp(-rate (t1 - s)) e_j(s) ds`` for j = 1..size.

    Haar functions are integrated piecewise between dyadic breakpoints, trig
    functions in closed form.  ``rate`` must be non-negative.
    """
    if t1 < t0:
        raise DomainError("t1 must not precede t0")
    out = np.zeros(size)
    if t1 == t0:
        return out
    out[0] = _relax_factor(rate, t1 - t0) / np.sqrt(horizon)
    if size == 1:
        return out
    if kind == "trig":
        w = np.arange(1, size) * np.pi / horizon
        denom = rate * rate + w * w
        num = (rate * np.cos(w * t1) + w * np.sin(w * t1)) - np.exp(-rate * (t1 - t0)) * (
            rate * np.cos(w * t0) + w * np.sin(w * t0)
        )
        out[1:] = np.sqrt(2.0 / horizon) * num / denom
        return out
    cell = horizon / size
    inner = np.arange(np.floor(t0 / cell) + 1, np.ceil(t1 / cell)) * cell
    edges = np.concatenate(([t0], inner[(inner > t0) & (inner < t1)], [t1]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    weights = np.exp(-rate * (t1 - edges[1:])) * _relax_factor(rate, np.diff(edges))
    out[1:] = basis_values("haar", size, horizon, mids)[1:] @ weights
    return out
