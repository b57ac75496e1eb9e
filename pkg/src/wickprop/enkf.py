"""Ensemble Kalman filter for the OU parameters (theta, mu, sigma).

Model: dX = theta (mu - X) dt + sigma dW.  Each member's forward map is one
stochastic Euler step from the previous observation; the update follows

    A_z = (Gamma - mean) / sqrt(l - 1),   A_x = (Xhat - mean) / sqrt(l - 1)
    K   = (A_z A_x^T) (A_x A_x^T + r)^{-1}
    Gamma <- Gamma + K (Y - Xhat),         Y = x_obs 1^T
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import ConfigurationError, DegenerateEnsembleError, NumericalError, ParameterError
from .noise import path_generator

PARAM_NAMES = ("theta", "mu", "sigma")
JITTER = 1e-12


@dataclass(frozen=True)
class Ensemble:
    """members[p, i]: parameter p (theta, mu, sigma) of member i."""

    members: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.members.ndim != 2 or self.members.shape[0] != 3:
            raise ParameterError(f"ensemble must have shape (3, l), got {self.members.shape}")
        if self.members.shape[1] < 2:
            raise DegenerateEnsembleError("ensemble needs at least two members")
        if not np.all(np.isfinite(self.members)):
            raise NumericalError("non-finite ensemble entries")

    @property
    def size(self) -> int:
        return self.members.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    def covariance(self) -> np.ndarray:
        return np.cov(self.members, ddof=1)

    def cov_trace(self) -> float:
        A = self.members - self.mean[:, None]
        return float(np.sum(A * A) / (self.size - 1))


@dataclass(frozen=True)
class EnkfConfig:
    n_members: int = 250
    theta_prior: tuple = (0.0, 5.0)
    mu_prior: tuple = (-3.0, 3.0)
    sigma_prior: tuple = (0.0, 0.5)
    obs_noise: float = 1e-3
    n_steps: int = 300
    dt: float = 0.01
    seed: int = 0
    tail: int = 5
    stochastic_forecast: bool = True

    def __post_init__(self):
        if not self.obs_noise > 0:
            raise ConfigurationError("observation noise r must be positive")
        for name in ("theta_prior", "mu_prior", "sigma_prior"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigurationError(f"{name} bounds must be ordered, got ({lo}, {hi})")
        if self.n_members < 2:
            raise ConfigurationError("need at least two ensemble members")
        if not 1 <= self.tail <= self.n_steps:
            raise ConfigurationError("tail length must lie in [1, n_steps]")


def prior_ensemble(config: EnkfConfig) -> Ensemble:
    rng = path_generator(config.seed, 0, stream=1001)
    bounds = np.array([config.theta_prior, config.mu_prior, config.sigma_prior])
    u = rng.random((3, config.n_members))
    return Ensemble(bounds[:, :1] + (bounds[:, 1:] - bounds[:, :1]) * u)


def forecast(ensemble: Ensemble, prev_obs: float, dt: float, seed: int, step: int, stochastic: bool = True) -> np.ndarray:
    """One Euler step per member from ``prev_obs``; member noise keyed by (seed, step)."""
    theta, mu, sigma = ensemble.members
    pred = prev_obs + theta * (mu - prev_obs) * dt
    if stochastic:
        dW = np.sqrt(dt) * path_generator(seed, step, stream=1002).standard_normal(ensemble.size)
        pred = pred + sigma * dW
    return pred


def kalman_gain(A_z: np.ndarray, A_x: np.ndarray, r: float) -> np.ndarray:
    S = A_x @ A_x.T + r * np.eye(A_x.shape[0])
    C = A_z @ A_x.T
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(C))):
        raise NumericalError("non-finite Kalman gain")
    try:
        K = la.solve(S, C.T, assume_a="pos").T
    except la.LinAlgError:
        K = la.solve(S + JITTER * np.eye(S.shape[0]), C.T, assume_a="pos").T
    if not np.all(np.isfinite(K)):
        raise NumericalError("non-finite Kalman gain")
    return K


def analysis(ensemble: Ensemble, predictions: np.ndarray, observation: float, r: float):
    """Apply the update to given member predictions; returns (new ensemble, gain)."""
    l = ensemble.size
    X = np.atleast_2d(predictions)
    A_z = (ensemble.members - ensemble.mean[:, None]) / np.sqrt(l - 1)
    A_x = (X - X.mean(axis=1, keepdims=True)) / np.sqrt(l - 1)
    K = kalman_gain(A_z, A_x, r)
    Y = np.full_like(X, observation)
    return Ensemble(ensemble.members + K @ (Y - X)), K


def enkf_step(ensemble: Ensemble, observation: float, prev_observation: float, dt: float, r: float, seed: int,
              step: int, stochastic: bool = True) -> Ensemble:
    if ensemble.size < 2:
        raise DegenerateEnsembleError("ensemble needs at least two members")
    pred = forecast(ensemble, prev_observation, dt, seed, step, stochastic)
    return analysis(ensemble, pred, observation, r)[0]


@dataclass(frozen=True)
class EnkfResult:
    means: np.ndarray = field(repr=False)       # (n_steps + 1, 3), row 0 is the prior mean
    cov_traces: np.ndarray = field(repr=False)  # (n_steps + 1,)
    estimate: np.ndarray = field(repr=False)    # tail-averaged (theta, mu, sigma)
    ensemble: Ensemble = field(repr=False)

    @property
    def monotone_trace(self) -> bool:
        """Trace never increases (up to round-off relative to its size)."""
        d = np.diff(self.cov_traces)
        return bool(np.all(d <= 1e-12 * self.cov_traces[:-1]))


def run_enkf(observations, config: EnkfConfig) -> EnkfResult:
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 1 or obs.size < config.n_steps + 1:
        raise ParameterError(f"need at least {config.n_steps + 1} observations, got {obs.size}")
    ens = prior_ensemble(config)
    means = [ens.mean]
    traces = [ens.cov_trace()]
    for t in range(config.n_steps):
        ens = enkf_step(ens, obs[t + 1], obs[t], config.dt, config.obs_noise, config.seed, t,
                        config.stochastic_forecast)
        means.append(ens.mean)
        traces.append(ens.cov_trace())
    means = np.array(means)
    return EnkfResult(means, np.array(traces), means[-config.tail:].mean(axis=0), ens)


def simulate_ou_observations(theta: float, mu: float, sigma: float, x0: float, dt: float, n_steps: int,
                             seed: int) -> np.ndarray:
    """Euler-Maruyama ground-truth trajectory used as the observation sequence."""
    dW = np.sqrt(dt) * path_generator(seed, 0, stream=1003).standard_normal(n_steps)
    x = np.empty(n_steps + 1)
    x[0] = x0
    for k in range(n_steps):
        x[k + 1] = x[k] + theta * (mu - x[k]) * dt + sigma * dW[k]
    return x
