"""Staged experiment pipelines driven by an ``ExperimentConfig``.

Each run writes its artifacts into the configured output directory, then a
``manifest.json`` (resolved config, version, stage wall times, sha256 of
every artifact, metrics) and a plain-text ``report.txt`` rendered from the
manifest.  Numeric artifacts depend only on (config, seed); wall times live
in the manifest alone.
"""
from __future__ import annotations

import json
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import crossed_features, index_set, wick_features
from .config import ExperimentConfig
from .enkf import EnkfConfig, PARAM_NAMES, run_enkf, simulate_ou_observations
from .errors import ConfigurationError, WickpropError
from .estimator import (FitConfig, SweepSpec, TimeDictionary, extrapolate_propagators, relative_l2, ridge_fit,
                        rmse_per_node, sensitivity_sweep)
from .io import file_hash, write_array, write_csv
from .noise import NoiseBatch, correlate_brownian, gaussian_coords, power_law_spectrum, simulate_brownian, \
    simulate_q_brownian
from .sde import (AffineSdeModel, HestonModel, WickDriftSdeModel, reconstruct_paths, simulate_em_sde,
                  solve_affine_propagators, solve_wick_drift_propagators)
from .spde import (HeatSpdeModel, SemilinearSpdeModel, phi4_drift, reconstruct_field, simulate_em_spde,
                   solve_heat_propagators, solve_semilinear_propagators)
from .timebasis import TimeGrid, make_basis

MANIFEST_NAME = "manifest.json"
REPORT_NAME = "report.txt"

# Independent RNG streams per role so that train/test splits never share draws.
TRAIN_STREAM, TEST_STREAM, AUX_STREAM = 0, 1, 2


class StageError(WickpropError):
    """A pipeline stage failed; carries the stage name and the original exit code."""

    def __init__(self, stage: str, cause: BaseException, manifest=None):
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    status: str = "running"
    failure: dict | None = None
    stages: list = field(default_factory=list)     # [{"name", "seconds"}]
    files: dict = field(default_factory=dict)      # relative path -> sha256
    metrics: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)       # sweep-like tabular results

    def to_dict(self) -> dict:
        return {"config": self.config, "version": self.version, "status": self.status, "failure": self.failure,
                "stages": self.stages, "files": dict(sorted(self.files.items())), "metrics": self.metrics,
                "rows": self.rows}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**{k: data.get(k, v) for k, v in
                      {"config": {}, "version": "", "status": "", "failure": None, "stages": [], "files": {},
                       "metrics": {}, "rows": []}.items()})

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Run:
    """Bookkeeping for one pipeline run confined to ``out_dir``."""

    def __init__(self, config: ExperimentConfig, out_dir: Path, threads):
        self.config = config
        self.out = out_dir.resolve()
        self.threads = threads
        self.manifest = RunManifest(config=config.to_dict())
        self.current = None

    @contextmanager
    def stage(self, name: str):
        self.current = name
        start = time.perf_counter()
        yield
        self.manifest.stages.append({"name": name, "seconds": round(time.perf_counter() - start, 6)})
        self.current = None

    def path(self, name: str) -> Path:
        p = (self.out / name).resolve()
        if self.out not in p.parents:
            raise ConfigurationError(f"refusing to write outside the output directory: {name}")
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def _record(self, p: Path):
        self.manifest.files[p.relative_to(self.out).as_posix()] = file_hash(p)

    def array(self, name: str, values, **meta):
        meta.setdefault("seed", self.config.seed)
        for p in write_array(self.path(name), values, **meta):
            self._record(p)

    def csv(self, name: str, header, rows):
        self._record(write_csv(self.path(name), header, rows))

    def text(self, name: str, content: str):
        p = self.path(name)
        p.write_text(content)
        self._record(p)

    def metric(self, name: str, value):
        if isinstance(value, (np.floating, float)):
            value = float(value)
        elif isinstance(value, (np.integer,)):
            value = int(value)
        elif isinstance(value, np.bool_):
            value = bool(value)
        self.manifest.metrics[name] = value


def _grid(config: ExperimentConfig) -> TimeGrid:
    return TimeGrid(config.get("grid", "T"), config.n_steps)


def _grid_meta(grid: TimeGrid) -> dict:
    return {"horizon": grid.horizon, "n_steps": grid.n_steps}


def initial_field(shape: str, amplitude: float, x: np.ndarray) -> np.ndarray:
    if shape == "zero":
        return np.zeros_like(x)
    if shape == "sin":
        return amplitude * np.sin(2 * np.pi * x)
    if shape == "const":
        return np.full_like(x, amplitude)
    raise ConfigurationError(f"unknown initial condition {shape!r}")


def _propagator_artifacts(run: _Run, table, grid):
    run.text("index_set.json", table.index_set.dumps() + "\n")
    run.array("propagators.f64", table.values, **_grid_meta(grid), layout="alpha,component,t")
    p = run.path("propagators.csv")
    table.to_csv(p)
    run._record(p)


def _scalar_sde(run: _Run, model, solver):
    cfg = run.config
    chaos = cfg["chaos"]
    grid = _grid(cfg)
    with run.stage("simulate"):
        noise = simulate_brownian(cfg.get("data", "n_paths"), 1, grid, cfg.seed, TRAIN_STREAM, run.threads)
        run.array("noise_increments.f64", noise.increments, **_grid_meta(grid), layout="path,component,step")
    with run.stage("features"):
        basis = make_basis(chaos["basis"], chaos["n_time_modes"], grid)
        iset = index_set(1, chaos["n_time_modes"], chaos["max_order"])
        coords = gaussian_coords(noise, basis)
        feats = wick_features(coords, iset)
        run.array("gaussian_coords.f64", coords.xi, basis=basis.kind, layout="path,component,mode")
    with run.stage("solve"):
        table = solver(basis, iset, grid)
        _propagator_artifacts(run, table, grid)
    with run.stage("reconstruct"):
        recon = reconstruct_paths(table, feats)
        run.array("reconstructed.f64", recon, **_grid_meta(grid), layout="path,component,t")
    run.metric("n_steps", grid.n_steps)
    run.metric("index_set_size", len(iset))
    return noise, table, recon, grid


def _run_affine(run: _Run):
    cfg = run.config
    m = cfg["model"]
    if cfg.kind == "ou":
        model = AffineSdeModel.ou(m["theta"], m["sigma"], m["x0"], m["mu"])
    else:
        model = AffineSdeModel.gbm(m["mu"], m["sigma"], m["x0"])
    substeps = cfg.get("solver", "substeps")
    noise, table, recon, grid = _scalar_sde(
        run, model, lambda b, s, g: solve_affine_propagators(model, b, s, g, substeps))
    with run.stage("evaluate"):
        ref = simulate_em_sde(model, noise, threads=run.threads)
        run.array("reference.f64", ref, **_grid_meta(grid), layout="path,component,t")
        run.metric("relative_l2", relative_l2(recon, ref))
        uT = table.values[:, 0, -1]
        degs = table.index_set.degrees
        T = grid.horizon
        if cfg.kind == "ou":
            theta, sigma = m["theta"], m["sigma"]
            target = sigma**2 * (1 - np.exp(-2 * theta * T)) / (2 * theta) if theta != 0 else sigma**2 * T
            run.metric("variance_truncated", np.sum(uT[degs == 1] ** 2))
            run.metric("variance_exact", target)
            run.metric("variance_relative_gap", abs(np.sum(uT[degs == 1] ** 2) - target) / target)
        else:
            target = m["x0"] ** 2 * np.exp((2 * m["mu"] + m["sigma"] ** 2) * T)
            run.metric("second_moment_truncated", np.sum(uT**2))
            run.metric("second_moment_exact", target)
            run.metric("second_moment_relative_gap", abs(np.sum(uT**2) - target) / target)
        norms = table.degree_sup_norms()
        run.csv("degree_norms.csv", ["degree", "sup_norm"], enumerate(norms))


def _run_wick_drift(run: _Run):
    cfg = run.config
    m = cfg["model"]
    model = WickDriftSdeModel(m["x0"], tuple(m["drift"]), m["sigma"])
    substeps = cfg.get("solver", "substeps")
    noise, table, recon, grid = _scalar_sde(
        run, model, lambda b, s, g: solve_wick_drift_propagators(model, b, s, g, substeps))
    with run.stage("evaluate"):
        uT = table.values[:, 0, -1]
        run.metric("mean_final", uT[0])
        run.metric("second_moment_final", np.sum(uT**2))
        coeffs = list(m["drift"]) + [0.0, 0.0]
        if len(m["drift"]) <= 2:
            # a linear Wick drift is an ordinary affine drift, so EM is a valid reference
            affine = AffineSdeModel(m["x0"], a=coeffs[0], b=coeffs[1], c=m["sigma"])
            ref = simulate_em_sde(affine, noise, threads=run.threads)
            run.array("reference.f64", ref, **_grid_meta(grid), layout="path,component,t")
            run.metric("relative_l2", relative_l2(recon, ref))
        run.csv("degree_norms.csv", ["degree", "sup_norm"], enumerate(table.degree_sup_norms()))


def _heat_setup(cfg: ExperimentConfig):
    m = cfg["model"]
    n_x = cfg.get("grid", "n_x")
    spectrum = power_law_spectrum(m["n_kl"], n_x, m["sigma"], m["decay"])
    chi0 = initial_field(m["chi0"], m["chi0_amplitude"], spectrum.x)
    return HeatSpdeModel(m["nu"], spectrum, chi0)


def _exact_mean_field(cfg: ExperimentConfig, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Mean field of the heat equation from the initial condition alone."""
    m = cfg["model"]
    base = initial_field(m["chi0"], m["chi0_amplitude"], x)
    if m["chi0"] == "sin":
        return np.exp(-m["nu"] * (2 * np.pi) ** 2 * times)[:, None] * base[None, :]
    return np.broadcast_to(base, (times.size, x.size)).copy()


def _spde_common(run: _Run, heat: HeatSpdeModel, solver):
    cfg = run.config
    chaos = cfg["chaos"]
    grid = _grid(cfg)
    with run.stage("simulate"):
        q = simulate_q_brownian(heat.spectrum, grid, cfg.get("data", "n_paths"), cfg.seed, TRAIN_STREAM,
                                run.threads)
        run.array("kl_increments.f64", q.modes.increments, **_grid_meta(grid), layout="path,kl_mode,step")
    with run.stage("features"):
        basis = make_basis(chaos["basis"], chaos["n_time_modes"], grid)
        iset = index_set(chaos["n_components"], chaos["n_time_modes"], chaos["max_order"])
        feats = wick_features(gaussian_coords(q.modes, basis), iset)
    with run.stage("solve"):
        cf = solver(basis, iset, grid)
        run.text("index_set.json", iset.dumps() + "\n")
        run.array("coefficient_field.f64", cf.values, **_grid_meta(grid), n_x=heat.n_x, layout="alpha,t,x")
    with run.stage("reconstruct"):
        recon = reconstruct_field(cf, feats)
        run.array("reconstructed.f64", recon, **_grid_meta(grid), n_x=heat.n_x, layout="path,t,x")
    run.metric("n_steps", grid.n_steps)
    run.metric("index_set_size", len(iset))
    return q, cf, recon, grid


def _run_heat(run: _Run):
    cfg = run.config
    heat = _heat_setup(cfg)
    q, cf, recon, grid = _spde_common(run, heat, lambda b, s, g: solve_heat_propagators(heat, b, s, g))
    with run.stage("evaluate"):
        ref = simulate_em_spde(heat.nu, heat.chi0, q, grid, threads=run.threads)
        run.array("reference.f64", ref, **_grid_meta(grid), n_x=heat.n_x, layout="path,t,x")
        exact = _exact_mean_field(cfg, heat.x, grid.times)
        degs = cf.index_set.degrees
        run.metric("relative_l2", relative_l2(recon, ref))
        run.metric("fluctuation_relative_l2", relative_l2(recon - cf.mean, ref - cf.mean))
        run.metric("mean_field_max_error", np.abs(cf.mean - exact).max())
        run.metric("higher_order_max_abs", np.abs(cf.values[degs >= 2]).max(initial=0.0))


def _run_semilinear(run: _Run):
    cfg = run.config
    heat = _heat_setup(cfg)
    model = SemilinearSpdeModel(heat, tuple(cfg.get("model", "reaction")))
    substeps = cfg.get("solver", "substeps")
    _, cf, recon, grid = _spde_common(
        run, heat, lambda b, s, g: solve_semilinear_propagators(model, b, s, g, substeps))
    with run.stage("evaluate"):
        degs = cf.index_set.degrees
        norms = [np.abs(cf.values[degs == g]).max(initial=0.0) for g in range(int(degs.max()) + 1)]
        run.csv("degree_norms.csv", ["degree", "sup_norm"], enumerate(norms))
        run.csv("mean_final.csv", ["x", "value"], zip(heat.x, cf.mean[-1]))
        run.metric("mean_final_l2", np.sqrt(np.mean(cf.mean[-1] ** 2)))
        run.metric("sample_variance_final", np.mean(np.var(recon[:, -1], axis=0)))


def _ridge(v):
    return None if v == "auto" else float(v)


def phi41_ablation(cfg: ExperimentConfig, threads=None, run: _Run | None = None) -> list:
    """Test relative L2 for every max order 1..K and training sizes N/2 and N.

    Returns rows ``(max_order, n_train, relative_l2)``; the configured
    (K, N) pair is the last row.
    """
    m, chaos, data = cfg["model"], cfg["chaos"], cfg["data"]
    grid = _grid(cfg)
    spectrum = power_law_spectrum(m["n_kl"], cfg.get("grid", "n_x"), m["sigma"], m["decay"])
    chi0 = initial_field(m["chi0"], m["chi0_amplitude"], spectrum.x)
    stage = run.stage if run else (lambda name: _null())
    with stage("simulate"):
        q_train = simulate_q_brownian(spectrum, grid, data["n_train"], cfg.seed, TRAIN_STREAM, threads)
        q_test = simulate_q_brownian(spectrum, grid, data["n_test"], cfg.seed, TEST_STREAM, threads)
        X_train = simulate_em_spde(m["nu"], chi0, q_train, grid, drift=phi4_drift, threads=threads)
        X_test = simulate_em_spde(m["nu"], chi0, q_test, grid, drift=phi4_drift, threads=threads)
        if run:
            run.array("train_trajectories.f64", X_train, **_grid_meta(grid), layout="path,t,x")
            run.array("test_trajectories.f64", X_test, **_grid_meta(grid), layout="path,t,x")
    with stage("features"):
        basis = make_basis(chaos["basis"], chaos["n_time_modes"], grid)
        xi_train = gaussian_coords(q_train.modes, basis)
        xi_test = gaussian_coords(q_test.modes, basis)
    rows = []
    fit_cfg = FitConfig(data["estimator"], _ridge(data["ridge"]))
    sizes = sorted({max(1, data["n_train"] // 2), data["n_train"]})
    with stage("fit_evaluate"):
        for K in range(1, chaos["max_order"] + 1):
            iset = index_set(chaos["n_components"], chaos["n_time_modes"], K)
            f_train = wick_features(xi_train, iset)
            f_test = wick_features(xi_test, iset)
            for n in sizes:
                cf = ridge_fit(X_train[:n], f_train.subset(slice(0, n)), fit_cfg, grid, spatial=True)
                rows.append((K, n, relative_l2(reconstruct_field(cf, f_test), X_test)))
                if run and K == chaos["max_order"] and n == data["n_train"]:
                    run.array("coefficient_field.f64", cf.values, **_grid_meta(grid), layout="alpha,t,x")
                    run.text("index_set.json", iset.dumps() + "\n")
    return rows


@contextmanager
def _null():
    yield


def _run_phi41(run: _Run):
    cfg = run.config
    rows = phi41_ablation(cfg, run.threads, run)
    run.csv("ablation.csv", ["max_order", "n_train", "relative_l2"], rows)
    K, N, err = rows[-1]
    run.metric("relative_l2", err)
    run.metric("max_order", K)
    run.metric("n_train", N)
    run.metric("n_test", cfg.get("data", "n_test"))


def heston_windows(cfg: ExperimentConfig, seed: int | None = None, threads=None, run: _Run | None = None):
    """Fit on each leading window, extrapolate in time, score the remainder.

    Returns ``(rows, rmse_rows)`` where rows are ``(window, train_relative_l2,
    heldout_rmse)`` and rmse_rows are ``(window, step, t, rmse)`` for the
    held-out nodes.  RMSE is on the price component.
    """
    m, chaos, data = cfg["model"], cfg["chaos"], cfg["data"]
    seed = cfg.seed if seed is None else seed
    grid = _grid(cfg)
    model = HestonModel(mu=m["mu"], kappa=m["kappa"], theta_v=m["theta_v"], zeta=m["zeta"], rho=m["rho"],
                        s0=m["s0"], v0=m["v0"])
    n = data["n_paths"]
    w_s = simulate_brownian(n, 1, grid, seed, TRAIN_STREAM, threads)
    w_perp = simulate_brownian(n, 1, grid, seed, TEST_STREAM, threads)
    w_v = correlate_brownian(w_s, w_perp, model.rho)
    noise = NoiseBatch(np.concatenate([w_s.increments, w_v.increments], axis=1), grid, seed)
    X = simulate_em_sde(model, noise, threads=threads)
    if run:
        run.array("trajectories.f64", X, **_grid_meta(grid), layout="path,component(S,V),t")
    basis = make_basis(chaos["basis"], chaos["n_time_modes"], grid)
    block = index_set(1, chaos["n_time_modes"], chaos["max_order"])
    feats = crossed_features(wick_features(gaussian_coords(w_s, basis), block),
                             wick_features(gaussian_coords(w_v, basis), block), chaos["cross_order"])
    dictionary = TimeDictionary.polynomial(data["dictionary_degree"])
    rows, rmse_rows = [], []
    for w in data["windows"]:
        fit_cfg = FitConfig("ridge", _ridge(data["ridge"]), window_fraction=w / grid.n_steps)
        table = ridge_fit(X, feats, fit_cfg, grid)
        train_err = relative_l2(reconstruct_paths(table, feats), X[:, :, : table.grid.n_steps + 1])
        full = extrapolate_propagators(table, dictionary, grid)
        rmse = rmse_per_node(reconstruct_paths(full, feats)[:, 0], X[:, 0])
        held = np.arange(table.grid.n_steps + 1, grid.n_steps + 1)
        rows.append((w, train_err, float(rmse[held].mean())))
        rmse_rows.extend((w, int(k), grid.times[k], rmse[k]) for k in held)
    return rows, rmse_rows, len(feats.index_set)


def _run_heston(run: _Run):
    with run.stage("simulate_fit_extrapolate"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            rows, rmse_rows, n_features = heston_windows(run.config, threads=run.threads, run=run)
    with run.stage("evaluate"):
        run.csv("windows.csv", ["window", "train_relative_l2", "heldout_rmse"], rows)
        run.csv("heldout_rmse.csv", ["window", "step", "t", "rmse"], rmse_rows)
        run.metric("feller_warning", any("Feller" in str(w.message) for w in caught))
        run.metric("n_features", n_features)
        run.metric("train_relative_l2_max", max(r[1] for r in rows))
        for w, tr, ho in rows:
            run.metric(f"heldout_rmse_w{w}", ho)


def enkf_config(cfg: ExperimentConfig, seed: int | None = None) -> EnkfConfig:
    e = cfg["enkf"]
    return EnkfConfig(n_members=e["n_members"], theta_prior=tuple(e["theta_prior"]), mu_prior=tuple(e["mu_prior"]),
                      sigma_prior=tuple(e["sigma_prior"]), obs_noise=e["obs_noise"], n_steps=e["n_steps"],
                      dt=cfg.get("grid", "dt"), seed=cfg.seed if seed is None else seed, tail=e["tail"],
                      stochastic_forecast=e["stochastic_forecast"])


def enkf_trial(cfg: ExperimentConfig, seed: int | None = None):
    m = cfg["model"]
    ec = enkf_config(cfg, seed)
    obs = simulate_ou_observations(m["theta"], m["mu"], m["sigma"], m["x0"], ec.dt, ec.n_steps, ec.seed)
    return obs, run_enkf(obs, ec)


def _run_enkf(run: _Run):
    with run.stage("simulate"):
        cfg = run.config
        m = cfg["model"]
        ec = enkf_config(cfg)
        obs = simulate_ou_observations(m["theta"], m["mu"], m["sigma"], m["x0"], ec.dt, ec.n_steps, ec.seed)
        run.csv("observations.csv", ["step", "t", "x"], ((k, k * ec.dt, x) for k, x in enumerate(obs)))
    with run.stage("filter"):
        result = run_enkf(obs, ec)
    with run.stage("evaluate"):
        run.csv("enkf_steps.csv", ["step", "mean_theta", "mean_mu", "mean_sigma", "cov_trace"],
                ((k, *result.means[k], result.cov_traces[k]) for k in range(len(result.cov_traces))))
        for name, v in zip(PARAM_NAMES, result.estimate):
            run.metric(name, v)
        run.metric("monotone_cov_trace", result.monotone_trace)
        run.metric("final_cov_trace", result.cov_traces[-1])


def sweep_spec(cfg: ExperimentConfig) -> SweepSpec:
    m, chaos = cfg["model"], cfg["chaos"]
    if m["family"] == "gbm":
        model = AffineSdeModel.gbm(m["mu"], m["sigma"], m["x0"])
    else:
        model = AffineSdeModel.ou(m["theta"], m["sigma"], m["x0"], m["mu"])
    return SweepSpec(model=model, horizon=cfg.get("grid", "T"), n_steps=cfg.n_steps, basis_kind=chaos["basis"],
                     n_time_modes=chaos["n_time_modes"], max_order=chaos["max_order"],
                     n_paths=cfg.get("data", "n_paths"), n_test=cfg.get("sweep", "n_test"), seed=cfg.seed,
                     method=cfg.get("sweep", "method"))


def _run_sensitivity(run: _Run):
    cfg = run.config
    sw = cfg["sweep"]
    with run.stage("sweep"):
        rows = sensitivity_sweep(sweep_spec(cfg), sw["axis"], sw["values"])
    with run.stage("evaluate"):
        run.csv("sweep.csv", ["axis", "value", "relative_l2"], ((r["axis"], r["value"], r["relative_l2"]) for r in rows))
        run.manifest.rows = [{"value": r["value"], "relative_l2": r["relative_l2"],
                              "wall_time": round(r["wall_time"], 6)} for r in rows]
        run.metric("axis", sw["axis"])
        errs = [r["relative_l2"] for r in rows]
        run.metric("monotone_non_increasing", all(b <= a for a, b in zip(errs, errs[1:])))


RUNNERS = {
    "ou": _run_affine,
    "gbm": _run_affine,
    "wick_drift": _run_wick_drift,
    "heat_spde": _run_heat,
    "semilinear_spde": _run_semilinear,
    "phi41_estimation": _run_phi41,
    "heston_extrapolation": _run_heston,
    "enkf": _run_enkf,
    "sensitivity": _run_sensitivity,
}


def run_experiment(config: ExperimentConfig, out_dir=None, threads=None) -> RunManifest:
    """Execute every stage for ``config.kind`` and write artifacts plus manifest.

    On failure the manifest is still written, with ``status = "failed"`` and
    the failing stage recorded, and a ``StageError`` is raised.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(config, out, threads)
    run.text("config.toml", config.dumps())
    try:
        RUNNERS[config.kind](run)
    except Exception as exc:  # noqa: BLE001 - every failure is recorded before re-raising
        stage = run.current or "setup"
        run.manifest.status = "failed"
        run.manifest.failure = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        _finish(run)
        raise StageError(stage, exc, run.manifest) from exc
    run.manifest.status = "ok"
    _finish(run)
    return run.manifest


def _finish(run: _Run):
    run.path(MANIFEST_NAME).write_text(run.manifest.dumps())
    run.path(REPORT_NAME).write_text(emit_report(run.manifest))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def emit_report(manifest: RunManifest) -> str:
    """Plain-text summary: header, metrics (sorted by name), sweep rows, files."""
    cfg = manifest.config or {}
    lines = [
        "wickprop report",
        f"kind: {cfg.get('kind', '?')}",
        f"seed: {cfg.get('seed', '?')}",
        f"version: {manifest.version}",
        f"status: {manifest.status}",
    ]
    if manifest.failure:
        lines.append(f"failed stage: {manifest.failure['stage']} ({manifest.failure['error']})")
    if manifest.metrics:
        lines += ["", "metric\tvalue"]
        lines += [f"{k}\t{_fmt(manifest.metrics[k])}" for k in sorted(manifest.metrics)]
    if manifest.rows:
        keys = [k for k in manifest.rows[0] if k != "wall_time"]
        lines += ["", "\t".join(keys)]
        for row in sorted(manifest.rows, key=lambda r: r[keys[0]]):
            lines.append("\t".join(_fmt(row[k]) for k in keys))
    if manifest.stages:
        lines += ["", "stage\tseconds"]
        lines += [f"{s['name']}\t{s['seconds']:.3f}" for s in manifest.stages]
    csvs = sorted(f for f in manifest.files if f.endswith(".csv"))
    if csvs:
        lines += ["", "csv outputs"]
        lines += [f"  {f}" for f in csvs]
    return "\n".join(lines) + "\n"
