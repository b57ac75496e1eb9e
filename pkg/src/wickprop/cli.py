"""Command line entry point.

Stage subcommands read and write fixed file names inside ``--out`` so a
pipeline can be stepped through by hand::

    wickprop simulate --config ou.toml --out run/
    wickprop features --config ou.toml --out run/
    wickprop solve    --config ou.toml --out run/
    wickprop reconstruct --config ou.toml --out run/
    wickprop evaluate --config ou.toml --out run/

``run`` executes the whole pipeline for any experiment kind; ``enkf`` and
``sweep`` are the same as ``run`` restricted to their kinds.

Exit codes: 0 success, 2 configuration error, 3 numerical error,
4 capacity error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import ChaosIndexSet, WickFeatures, index_set, wick_features
from .config import ExperimentConfig, parse_config
from .errors import ConfigurationError, ShapeError, WickpropError
from .estimator import FitConfig, relative_l2, ridge_fit
from .experiments import (StageError, TRAIN_STREAM, _exact_mean_field, _heat_setup, emit_report,
                          run_experiment)
from .io import read_array, write_array
from .noise import NoiseBatch, QBrownian, gaussian_coords, simulate_brownian
from .parallel import THREADS_ENV
from .sde import (AffineSdeModel, PropagatorTable, WickDriftSdeModel, reconstruct_paths, simulate_em_sde,
                  solve_affine_propagators, solve_wick_drift_propagators)
from .spde import (CoefficientField, SemilinearSpdeModel, reconstruct_field, simulate_em_spde,
                   solve_heat_propagators, solve_semilinear_propagators)
from .timebasis import TimeGrid, make_basis

log = logging.getLogger("wickprop")

SDE_KINDS = ("ou", "gbm", "wick_drift")
SPDE_KINDS = ("heat_spde", "semilinear_spde")
STAGED_KINDS = SDE_KINDS + SPDE_KINDS

NOISE = "noise_increments.f64"
FEATURES = "features.f64"
INDEX_SET = "index_set.json"
PROPAGATORS = "propagators.f64"
RECONSTRUCTED = "reconstructed.f64"
REFERENCE = "reference.f64"
EVALUATION = "evaluation.json"


# --- helpers shared by the stage commands -----------------------------------

class _Stage:
    def __init__(self, config: ExperimentConfig, out: Path, threads):
        if config.kind not in STAGED_KINDS:
            raise ConfigurationError(
                f"stage commands support kinds {list(STAGED_KINDS)}; use 'wickprop run' for {config.kind!r}"
            )
        self.config = config
        self.out = out
        self.threads = threads
        self.grid = TimeGrid(config.get("grid", "T"), config.n_steps)
        self.spatial = config.kind in SPDE_KINDS
        out.mkdir(parents=True, exist_ok=True)

    def file(self, name: str) -> Path:
        return self.out / name

    def load(self, name: str) -> np.ndarray:
        p = self.file(name)
        if not p.is_file():
            raise ConfigurationError(f"missing input {p}; run the earlier stage first")
        return read_array(p)

    def save(self, name: str, values, **meta):
        meta.setdefault("seed", self.config.seed)
        meta.setdefault("horizon", self.grid.horizon)
        meta.setdefault("n_steps", self.grid.n_steps)
        for p in write_array(self.file(name), values, **meta):
            print(p)

    def basis(self):
        c = self.config["chaos"]
        return make_basis(c["basis"], c["n_time_modes"], self.grid)

    def index_set(self) -> ChaosIndexSet:
        c = self.config["chaos"]
        return index_set(c["n_components"], c["n_time_modes"], c["max_order"])

    def noise(self) -> NoiseBatch:
        return NoiseBatch(self.load(NOISE), self.grid, self.config.seed)

    def sde_model(self):
        m = self.config["model"]
        if self.config.kind == "ou":
            return AffineSdeModel.ou(m["theta"], m["sigma"], m["x0"], m["mu"])
        if self.config.kind == "gbm":
            return AffineSdeModel.gbm(m["mu"], m["sigma"], m["x0"])
        return WickDriftSdeModel(m["x0"], tuple(m["drift"]), m["sigma"])

    def reference(self) -> np.ndarray:
        """Euler-Maruyama trajectories on the stored noise (cached on disk)."""
        if self.file(REFERENCE).is_file():
            return read_array(self.file(REFERENCE))
        if self.spatial:
            heat = _heat_setup(self.config)
            if self.config.kind == "semilinear_spde":
                raise ConfigurationError("no pathwise reference for Wick-form reactions; pass --trajectories")
            ref = simulate_em_spde(heat.nu, heat.chi0, QBrownian(heat.spectrum, self.noise()), self.grid,
                                   threads=self.threads)
        else:
            model = self.sde_model()
            if isinstance(model, WickDriftSdeModel):
                if model.order > 1:
                    raise ConfigurationError("no pathwise reference for a nonlinear Wick drift; pass --trajectories")
                c = list(model.drift_coeffs) + [0.0]
                model = AffineSdeModel(model.x0, a=c[0], b=c[1], c=model.sigma)
            ref = simulate_em_sde(model, self.noise(), threads=self.threads)
        self.save(REFERENCE, ref)
        return ref

    def stored_index_set(self) -> ChaosIndexSet:
        p = self.file(INDEX_SET)
        if not p.is_file():
            raise ConfigurationError(f"missing input {p}; run the earlier stage first")
        return ChaosIndexSet.from_json(p.read_text())

    def table(self):
        iset = self.stored_index_set()
        values = self.load(PROPAGATORS)
        if self.spatial:
            return CoefficientField(values, iset, self.grid)
        return PropagatorTable(values, iset, self.grid)

    def features(self) -> WickFeatures:
        iset = self.stored_index_set()
        return WickFeatures(self.load(FEATURES), iset)


def cmd_simulate(stage: _Stage, args):
    cfg = stage.config
    n_paths = cfg.get("data", "n_paths")
    if stage.spatial:
        n_comp = cfg.get("model", "n_kl")
    else:
        n_comp = 1
    batch = simulate_brownian(n_paths, n_comp, stage.grid, cfg.seed, TRAIN_STREAM, stage.threads)
    stage.save(NOISE, batch.increments, layout="path,component,step")


def cmd_features(stage: _Stage, args):
    iset = stage.index_set()
    feats = wick_features(gaussian_coords(stage.noise(), stage.basis()), iset)
    stage.file(INDEX_SET).write_text(iset.dumps() + "\n")
    print(stage.file(INDEX_SET))
    stage.save(FEATURES, feats.values, layout="path,alpha")


def _write_table(stage: _Stage, table):
    stage.file(INDEX_SET).write_text(table.index_set.dumps() + "\n")
    print(stage.file(INDEX_SET))
    stage.save(PROPAGATORS, table.values, layout="alpha,t,x" if stage.spatial else "alpha,component,t")


def cmd_solve(stage: _Stage, args):
    cfg = stage.config
    basis, iset = stage.basis(), stage.index_set()
    if stage.spatial:
        heat = _heat_setup(cfg)
        if cfg.kind == "heat_spde":
            table = solve_heat_propagators(heat, basis, iset, stage.grid)
        else:
            model = SemilinearSpdeModel(heat, tuple(cfg.get("model", "reaction")))
            table = solve_semilinear_propagators(model, basis, iset, stage.grid, cfg.get("solver", "substeps"))
    else:
        model = stage.sde_model()
        substeps = cfg.get("solver", "substeps")
        if isinstance(model, AffineSdeModel):
            table = solve_affine_propagators(model, basis, iset, stage.grid, substeps)
        else:
            table = solve_wick_drift_propagators(model, basis, iset, stage.grid, substeps)
    _write_table(stage, table)


def cmd_fit(stage: _Stage, args):
    feats = stage.features()
    traj = read_array(args.trajectories) if args.trajectories else stage.reference()
    ridge = None if args.ridge is None else float(args.ridge)
    table = ridge_fit(traj, feats, FitConfig(args.estimator, ridge), stage.grid, spatial=stage.spatial)
    _write_table(stage, table)


def cmd_reconstruct(stage: _Stage, args):
    table, feats = stage.table(), stage.features()
    if feats.index_set != table.index_set:
        raise ShapeError("features and propagators were built on different index sets")
    recon = reconstruct_field(table, feats) if stage.spatial else reconstruct_paths(table, feats)
    stage.save(RECONSTRUCTED, recon, layout="path,t,x" if stage.spatial else "path,component,t")


def cmd_evaluate(stage: _Stage, args):
    recon = stage.load(RECONSTRUCTED)
    ref = read_array(args.trajectories) if args.trajectories else stage.reference()
    metrics = {"relative_l2": relative_l2(recon, ref)}
    if stage.config.kind == "heat_spde":
        table = stage.table()
        exact = _exact_mean_field(stage.config, _heat_setup(stage.config).x, stage.grid.times)
        metrics["mean_field_max_error"] = float(np.abs(table.mean - exact).max())
    stage.file(EVALUATION).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    for k in sorted(metrics):
        print(f"{k}\t{metrics[k]:.6g}")


def cmd_run(config: ExperimentConfig, args, kinds=None):
    if kinds and config.kind not in kinds:
        raise ConfigurationError(f"this command expects kind in {list(kinds)}, got {config.kind!r}")
    manifest = run_experiment(config, args.out, args.threads)
    sys.stdout.write(emit_report(manifest))


STAGES = {
    "simulate": (cmd_simulate, "simulate driving noise"),
    "features": (cmd_features, "project noise onto the basis and build Wick features"),
    "solve": (cmd_solve, "solve the propagator system"),
    "fit": (cmd_fit, "estimate propagators from trajectories"),
    "reconstruct": (cmd_reconstruct, "rebuild trajectories from propagators and features"),
    "evaluate": (cmd_evaluate, "compare reconstructions with a reference"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment TOML file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wickprop", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"wickprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in STAGES.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("fit", "evaluate"):
            p.add_argument("--trajectories", type=Path, default=None,
                           help="float64 trajectory file with JSON sidecar (default: Euler-Maruyama on the noise)")
        if name == "fit":
            p.add_argument("--estimator", choices=("ridge", "mc_projection"), default="ridge")
            p.add_argument("--ridge", type=float, default=None, help="ridge strength (default: scale-aware floor)")
    sub.add_parser("run", parents=[common], help="run the whole pipeline for the config")
    sub.add_parser("enkf", parents=[common], help="run an EnKF parameter-estimation experiment")
    sub.add_parser("sweep", parents=[common], help="run a sensitivity sweep")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        config = parse_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
        if args.out is None:
            args.out = Path(config.output_dir)
        if args.command == "run":
            cmd_run(config, args)
        elif args.command == "enkf":
            cmd_run(config, args, ("enkf",))
        elif args.command == "sweep":
            cmd_run(config, args, ("sensitivity",))
        else:
            STAGES[args.command][0](_Stage(config, args.out, args.threads), args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except WickpropError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
