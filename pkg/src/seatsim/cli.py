"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 simulation divergence,
4 missing data (channels, references, files).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numba
import numpy as np
import pydantic
import scipy

from . import __version__
from .ablation import MODES, ablate
from .analysis import MissingChannel, read_frfs, trajectory_frfs, write_frfs
from .calibration import calibrate
from .config import ConfigError, RunConfig, config_schema, default_config, load_config, with_values
from .simulation import (
    SimulationDiverged, SnapshotMismatch, TrajectoryLog, load_restart, run, save_restart, warm_up,
)

log = logging.getLogger("seatsim")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISSING = 0, 2, 3, 4
OUT_ENV = "SEATSIM_OUT"


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def versions() -> dict:
    return {"seatsim": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pydantic": pydantic.__version__}


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "seatsim_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = with_values(cfg, {"excitation.seed": args.seed})
    return cfg


def write_manifest(out: Path, command: str, cfg: RunConfig, wall: float, sim_time: float = 0.0,
                   outputs=(), **extra) -> Path:
    m = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.excitation.seed,
        "versions": versions(),
        "wall_time_s": wall,
        "simulated_time_s": sim_time,
        "real_time_factor": sim_time / wall if wall > 0 and sim_time > 0 else None,
        "outputs": sorted(outputs),
        **extra,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(m, indent=2))
    return path


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    model = cfg.build_model()
    restart = load_restart(args.restart, model) if args.restart else None
    jit = warm_up(model, cfg.simulation_config())
    t0 = time.perf_counter()
    res = run(model, cfg.simulation_config(), cfg.excitation_signal(), restart=restart)
    wall = time.perf_counter() - t0
    res.log.to_csv(out / "trajectory.csv")
    save_restart(out / "restart.json", res.snapshot)
    (out / "config.json").write_text(cfg.canonical_json())
    write_manifest(out, "simulate", cfg, wall, res.simulated_time,
                   ["trajectory.csv", "restart.json", "config.json"], ndof=model.ndof, kernel_warm_up_s=jit)
    print(f"simulated {res.simulated_time:.3f} s in {wall:.2f} s (real-time factor {res.simulated_time / wall:.2f})")
    return EXIT_OK


def cmd_frf(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    traj = TrajectoryLog.from_csv(args.trajectory)
    pairs = [tuple(p) for p in args.pair] if args.pair else cfg.channel_pairs()
    t0 = time.perf_counter()
    frfs = trajectory_frfs(traj, pairs, cfg.estimator(), t0=cfg.excitation.settle_time)
    write_frfs(frfs, out)
    write_manifest(out, "frf", cfg, time.perf_counter() - t0, outputs=[f"{k}.csv" for k in frfs] + ["index.json"])
    print(f"wrote {len(frfs)} FRF tables to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    reference = read_frfs(args.reference)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        result, fitted = calibrate(cfg, reference, seed=cfg.excitation.seed,
                                   workers=args.workers or default_workers(), budget=args.budget)
    wall = time.perf_counter() - t0
    result.write_trace(out / "trace.csv")
    (out / "fitted_config.json").write_text(fitted.canonical_json())
    write_manifest(out, "calibrate", cfg, wall, outputs=["trace.csv", "fitted_config.json"],
                   evaluations=result.evaluations, best_cost=result.cost, params=result.params())
    print(f"best cost {result.cost:.6g} after {result.evaluations} evaluations")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    model = cfg.build_model()
    restart = load_restart(args.restart, model) if args.restart else None
    jit = warm_up(model, cfg.simulation_config())
    t0 = time.perf_counter()
    report, res = ablate(model, args.mode, cfg.simulation_config(), cfg.excitation_signal(),
                         cfg.ablation.stiffness_factor, cfg.estimator(), restart=restart)
    wall = time.perf_counter() - t0
    name = f"drift_{args.mode}.json"
    (out / name).write_text(report.to_json())
    write_manifest(out, "ablate", cfg, wall, res.simulated_time, [name], mode=args.mode, kernel_warm_up_s=jit)
    print(f"{args.mode}: head pitch drift {report.head_pitch_drift_deg:+.3f} deg, "
          f"trunk forward drift {report.trunk_forward_drift_m * 1e3:+.2f} mm")
    return EXIT_OK


def cmd_config(args) -> int:
    doc = config_schema() if args.what == "schema" else json.loads(default_config().canonical_json())
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_describe(args) -> int:
    cfg = _config(args)
    model = cfg.build_model()
    print(json.dumps({"dof": model.ndof, "segments": model.tree.nbodies,
                      "mass_kg": model.tree.total_mass, "joints": model.tree.dof_names}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seatsim", description="Seated occupant vibration simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="overrides excitation.seed")
        if out:
            sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./seatsim_out)")

    sp = sub.add_parser("simulate", help="settle and run the excitation")
    common(sp)
    sp.add_argument("--restart", help="resume from a restart snapshot instead of settling")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("frf", help="estimate FRFs from a trajectory CSV")
    sp.add_argument("trajectory")
    common(sp)
    sp.add_argument("--pair", nargs=2, action="append", metavar=("INPUT", "OUTPUT"),
                    help="channel pair (repeatable; default from the config)")
    sp.set_defaults(func=cmd_frf)

    sp = sub.add_parser("calibrate", help="fit parameters to reference FRFs")
    common(sp)
    sp.add_argument("--reference", required=True, help="FRF directory or index.json")
    sp.add_argument("--workers", type=int, help="parallel simulations (default: available cores)")
    sp.add_argument("--budget", type=int, help="overrides calibration.budget")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("ablate", help="controller ablation and posture drift")
    common(sp)
    sp.add_argument("--mode", required=True, choices=MODES)
    sp.add_argument("--restart", help="resume from a restart snapshot instead of settling")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("config", help="print the default config or its JSON schema")
    sp.add_argument("what", choices=("defaults", "schema"))
    sp.add_argument("--out", help="write to a file instead of stdout")
    sp.set_defaults(func=cmd_config)

    sp = sub.add_parser("describe", help="print DoF and segment counts of the configured model")
    common(sp, out=False)
    sp.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, pydantic.ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingChannel, FileNotFoundError, SnapshotMismatch) as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except KeyError as exc:
        print(f"missing data: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        # model construction, reference bands, budget preconditions
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING if "reference" in str(exc) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
