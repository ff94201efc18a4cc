"""Command-line entry point: reproducible simulation, solving and verification runs.

Subcommands:

    simulate  full-manifold Brownian ensembles (endpoint CSV per path)
    sde       projected SDE system ensembles
    fpsolve   Fokker-Planck solves (grid CSV)
    verify    named statistical checks (TestReport JSON, exit 0 iff pass)
    dh        print support/density/volume of one leaf measure

Every run writes a manifest.json with the echoed configuration, tool version,
timestamp, wall time and sha256 of each output, sufficient to reproduce the
outputs bit-exactly with the same build.  Exit codes: 0 success/pass,
2 configuration error, 3 runtime numerical failure, 4 statistical
insufficiency or guard failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import dh as dh_mod
from . import fokker_planck as fp
from . import group_brownian as gb
from . import sde
from .errors import (ConfigurationError, DomainError, InsufficientDataError,
                     IntegrationError, ResolutionError, SchemeFailureError)
from .verify import CHECKS, run_check

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_STATISTICAL = 4

_FLOAT_FMT = "%.17g"  # full precision so reruns are bit-identical


def _fmt(v: float) -> str:
    return _FLOAT_FMT % v


def write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        rows = len(columns[0])
        for r in range(rows):
            fh.write(",".join(
                str(int(col[r])) if np.issubdtype(col.dtype, np.integer) else _fmt(col[r])
                for col in columns) + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, config: dict, outputs: list[str],
                   wall_time: float) -> str:
    manifest = {
        "command": command,
        "config": {k: v for k, v in config.items() if k != "fn"},
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall_time,
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment; no nesting."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    if not getattr(args, "config", None):
        return
    file_values = _load_config_file(args.config)
    actions = {}
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for sa in a.choices[args.cmd]._actions:  # the invoked subcommand only
                actions.setdefault(sa.dest, sa)
        else:
            actions.setdefault(a.dest, a)
    for key, raw in file_values.items():
        if not hasattr(args, key) or key not in actions:
            raise ConfigurationError(f"unknown config key {key!r}")
        action = actions[key]
        # command-line flags override the file: only fill values still at default
        if getattr(args, key) != action.default:
            continue
        if isinstance(action.default, bool) or isinstance(action, argparse._StoreTrueAction):
            setattr(args, key, raw.lower() in ("1", "true", "yes", "on"))
        elif action.type is not None:
            setattr(args, key, action.type(raw))
        else:
            setattr(args, key, raw)


def _default_seed() -> int:
    return int(os.environ.get("LGMM_SEED", "0"))


def _resolve_steps(t: float, dt: float | None, n_steps: int | None) -> int:
    if n_steps is not None:
        return n_steps
    if dt is None:
        raise ConfigurationError("provide either --dt or --n-steps")
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-12 * max(1.0, abs(t)):
        raise ConfigurationError(f"dt {dt} does not divide t {t} into whole steps")
    return n


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    t0 = time.time()
    out_dir = _ensure_out(args)
    n_steps = _resolve_steps(args.t, args.dt, args.n_steps)
    outputs = []
    header = ["path"] + list(gb.STATE_COLUMNS[args.manifold])
    ens = gb.simulate_group_ensemble(args.manifold, args.scheme, args.t, n_steps,
                                     args.paths, args.seed,
                                     renormalize=args.renormalize, threads=args.threads)
    endpoint_csv = os.path.join(out_dir, "endpoints.csv")
    ids = np.arange(args.paths)
    write_csv(endpoint_csv, header, [ids] + [ens.states[:, k] for k in range(ens.states.shape[1])])
    outputs.append(endpoint_csv)
    if args.full_paths:
        paths_csv = os.path.join(out_dir, "paths.csv")
        cols = {h: [] for h in ["path", "step", "t"] + header[1:]}
        for i in range(args.paths):
            p = gb.simulate_group_path(args.manifold, args.scheme, args.t, n_steps,
                                       args.seed, path_index=i, renormalize=args.renormalize)
            cols["path"].append(np.full(n_steps + 1, i))
            cols["step"].append(np.arange(n_steps + 1))
            cols["t"].append(p.times)
            for k, h in enumerate(header[1:]):
                cols[h].append(p.states[:, k])
        write_csv(paths_csv, list(cols), [np.concatenate(v) for v in cols.values()])
        outputs.append(paths_csv)
    write_manifest(out_dir, "simulate", vars(args) | {"n_steps": n_steps}, outputs,
                   time.time() - t0)
    return EXIT_OK


def cmd_sde(args) -> int:
    t0 = time.time()
    out_dir = _ensure_out(args)
    n_steps = _resolve_steps(args.t, args.dt, args.n_steps)
    system = sde.get_system(args.system)
    x0 = None
    if args.x0:
        x0 = [float(v) for v in args.x0.split(",")]
    ens = sde.integrate_ensemble(system, x0=x0, t_end=args.t, n_steps=n_steps,
                                 n_paths=args.paths, master_seed=args.seed,
                                 noise_scale=args.noise_scale, threads=args.threads)
    header = ["path"] + list(system.state_names)
    endpoint_csv = os.path.join(out_dir, "endpoints.csv")
    ids = np.arange(args.paths)
    write_csv(endpoint_csv, header,
              [ids] + [ens.endpoints[:, k] for k in range(system.dimension)])
    outputs = [endpoint_csv]
    if args.full_paths:
        paths_csv = os.path.join(out_dir, "paths.csv")
        cols = {h: [] for h in ["path", "step", "t"] + header[1:]}
        for i in range(args.paths):
            p = sde.integrate_path(system, x0=x0, t_end=args.t, n_steps=n_steps,
                                   master_seed=args.seed, path_index=i,
                                   noise_scale=args.noise_scale)
            cols["path"].append(np.full(n_steps + 1, i))
            cols["step"].append(np.arange(n_steps + 1))
            cols["t"].append(p.times)
            for k, h in enumerate(header[1:]):
                cols[h].append(p.states[:, k])
        write_csv(paths_csv, list(cols), [np.concatenate(v) for v in cols.values()])
        outputs.append(paths_csv)
    write_manifest(out_dir, "sde", vars(args) | {"n_steps": n_steps}, outputs,
                   time.time() - t0)
    return EXIT_OK


def cmd_fpsolve(args) -> int:
    t0 = time.time()
    out_dir = _ensure_out(args)
    eq = fp.get_equation(args.equation)
    if eq.dim == 1:
        grid = (fp.grid_s3_x(args.nodes) if eq.id == "fp1-s3"
                else fp.grid_h3_w(args.nodes, args.lambda_max))
    else:
        grid = (fp.grid_s3_disc(args.nodes) if eq.id == "fp2-s3"
                else fp.grid_h3_wc(args.nodes, args.lambda_max))
    if args.init == "uniform":
        p0 = fp.uniform_density(grid)
    elif args.init == "mollified-delta":
        epsilon = args.epsilon if args.epsilon is not None else 5.0 * grid.spacings[0]
        p0 = fp.mollified_delta(eq.id[-2:], epsilon, grid)
    else:
        raise ConfigurationError(f"unknown initial condition {args.init!r}")
    sol = fp.solve_fp(eq, p0, t_end=args.t, dt=args.dt, leak_tol=args.leak_tol)

    grid_csv = os.path.join(out_dir, "density.csv")
    if eq.dim == 1:
        name = "x" if eq.id == "fp1-s3" else "w"
        write_csv(grid_csv, [name, "p"], [sol.axes[0], sol.values])
    else:
        names = ("x", "y") if eq.id == "fp2-s3" else ("w", "c")
        xx, yy = np.meshgrid(sol.axes[0], sol.axes[1], indexing="ij")
        write_csv(grid_csv, [*names, "p"],
                  [xx.ravel(), yy.ravel(), sol.values.ravel()])
    print(f"mass drift: {sol.meta['mass_drift']:.3e}")
    print(f"boundary leakage: {sol.meta['leakage']:.3e}")
    write_manifest(out_dir, "fpsolve", vars(args), [grid_csv], time.time() - t0)
    if sol.meta["leakage"] > args.leak_tol:
        return EXIT_STATISTICAL
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.time()
    out_dir = _ensure_out(args)
    params = {}
    if args.paths is not None:
        params["n_paths"] = args.paths
    if args.t is not None:
        params["t"] = args.t
    if args.dt is not None:
        params["dt"] = args.dt
    if args.seed is not None:
        params["seed"] = args.seed
    if args.check.startswith(("stationary", "product-persistence")):
        # grid-based checks are deterministic: no paths/seed parameters
        params.pop("n_paths", None)
        params.pop("seed", None)
        params.pop("dt", None)
    report = run_check(args.check, **params)
    report_path = os.path.join(out_dir, f"report-{args.check}.json")
    with open(report_path, "w") as fh:
        fh.write(report.to_json(indent=2, sort_keys=True))
        fh.write("\n")
    print(f"{args.check}: {'PASS' if report.passed else 'FAIL'} "
          f"(statistic={report.statistic:.6g}, "
          f"{'p=%.4g' % report.p_value if report.p_value is not None else 'distance=%.4g' % report.distance})")
    write_manifest(out_dir, "verify", vars(args), [report_path], time.time() - t0)
    return EXIT_OK if report.passed else EXIT_STATISTICAL


def cmd_dh(args) -> int:
    lo, hi = dh_mod.dh_support(args.family, args.parameter)
    print(json.dumps({
        "family": args.family,
        "parameter": args.parameter,
        "support": [lo, hi],
        "normalized_density": dh_mod.dh_normalized_density(args.family, args.parameter,
                                                           0.5 * (lo + hi)),
        "volume": dh_mod.dh_volume(args.family, args.parameter),
    }, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgmm",
        description="Brownian motion on R^3, S^3 and H^3: simulation, "
                    "Fokker-Planck solving and conditional-law verification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, paths_default=1000):
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--out", default="lgmm-out", help="output directory")
        p.add_argument("--seed", type=int, default=_default_seed(),
                       help="master seed (default: LGMM_SEED or 0)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--paths", type=int, default=paths_default)
        p.add_argument("--t", type=float, default=1.0)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--n-steps", type=int, default=None)

    p = sub.add_parser("simulate", help="full-manifold Brownian ensemble")
    common(p)
    p.add_argument("--manifold", required=True, choices=sorted(gb.SCHEMES))
    p.add_argument("--scheme", required=True,
                   choices=sorted({s for v in gb.SCHEMES.values() for s in v}))
    p.add_argument("--renormalize", action="store_true",
                   help="project the Euler scheme back to the unit sphere each step")
    p.add_argument("--full-paths", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sde", help="projected SDE system ensemble")
    common(p)
    p.add_argument("--system", required=True, choices=sorted(sde.SYSTEMS))
    p.add_argument("--x0", help="comma-separated start state (default: system convention)")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--full-paths", action="store_true")
    p.set_defaults(fn=cmd_sde)

    p = sub.add_parser("fpsolve", help="Fokker-Planck finite-difference solve")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", default="lgmm-out")
    p.add_argument("--equation", required=True, choices=sorted(fp.FP_EQUATIONS))
    p.add_argument("--nodes", type=int, default=401)
    p.add_argument("--init", default="uniform", choices=("uniform", "mollified-delta"))
    p.add_argument("--epsilon", type=float, default=None,
                   help="mollification width (default 5h)")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--lambda-max", type=float, default=None)
    p.add_argument("--leak-tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_fpsolve)

    p = sub.add_parser("verify", help="named statistical check")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", default="lgmm-out")
    p.add_argument("--check", required=True, choices=sorted(CHECKS))
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("dh", help="print one leaf measure")
    p.add_argument("--family", required=True, choices=dh_mod.FAMILIES)
    p.add_argument("--parameter", type=float, required=True)
    p.set_defaults(fn=cmd_dh)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, parser)
        if getattr(args, "lambda_max", 0) is None:
            args.lambda_max = (fp.DEFAULT_LAMBDA_MAX
                               if args.equation.startswith("fp1") else 3.0)
        return args.fn(args)
    except (ConfigurationError, ResolutionError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, SchemeFailureError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL


if __name__ == "__main__":
    sys.exit(main())
