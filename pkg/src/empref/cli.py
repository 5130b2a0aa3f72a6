"""Command-line interface: ``empref <subcommand> [flags]``.

Exit status is 0 on success, 2 for invalid input or configuration and 3 when
the numerics fail (zero marginal density, a stalled solver).

Config JSON (every key optional; flags override it)::

    {"model": "gauss-location", "sigma": 0.3,
     "grid": {"a": 0, "b": 4, "J": 200},
     "penalty": "missing_info", "gamma": 1.0, "gammas": [0.01, 0.1, 1],
     "seed": 0, "M": 100,
     "solver": {"max_iters": 5000, "tol": 1e-9}}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, EmprefError, NumericalError
from .estimation import SolverConfig, solve_mple
from .grid import make_uniform_grid, read_density_csv, uniform_density, write_density_csv
from .harness import (
    estimate_result_rows,
    run_invariance_experiment,
    run_restriction_experiment,
    run_two_point_demo,
)
from .information import PenaltySpec, jeffreys_prior
from .models import (
    Dataset,
    TwoPointModel,
    bimodal_truth,
    load_config,
    model_from_config,
    sample_dataset,
)
from .selection import DEFAULT_GAMMAS, loo_cross_validate

log = logging.getLogger("empref")

DEFAULT_MODEL = {"model": "gauss-location", "sigma": 0.3}
DEFAULT_GRID = {"a": 0.0, "b": 4.0, "J": 200}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _nonneg_float(flag):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be a number, got {s!r}") from None
        if not (v >= 0 and np.isfinite(v)):
            raise argparse.ArgumentTypeError(f"{flag} must be finite and >= 0, got {s}")
        return v
    return conv


def _positive_int(flag):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be an integer, got {s!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be >= 1, got {s}")
        return v
    return conv


def _gamma_list(s):
    try:
        vals = [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--gammas must be comma-separated numbers, got {s!r}") from None
    if not vals or any(not (v >= 0 and np.isfinite(v)) for v in vals):
        raise argparse.ArgumentTypeError("--gammas needs values that are finite and >= 0")
    return vals


def _add_config(p, data=False):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--a", type=float, help="grid lower bound")
    p.add_argument("--b", type=float, help="grid upper bound")
    p.add_argument("--j", type=_positive_int("--j"), help="number of grid nodes")
    if data:
        p.add_argument("--data", type=Path, required=True, help="CSV with column x")


def _add_solver(p):
    p.add_argument("--max-iters", type=_positive_int("--max-iters"))
    p.add_argument("--tol", type=float)
    p.add_argument("--step-rule", choices=("backtracking", "fixed"))
    p.add_argument("--eta0", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="empref", description="Empirical Bayes prior estimation on a grid.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample a synthetic dataset")
    _add_config(p)
    p.add_argument("--m", type=_positive_int("--m"), help="number of measurements")
    p.add_argument("--seed", type=int)
    p.add_argument("--true-prior", default="bimodal",
                   help="'bimodal', 'uniform' or a theta,density CSV")
    p.add_argument("--out", type=Path, required=True, help="output data CSV")

    p = sub.add_parser("estimate", help="penalized maximum likelihood prior")
    _add_config(p, data=True)
    p.add_argument("--penalty")
    p.add_argument("--gamma", type=_nonneg_float("--gamma"))
    _add_solver(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("crossval", help="leave-one-out choice of gamma")
    _add_config(p, data=True)
    p.add_argument("--penalty")
    p.add_argument("--gammas", type=_gamma_list, help="comma-separated candidates")
    _add_solver(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("invariance-check", help="reparametrization experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=_positive_int("--m"), default=100)
    p.add_argument("--j", type=_positive_int("--j"), default=200)
    p.add_argument("--gamma", type=_nonneg_float("--gamma"), default=1.0)
    p.add_argument("--grid-mode", choices=("image", "fresh"), default="image")
    p.add_argument("--fresh-j", type=_positive_int("--fresh-j"))
    p.add_argument("--transform", choices=("exp", "identity"), default="exp")
    p.add_argument("--select-gamma", action="store_true")
    _add_solver(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("restriction-check", help="restriction experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=_positive_int("--m"), default=100)
    p.add_argument("--gamma", type=_nonneg_float("--gamma"), default=1.0)
    p.add_argument("--data-max", type=float)
    _add_solver(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("two-point-demo", help="information curve of the two-point model")
    p.add_argument("--config", type=Path, help="two-point model config")
    p.add_argument("--resolution", type=_positive_int("--resolution"), default=201)
    p.add_argument("--gamma", type=_nonneg_float("--gamma"), default=1.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("jeffreys", help="Jeffreys prior on the grid")
    _add_config(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


# --------------------------------------------------------------------------

def _resolve(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    model_cfg = {k: cfg[k] for k in ("model", "sigma", "means", "sds") if k in cfg}
    grid = dict(DEFAULT_GRID, **cfg.get("grid", {}))
    for key, flag in (("a", "a"), ("b", "b"), ("J", "j")):
        if getattr(args, flag, None) is not None:
            grid[key] = getattr(args, flag)
    solver = dict(SolverConfig().as_dict(), **cfg.get("solver", {}))
    for key in ("max_iters", "tol", "step_rule", "eta0"):
        if getattr(args, key, None) is not None:
            solver[key] = getattr(args, key)
    unknown = set(solver) - {f.name for f in fields(SolverConfig)}
    if unknown:
        raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
    return {"cfg": cfg, "model": model_cfg or dict(DEFAULT_MODEL), "grid": grid,
            "solver": solver}


def _pick(args, name, cfg, default):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _grid(r):
    g = r["grid"]
    try:
        return make_uniform_grid(float(g["a"]), float(g["b"]), int(g["J"]))
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad grid config: {exc}") from None


def _write_meta(path: Path, command: str, resolved: dict) -> None:
    meta = {"command": command, "version": __version__, **resolved}
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def _cmd_simulate(args, r):
    cfg = r["cfg"]
    model = model_from_config(r["model"])
    M = _pick(args, "m", {"m": cfg.get("M")}, 100)
    seed = _pick(args, "seed", cfg, 0)
    g = _grid(r)
    if args.true_prior == "bimodal":
        truth = bimodal_truth(g)
    elif args.true_prior == "uniform":
        truth = uniform_density(g)
    else:
        truth = read_density_csv(args.true_prior)
    data = sample_dataset(model, truth, int(M), int(seed))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(args.out)
    return {"model": r["model"], "grid": r["grid"], "M": int(M), "seed": int(seed),
            "true_prior": args.true_prior, "out": str(args.out)}, args.out.parent


def _cmd_estimate(args, r):
    cfg = r["cfg"]
    model = model_from_config(r["model"])
    penalty = PenaltySpec(_pick(args, "penalty", cfg, "missing_info"))
    gamma = float(_pick(args, "gamma", cfg, 1.0))
    if not gamma >= 0:
        raise ConfigError(f"--gamma must be >= 0, got {gamma}")
    config = SolverConfig(**r["solver"])
    data = Dataset.from_csv(args.data)
    res = solve_mple(model, data, _grid(r), penalty, gamma, config)
    if res.status == "no-progress":
        raise NumericalError("solver made no progress before meeting the tolerance")
    args.out.mkdir(parents=True, exist_ok=True)
    res.write(args.out)
    return {"model": r["model"], "grid": r["grid"], "solver": r["solver"],
            "penalty": penalty.kind, "gamma": gamma, "data": str(args.data),
            "result": estimate_result_rows(res)}, args.out


def _cmd_crossval(args, r):
    cfg = r["cfg"]
    model = model_from_config(r["model"])
    penalty = PenaltySpec(_pick(args, "penalty", cfg, "missing_info"))
    gammas = [float(v) for v in _pick(args, "gammas", cfg, list(DEFAULT_GAMMAS))]
    config = SolverConfig(**r["solver"])
    data = Dataset.from_csv(args.data)
    rep = loo_cross_validate(model, data, _grid(r), penalty, gammas, config)
    args.out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(args.out / "cv.csv")
    return {"model": r["model"], "grid": r["grid"], "solver": r["solver"],
            "penalty": penalty.kind, "gammas": gammas, "data": str(args.data),
            "chosen": rep.chosen, "all_converged": rep.all_converged}, args.out


def _cmd_invariance(args, r):
    config = SolverConfig(**r["solver"])
    rep = run_invariance_experiment(args.seed, args.m, args.j, args.gamma,
                                    grid_mode=args.grid_mode, transform=args.transform,
                                    select_gamma=args.select_gamma, fresh_J=args.fresh_j,
                                    config=config, out_dir=args.out)
    return {"seed": args.seed, "M": args.m, "J": args.j, "gamma": args.gamma,
            "grid_mode": args.grid_mode, "fresh_J": args.fresh_j, "transform": args.transform,
            "select_gamma": args.select_gamma, "solver": r["solver"],
            "report": rep.rows()}, args.out


def _cmd_restriction(args, r):
    config = SolverConfig(**r["solver"])
    rep = run_restriction_experiment(args.seed, args.m, args.gamma, data_max=args.data_max,
                                     config=config, out_dir=args.out)
    return {"seed": args.seed, "M": args.m, "gamma": args.gamma, "data_max": args.data_max,
            "solver": r["solver"], "report": rep.rows()}, args.out


def _cmd_two_point(args, r):
    cfg = dict(TwoPointModel().config(), **r["cfg"])
    model = model_from_config(cfg)
    if not isinstance(model, TwoPointModel):
        raise ConfigError("two-point-demo needs a two-point model config")
    if args.resolution < 3:
        raise ConfigError("--resolution must be at least 3")
    run_two_point_demo(args.resolution, args.gamma, model, out_dir=args.out)
    return {"model": model.config(), "resolution": args.resolution,
            "gamma": args.gamma}, args.out


def _cmd_jeffreys(args, r):
    model = model_from_config(r["model"])
    prior = jeffreys_prior(model, _grid(r))
    args.out.mkdir(parents=True, exist_ok=True)
    write_density_csv(prior, args.out / "prior.csv")
    return {"model": r["model"], "grid": r["grid"]}, args.out


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "crossval": _cmd_crossval,
    "invariance-check": _cmd_invariance,
    "restriction-check": _cmd_restriction,
    "two-point-demo": _cmd_two_point,
    "jeffreys": _cmd_jeffreys,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = _resolve(args)
        meta, out_dir = _COMMANDS[args.command](args, resolved)
        _write_meta(Path(out_dir) / "meta.json", args.command, meta)
    except ConfigError as exc:
        print(f"empref: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"empref: numerical failure: {exc}", file=sys.stderr)
        return 3
    except EmprefError as exc:
        print(f"empref: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"empref: error: {exc}", file=sys.stderr)
        return 2
    return 0


def cli_dispatch(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
