"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from contactid.campaign import (
    METHODS,
    _execute,
    _trajectory_dump,
    compare_methods,
    dumps_json,
    emit_results,
    experiment_from_dump,
    load_trajectory,
    read_campaign_csv,
    run_campaign,
    write_atomic,
)
from contactid.config import load_config
from contactid.design import DesignVariables, design_experiment, random_design
from contactid.errors import ConfigurationError, DivergenceError, DomainError, EvaluationError
from contactid.estimation import Dataset, fit_mle, param_error

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contactid", description="Contact-rich experiment design and identification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=False):
        p.add_argument("--config", required=True, help="TOML campaign configuration")
        p.add_argument("--seed", type=_u64, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        if method:
            p.add_argument("--method", choices=METHODS, default=None)

    p = sub.add_parser("simulate", help="roll out one design on the ground truth and dump it")
    common(p)
    p.add_argument("--design", type=_floats, default=None, help="design values; random if omitted")
    p.add_argument("--index", type=int, default=1, help="experiment index for the random streams")

    p = sub.add_parser("design", help="solve one information-maximizing design")
    common(p)
    p.add_argument("--theta", type=_floats, default=None, help="parameter estimate; Θ midpoint if omitted")
    p.add_argument("--dump-trajectories", action="store_true", help="also roll the design out and dump it")

    p = sub.add_parser("estimate", help="fit parameters to dumped trajectories")
    common(p)
    p.add_argument("--data", required=True, nargs="+", help="trajectory JSON files")
    p.add_argument("--theta", type=_floats, default=None, help="initial estimate; Θ midpoint if omitted")

    p = sub.add_parser("run-campaign", help="run the full design/execute/estimate loop")
    common(p, method=True)
    p.add_argument("--dump-trajectories", action="store_true")

    p = sub.add_parser("compare", help="error reduction of a Fisher campaign against a random one")
    p.add_argument("fisher_csv")
    p.add_argument("random_csv")
    p.add_argument("--out", default=None, help="directory for comparison.json")
    return parser


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _theta(values, cfg):
    if values is None:
        return cfg.space.midpoint
    if values.size != len(cfg.space.labels):
        raise ConfigurationError(f"--theta needs {len(cfg.space.labels)} values")
    theta = cfg.space.lower.replace_values(values)
    if not cfg.space.contains(theta):
        raise ConfigurationError("--theta lies outside the parameter space")
    return theta


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    space = cfg.design.space
    if args.design is None:
        design = random_design(cfg.design, np.random.default_rng([int(cfg.seed), 2, args.index]))
    else:
        if args.design.size != space.dim or not space.contains(args.design):
            raise ConfigurationError(f"--design needs {space.dim} values inside the design bounds")
        design = DesignVariables(args.design, space.names)
    traj, readings = _execute(design, cfg, np.random.default_rng([int(cfg.seed), 3, args.index]))
    out = _out_dir(args, cfg)
    write_atomic(out / f"trajectory_{args.index}.json",
                 dumps_json(_trajectory_dump(traj, readings, design, args.index, cfg)))
    print(f"contact steps {traj.contact_steps(0.1)}  max normal force {traj.max_normal_force():.6g}")
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    theta = _theta(args.theta, cfg)
    result = design_experiment(theta, cfg.system, cfg.sensor, cfg.contact, cfg.design)
    out = _out_dir(args, cfg)
    write_atomic(out / "design.json", dumps_json({
        "theta": list(theta.values),
        "names": list(result.design.names),
        "values": result.design.values.tolist(),
        "objective": result.objective,
    }))
    if args.dump_trajectories:
        traj, readings = _execute(result.design, cfg, np.random.default_rng([int(cfg.seed), 3, 1]))
        write_atomic(out / "trajectory_1.json", dumps_json(_trajectory_dump(traj, readings, result.design, 1, cfg)))
    print(f"objective {result.objective:.17g}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    data = Dataset()
    for path in args.data:
        data = data.add(experiment_from_dump(load_trajectory(path), cfg.system))
    fit = fit_mle(data, _theta(args.theta, cfg), cfg.space, cfg.system, cfg.sensor, cfg.contact, cfg.fit)
    out = _out_dir(args, cfg)
    write_atomic(out / "estimate.json", dumps_json({
        "system": cfg.system.kind,
        "experiments": len(data),
        "labels": list(fit.theta.labels),
        "values": list(fit.theta.values),
        "nll": fit.nll,
        "param_error": param_error(fit.theta, cfg.theta_true),
    }))
    print(" ".join(f"{k}={v:.6g}" for k, v in fit.theta.as_dict().items()))
    return EXIT_OK


def cmd_run_campaign(args) -> int:
    cfg = load_config(args.config, seed=args.seed, method=args.method)
    out = args.out if args.out is not None else cfg.output_dir
    try:
        records = run_campaign(cfg, keep_trajectories=args.dump_trajectories)
    except (DivergenceError, EvaluationError) as exc:
        emit_results(getattr(exc, "partial_records", []), cfg, out)
        raise
    emit_results(records, cfg, out)
    last = records[-1]
    print(f"{cfg.method} seed {cfg.seed}: {len(records)} experiments, final error {last.param_error:.6g}, "
          f"cumulative information {last.cum_fim_trace:.6g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    result = compare_methods(read_campaign_csv(args.fisher_csv), read_campaign_csv(args.random_csv))
    print(result.report())
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_atomic(out / "comparison.json", dumps_json({
            "error_reduction_pct": result.error_reduction_pct,
            "info_ratio": result.info_ratio,
            "fisher_error": result.fisher_error,
            "random_error": result.random_error,
        }))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "design": cmd_design,
    "estimate": cmd_estimate,
    "run-campaign": cmd_run_campaign,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, EvaluationError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
