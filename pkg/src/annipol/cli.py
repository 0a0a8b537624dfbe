"""Command-line interface.

Subcommands: predict, oracle, simulate, select, analyze, run.  Errors are
reported as one line on stderr, ``error kind=<config|runtime> message="..."``,
with exit status 2 for configuration problems and 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from annipol import __version__, analysis, physics, pipeline
from annipol.config import RunConfig, bundled_configs, load_config, parse_text
from annipol.errors import AnnipolError, ConfigError
from annipol.eventio import (EventWriter, dumps_json, read_events, write_csv_rows, write_histogram, write_json,
                             write_text)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def parse_grid(text: str) -> np.ndarray:
    """``"82"``, ``"0,45,90"`` or ``"start:stop:step"`` (stop inclusive) to an array of degrees."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return start + step * np.arange(n)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed grid {text!r}") from None


def _load(args) -> RunConfig:
    src = args.config
    if src is not None and str(src).endswith(".json"):
        try:
            text = json.loads(Path(src).read_text())["config"]
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read config from manifest {src}: {exc}") from None
        cfg = parse_text(text)
    else:
        cfg = load_config(src)
    if args.seed is not None:
        cfg.rng.master_seed = args.seed
    if getattr(args, "n_pairs", None) is not None:
        cfg.run.n_pairs = args.n_pairs
    return cfg.validate()


def _prefix(args, cfg: RunConfig | None = None) -> str:
    if args.out_prefix:
        return args.out_prefix
    return cfg.output.prefix if cfg is not None else "annipol_out/run"


def _ensure_parent(path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def cmd_predict(args) -> int:
    theta = args.theta
    e2 = args.energy
    f, g = physics.kinematic_factors(theta)
    a511 = physics.analyzing_power(physics.ELECTRON_REST_ENERGY, theta)
    a_e2 = physics.analyzing_power(e2, theta)
    factors = [(float(t), float(x), float(y), float(p), float(q)) for t, x, y, p, q in zip(theta, f, g, a511, a_e2)]

    grid = []
    for t1 in theta:
        for t2 in theta:
            pred = physics.theory_modulation(physics.ELECTRON_REST_ENERGY, t1, e2, t2, args.kappa)
            grid.append((float(t1), float(t2), pred.mu, pred.R))
    tables = [("factors", ["theta_deg", "F", "G", "A_511", "A_E2"], factors),
              ("modulation", ["theta1_deg", "theta2_deg", "mu", "R"], grid)]

    if args.theta1_window and args.theta2_window:
        pred = physics.integrate_acceptance(tuple(args.theta1_window), tuple(args.theta2_window),
                                            physics.ELECTRON_REST_ENERGY, e2, args.kappa, n_bins=args.bins)
        tables.append(("acceptance", ["theta1_min", "theta1_max", "theta2_min", "theta2_max", "mu", "R"],
                       [(*args.theta1_window, *args.theta2_window, pred.mu, pred.R)]))

    if args.out_prefix:
        _ensure_parent(args.out_prefix)
        for name, header, rows in tables:
            write_csv_rows(f"{args.out_prefix}_{name}.csv", header, rows)
    if not args.quiet:
        for k, (name, header, rows) in enumerate(tables):
            if k:
                print()
            print(",".join(header))
            for row in rows:
                print(",".join(f"{v:.6f}" for v in row))
    return EXIT_OK


def cmd_oracle(args) -> int:
    pred = physics.integrate_acceptance((args.theta1_min, args.theta1_max), (args.theta2_min, args.theta2_max),
                                        args.e1, args.e2, args.kappa, n_bins=args.bins)
    rows = [(float(lo), float(hi), float(p)) for lo, hi, p in
            zip(pred.bin_edges[:-1], pred.bin_edges[1:], pred.bin_probabilities)]
    if args.out_prefix:
        _ensure_parent(args.out_prefix)
        write_csv_rows(f"{args.out_prefix}_oracle.csv", ["bin_low_deg", "bin_high_deg", "probability"], rows,
                       fmt="{:.9f}")
    if not args.quiet:
        print(json.dumps({"mu": pred.mu, "R": pred.R}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    prefix = _prefix(args, cfg)
    paths = pipeline.artifact_paths(prefix)
    _ensure_parent(paths["events"])
    n = 0
    with EventWriter(paths["events"], cfg.output.write_truth) as out:
        for k in range(cfg.rng.streams):
            table = pipeline.simulate_partition(cfg, k, with_truth=cfg.output.write_truth)
            out.write(table)
            n += len(np.unique(table.event_id))
    if not args.quiet:
        print(f"events {n} -> {paths['events']}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _load(args)
    prefix = _prefix(args, cfg)
    paths = pipeline.artifact_paths(prefix)
    _ensure_parent(paths["selected"])
    table = read_events(args.input)
    result, selected, _ = pipeline.select_and_reconstruct(table, cfg)
    with EventWriter(paths["selected"], table.has_truth) as out:
        out.write(selected)
    cutflow = result.cutflow()
    write_text(paths["cutflow"], cutflow.as_text())
    if not args.quiet:
        sys.stdout.write(cutflow.as_text())
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    a = cfg.analysis
    for name in ("theta1_min", "theta1_max", "theta2_min", "theta2_max", "bins", "mix"):
        value = getattr(args, name)
        if value is not None:
            setattr(a, name, value)
    cfg.validate()
    prefix = _prefix(args, cfg)
    paths = pipeline.artifact_paths(prefix)
    _ensure_parent(paths["fit"])
    table = read_events(args.input)
    pairs = analysis.reconstruct_events(table, cfg.selection.pixel_threshold_kev,
                                        pipeline.detector_from_config(cfg.detector_a),
                                        pipeline.detector_from_config(cfg.detector_b))
    hist, fit, n_events = pipeline.analyze(pairs, cfg)
    write_histogram(paths["histogram"], hist)
    report = fit.report(n_events)
    write_json(paths["fit"], report)
    if not args.quiet:
        sys.stdout.write(dumps_json(report))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    result = pipeline.run_pipeline(cfg, _prefix(args, cfg), workers=args.workers)
    if not args.quiet:
        sys.stdout.write(result.cutflow.as_text())
        sys.stdout.write(dumps_json(result.fit.report(result.n_events)))
        print(f"theta_systematic {result.systematic:.4f}")
        print(f"manifest {result.paths['manifest']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"bundled name ({', '.join(bundled_configs())}), .cfg file or run manifest")
    common.add_argument("--seed", type=int, help="override rng.master_seed")
    common.add_argument("--out-prefix", help="prefix for output files (default: output.prefix)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    parser = argparse.ArgumentParser(prog="annipol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", parents=[common], help="analyzing power and modulation tables")
    p.add_argument("--theta", type=parse_grid, default=parse_grid("0:180:10"),
                   help="scattering angles: value, list or start:stop:step")
    p.add_argument("--energy", type=float, default=physics.ELECTRON_REST_ENERGY,
                   help="energy of the second photon in keV (first is 511)")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--theta1-window", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--theta2-window", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--bins", type=int, default=24)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("oracle", parents=[common], help="expected dphi distribution for angular windows")
    p.add_argument("--theta1-min", type=float, default=72.0)
    p.add_argument("--theta1-max", type=float, default=90.0)
    p.add_argument("--theta2-min", type=float, default=72.0)
    p.add_argument("--theta2-max", type=float, default=90.0)
    p.add_argument("--e1", type=float, default=physics.ELECTRON_REST_ENERGY)
    p.add_argument("--e2", type=float, default=physics.ELECTRON_REST_ENERGY)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=24)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", parents=[common], help="generate and digitize pairs into an event file")
    p.add_argument("--n-pairs", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", parents=[common], help="apply trigger and offline cuts to an event file")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("analyze", parents=[common], help="reconstruct, mix, correct and fit a selected file")
    p.add_argument("--in", dest="input", required=True)
    for name in ("theta1-min", "theta1-max", "theta2-min", "theta2-max"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--mix", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", parents=[common], help="simulate, select and analyze in one go")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)
    return parser


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = str(exc).replace("\n", " ").replace('"', "'")
    print(f'error kind={kind} type={type(exc).__name__} message="{msg}"', file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (AnnipolError, OSError, ValueError, RuntimeError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
