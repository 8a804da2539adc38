"""Command-line entry point: ``radar-sense <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
Log level comes from ``RADAR_SENSE_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, stage1
from .channel import effective_cluster_channels
from .errors import RadarSenseError
from .scene import build_clusters, load_scenario, paper_config, validate_scenario
from .waveform import make_rng, observe, write_signal_dump

log = logging.getLogger("radar_sense")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("RADAR_SENSE_LOG", "error").lower()
    logging.basicConfig(level=_LEVELS.get(name, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if name not in _LEVELS:
        log.error("RADAR_SENSE_LOG=%r not understood; using 'error'", name)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _load(args):
    """Scenario plus config with the CLI grid step applied; None if invalid."""
    targets, cfg = load_scenario(args.scenario)
    cfg = replace(cfg, delta_theta=math.radians(args.delta_theta))
    problems = validate_scenario(targets, cfg)
    for v in problems:
        print(f"{'warning' if v.is_warning else 'error'}: [{v.kind}] {v.message}", file=sys.stderr)
    if any(not v.is_warning for v in problems):
        return None
    return targets, cfg


def cmd_validate(args) -> int:
    return EXIT_OK if _load(args) is not None else EXIT_INVALID


def cmd_simulate(args) -> int:
    loaded = _load(args)
    if loaded is None:
        return EXIT_INVALID
    targets, cfg = loaded
    cmap = build_clusters(targets, cfg)
    obs = observe(effective_cluster_channels(cmap, cfg), cfg, make_rng(args.seed),
                  noiseless=args.noiseless)
    if args.dump_signals:
        base = Path(args.dump_signals)
        write_signal_dump(base, obs.rx, seed=args.seed, kind="rx")
        write_signal_dump(base.with_name(base.name + ".tx"), obs.tx, seed=args.seed, kind="tx")
    info = {
        "seed": args.seed,
        "noiseless": args.noiseless,
        "occupied_clusters": cmap.occupied,
        "pilot_energy": float(np.vdot(obs.y_P, obs.y_P).real),
        "noise_var": 0.0 if args.noiseless else cfg.noise_var,
        "rx_shape": list(obs.rx.shape),
    }
    _emit(json.dumps(info, indent=2), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    loaded = _load(args)
    if loaded is None:
        return EXIT_INVALID
    targets, cfg = loaded
    rep = harness.run_trial(targets, cfg, args.seed, rho=args.rho, noiseless=args.noiseless,
                            scenario_id=Path(args.scenario).stem)
    if args.format == "csv":
        _emit(harness.to_csv(rep, "range").rstrip("\n") + "\n\n" + harness.to_csv(rep, "angle"), args.out)
    else:
        _emit(json.dumps(rep.to_dict(), indent=2, sort_keys=True), args.out)
    if rep.failed:
        print(f"error: {rep.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_reproduce(args) -> int:
    try:
        Ms = [int(m) for m in args.M.split(",") if m.strip()]
    except ValueError:
        print(f"error: --M expects a comma-separated list of integers, got {args.M!r}", file=sys.stderr)
        return EXIT_INVALID
    if not Ms or min(Ms) < 1 or args.seeds < 1:
        print("error: need at least one M >= 1 and one seed", file=sys.stderr)
        return EXIT_INVALID
    base = replace(paper_config(), delta_theta=math.radians(args.delta_theta))
    sums = harness.reproduce_tables(base, Ms, range(args.seeds), workers=args.workers)
    print(harness.format_tables(sums))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for M, s in sums.items():
            if args.format == "csv":
                harness.export(s, out / f"range_M{M}.csv", "csv", table="range")
                harness.export(s, out / f"angle_M{M}.csv", "csv", table="angle")
            else:
                harness.export(s, out / f"summary_M{M}.json", "json")
        (out / "tables.txt").write_text(harness.format_tables(sums) + "\n")
    return EXIT_OK


def cmd_sweep_rho(args) -> int:
    loaded = _load(args)
    if loaded is None:
        return EXIT_INVALID
    targets, cfg = loaded
    h = effective_cluster_channels(build_clusters(targets, cfg), cfg)
    rows = []
    for seed in range(args.seeds):
        obs = observe(h, cfg, make_rng(seed))
        path = stage1.rho_sweep(obs.y_P, obs.Theta_P, cfg, workers=args.workers)
        for i, (r, res, sup, rr) in enumerate(zip(path.rhos, path.results, path.supports,
                                                   path.refit_residuals)):
            rows.append({"seed": seed, "rho": float(r), "support": sorted(sup),
                         "refit_residual": float(rr), "kkt_residual": float(res.kkt_residual),
                         "iterations": res.iterations, "selected": i == path.selected})
    if args.format == "csv":
        lines = ["seed,rho,support,refit_residual,kkt_residual,iterations,selected"]
        lines += [f"{r['seed']},{r['rho']!r},{' '.join(map(str, r['support']))},{r['refit_residual']!r},"
                  f"{r['kkt_residual']!r},{r['iterations']},{int(r['selected'])}" for r in rows]
        _emit("\n".join(lines), args.out)
    else:
        _emit(json.dumps({"schema_version": harness.SCHEMA_VERSION, "path": rows}, indent=2), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--delta-theta", type=float, default=0.25, metavar="DEG",
                        help="angle-grid step in degrees (default 0.25)")
    common.add_argument("--workers", type=int, default=1, metavar="N")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", default=None, help="write output here instead of stdout")

    p = argparse.ArgumentParser(prog="radar-sense", description="Two-stage MIMO-OFDM radar sensing.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a scenario file")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", parents=[common], help="simulate one OFDM symbol")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--dump-signals", metavar="PATH")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", parents=[common], help="run both stages for one seed")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--noiseless", action="store_true")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--rho", type=float, default=None, help="fixed regularization weight")
    g.add_argument("--rho-sweep", action="store_true", help="sweep the default path (default)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("reproduce-tables", parents=[common], help="reference four-target experiment")
    s.add_argument("--M", default="1,2,4")
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("sweep-rho", parents=[common], help="regularization path per seed")
    s.add_argument("scenario")
    s.add_argument("--seeds", type=int, default=1)
    s.set_defaults(func=cmd_sweep_rho)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.delta_theta <= 0:
        print("error: --delta-theta must be positive", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (RadarSenseError, ValueError, KeyError) as exc:
        # malformed input files (JSON errors included) and config errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
