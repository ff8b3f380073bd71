"""Command-line front end: ``platoon-rhc run | sweep | check-feasibility``.

Exit codes: 0 success, 1 infeasible (check-feasibility) or no sweep cell
succeeded, 2 collision during a run, 3 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import CollisionDetected, ConfigError
from .io import write_run, write_sweep
from .scenario import PRESETS, SWEEP_AXES, Scenario, parse_value, resolve_scenario, with_overrides
from .sim import aggregate, feasibility_of, run, sweep

EXIT_OK, EXIT_INFEASIBLE, EXIT_COLLISION, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("platoon_rhc")


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _load(args) -> Scenario:
    if args.preset and args.scenario:
        raise ConfigError("give either a scenario file or --preset, not both")
    source = args.preset or args.scenario
    if not source:
        raise ConfigError("no scenario given (pass a TOML path or --preset NAME)")
    sc = resolve_scenario(source)
    ov = _overrides(args.set)
    if args.seed is not None:
        ov["seed"] = args.seed
    return with_overrides(sc, ov) if ov else sc


def _number_list(text: str, cast=float) -> list:
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}: {exc}") from exc


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    try:
        result = run(sc)
    except CollisionDetected as exc:
        partial = exc.dump.get("result")
        if partial is not None:
            write_run(partial, out)
        print(f"collision: {exc}", file=sys.stderr)
        return EXIT_COLLISION
    write_run(result, out)
    m = result.metrics()
    tf = m["formation_time"]
    print(f"{sc.name}: seed {sc.seed}, {m['steps']} steps, "
          f"formation {'none' if tf is None else f'{tf:.1f} s'}, "
          f"mean controller {m['mean_controller_ms'] or 0.0:.2f} ms -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _load(args)
    spec = sc.sweep
    axis = args.axis or (spec.axis if spec else None)
    if axis is None:
        raise ConfigError("no sweep axis (use --axis or a [sweep] table)")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = _number_list(args.values) if args.values else list(spec.values if spec else ())
    seeds = _number_list(args.seeds, int) if args.seeds else list(spec.seeds if spec else (sc.seed,))
    if not values:
        raise ConfigError("no sweep values (use --values or a [sweep] table)")
    rows = sweep(sc, axis, values, seeds)
    summary = aggregate(rows)
    write_sweep(rows, summary, args.out)
    print(f"{'value':>8} {'cells':>5} {'formed':>6} {'t_form [s]':>10} {'ctrl [ms]':>9}")
    for a in summary:
        tf = a["mean_formation_time"]
        ms = a["mean_compute_ms"]
        print(f"{a['value']:>8g} {a['cells']:>5d} {a['formed']:>6d} "
              f"{'-' if tf is None else f'{tf:.2f}':>10} {'-' if ms is None else f'{ms:.2f}':>9}")
    for r in rows:
        if r.error:
            print(f"cell {axis}={r.value:g} seed={r.seed} failed: {r.error}", file=sys.stderr)
    return EXIT_OK if any(not r.error for r in rows) else EXIT_INFEASIBLE


def cmd_check_feasibility(args) -> int:
    sc = _load(args)
    report = feasibility_of(sc)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.platoon_feasible else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoon-rhc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", nargs="?", help="scenario TOML file or preset name")
        p.add_argument("--preset", choices=PRESETS)
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, e.g. ovm.alpha=0.6 (repeatable)")

    p_run = sub.add_parser("run", help="simulate one scenario")
    common(p_run)
    p_run.add_argument("--out", default="out")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--out", default="out")
    p_sweep.add_argument("--axis", choices=SWEEP_AXES)
    p_sweep.add_argument("--values", help="comma-separated axis values")
    p_sweep.add_argument("--seeds", help="comma-separated seeds")
    p_sweep.set_defaults(func=cmd_sweep)

    p_feas = sub.add_parser("check-feasibility", help="closed-form formation check on a road of length L")
    common(p_feas)
    p_feas.set_defaults(func=cmd_check_feasibility)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.verbose == 0:
        # fail-safe steps are expected under an aggressive PV; keep them out of batch output
        logging.getLogger("platoon_rhc.controller").setLevel(logging.ERROR)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
