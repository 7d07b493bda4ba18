"""Command-line interface.

Exit codes: 0 success, 2 when some benchmark scenarios failed, 1 on fatal
errors (bad arguments, unreadable files, failed single-scenario runs).
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from .benchmark import (
    DEFAULT_BACK_PROPS,
    DEFAULT_DISTRIBUTIONS,
    DEFAULT_SCALES,
    METHODS,
    ScenarioGrid,
    export_report,
    load_report,
    make_scenarios,
    run_benchmark,
)
from .dataset import get_row, load_dataset
from .dynamics import (
    elements_to_state,
    find_closest_approach,
    orbital_period,
    propagate_point,
)
from .pdfest import estimate_pdf, export_plot_data
from .pipeline import (
    DEFAULT_MOMENTS,
    DEFAULT_ORDER,
    DEFAULT_RADIUS_M,
    ConjunctionScenario,
    encounter_maps,
    pc_monte_carlo,
    pc_moments,
    pc_taylor_mc,
    scenario_record,
)
from .moments import UncertaintySpec, distance_moments

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

GLOBAL_DEFAULTS = {
    "order": DEFAULT_ORDER,
    "moments": DEFAULT_MOMENTS,
    "radius_m": DEFAULT_RADIUS_M,
    "seed": 0,
    "samples": 100_000,
    "threads": 1,
}
GLOBAL_TYPES = {"order": int, "moments": int, "radius_m": float, "seed": int, "samples": int, "threads": int}
CONFIG_SECTION = "conjmoments"


class CliError(Exception):
    """Fatal command-line problem (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file; keys mirror the global flags."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(f"[{CONFIG_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise CliError(f"{path}: {exc}") from None
    out = {}
    for key, value in cp[CONFIG_SECTION].items():
        name = key.replace("-", "_")
        if name not in GLOBAL_TYPES:
            raise CliError(f"{path}: unknown key {key!r}")
        try:
            out[name] = GLOBAL_TYPES[name](value)
        except ValueError:
            raise CliError(f"{path}: bad value for {key!r}: {value!r}") from None
    return out


def _add_globals(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    p.add_argument("--order", type=int, default=s, help="Taylor map order (1-8)")
    p.add_argument("--moments", type=int, default=s, help="number of moments M")
    p.add_argument("--radius-m", dest="radius_m", type=float, default=s, help="hard-body radius [m]")
    p.add_argument("--seed", type=int, default=s, help="sampling seed")
    p.add_argument("--samples", type=int, default=s, help="Monte Carlo sample count")
    p.add_argument("--threads", type=int, default=s, help="worker threads")
    p.add_argument("--config", default=s, help="key = value file of the flags above")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument("--row", type=int, required=True, help="dataset row id")
    p.add_argument("--back-prop", type=float, default=3600.0, help="back-propagation span [s]")
    p.add_argument("--dist", choices=DEFAULT_DISTRIBUTIONS, default="normal")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--scale-applies-to", choices=("std", "var"), default="std")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conjmoments", description="Collision probability from propagated moments.")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dataset", help="dump or validate the benchmark dataset")
    _add_globals(p)
    p.add_argument("--path", help="CSV file instead of the embedded copy")
    p.add_argument("--validate", action="store_true", help="re-detect every nominal encounter")

    p = sub.add_parser("propagate", help="propagate a dataset pair and locate the encounter")
    _add_globals(p)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--dt", type=float, default=-3600.0, help="signed propagation span [s]")

    for name, text in (("pc", "moments method"), ("mc", "Monte Carlo"), ("tmc", "Taylor Monte Carlo")):
        p = sub.add_parser(name, help=f"{text} for one scenario")
        _add_globals(p)
        _add_scenario(p)

    p = sub.add_parser("pdf", help="write PDF plot data of the squared miss distance")
    _add_globals(p)
    _add_scenario(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--points", type=int, default=401)

    p = sub.add_parser("benchmark", help="run the scenario grid")
    _add_globals(p)
    p.add_argument("--rows", type=_ints, default=None, help="comma-separated row ids (default all)")
    p.add_argument("--back-props", type=_floats, default=DEFAULT_BACK_PROPS)
    p.add_argument("--dists", type=lambda t: tuple(t.split(",")), default=DEFAULT_DISTRIBUTIONS)
    p.add_argument("--scales", type=_floats, default=DEFAULT_SCALES)
    p.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=METHODS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-timing", action="store_true", help="omit wall times (byte-stable output)")

    p = sub.add_parser("report", help="re-export a saved benchmark report")
    _add_globals(p)
    p.add_argument("report", help="report.json or its directory")
    p.add_argument("--out", required=True, help="output directory for CSV files")
    p.add_argument("--no-timing", action="store_true")
    return parser


def resolve_globals(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(GLOBAL_DEFAULTS)
    if getattr(args, "config", None):
        opts.update(read_config(args.config))
    for k in GLOBAL_DEFAULTS:
        if hasattr(args, k):
            opts[k] = getattr(args, k)
    return opts


def _scenario(args, opts) -> ConjunctionScenario:
    row = get_row(args.row)
    if args.dist == "normal":
        spec = UncertaintySpec.table2_normal(args.scale, args.scale_applies_to)
    else:
        spec = UncertaintySpec.uniform_box(scale=args.scale, scale_applies_to=args.scale_applies_to)
    return ConjunctionScenario(
        row.elements_a, row.elements_b, args.back_prop, spec, opts["radius_m"],
        opts["order"], opts["moments"], row_id=row.id,
    )


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_dataset(args, opts) -> int:
    rows = load_dataset(args.path)
    if not args.validate:
        print(",".join(("id", "miss_m", "speed_mps")))
        for r in rows:
            print(f"{r.id},{r.miss_m!r},{r.speed_mps!r}")
        return EXIT_OK
    worst = 0
    print("id,miss_m,detected_m,speed_mps,detected_mps")
    for r in rows:
        a, b = elements_to_state(r.elements_a), elements_to_state(r.elements_b)
        ca = find_closest_approach(a, b, 600.0, start=-300.0, target=0.0)
        d_m, v_ms = ca.d_ca * 1e3, ca.v_rel * 1e3
        ok = abs(d_m - r.miss_m) < 1.0 and abs(v_ms - r.speed_mps) < 0.1
        worst = worst or (not ok)
        print(f"{r.id},{r.miss_m:.6f},{d_m:.6f},{r.speed_mps:.6f},{v_ms:.6f}")
    return EXIT_FATAL if worst else EXIT_OK


def cmd_propagate(args, opts) -> int:
    row = get_row(args.row)
    a, b = elements_to_state(row.elements_a), elements_to_state(row.elements_b)
    a1, b1 = propagate_point(a, args.dt), propagate_point(b, args.dt)
    period = min(orbital_period(a1), orbital_period(b1))
    ca = find_closest_approach(a1, b1, period, start=-args.dt - 0.5 * period, target=-args.dt)
    _print_json({
        "row": row.id,
        "dt_s": args.dt,
        "state_a": a1.as_array().tolist(),
        "state_b": b1.as_array().tolist(),
        "t_ca_s": ca.t_ca,
        "d_ca_m": ca.d_ca * 1e3,
        "v_rel_mps": ca.v_rel * 1e3,
    })
    return EXIT_OK


def cmd_single(args, opts) -> int:
    s = _scenario(args, opts)
    if args.command == "pc":
        res = pc_moments(s)
    elif args.command == "mc":
        res = pc_monte_carlo(s, opts["samples"], opts["seed"], opts["threads"])
    else:
        res = pc_taylor_mc(s, opts["samples"], opts["seed"], opts["threads"])
    _print_json(scenario_record(s, [res]))
    return EXIT_OK


def cmd_pdf(args, opts) -> int:
    s = _scenario(args, opts)
    maps = encounter_maps(s.elements_a, s.elements_b, s.back_prop, s.order, s.mu)
    ms = distance_moments(maps, s.uncertainty, s.n_moments)
    est = estimate_pdf(ms, s.domain_hint)
    out = export_plot_data(est, args.out, n=args.points)
    print(out)
    return EXIT_OK


def cmd_benchmark(args, opts) -> int:
    rows = load_dataset()
    if args.rows:
        rows = [get_row(i, rows) for i in args.rows]
    grid = ScenarioGrid(tuple(args.back_props), tuple(args.dists), tuple(args.scales))
    scen = make_scenarios(rows, grid, opts["radius_m"], opts["order"], opts["moments"])
    report = run_benchmark(scen, tuple(args.methods), opts["samples"], opts["seed"], opts["threads"])
    report.config.update({"order": opts["order"], "moments": opts["moments"], "radius_m": opts["radius_m"]})
    timing = not args.no_timing
    files = export_report(report, "json", args.out, timing) + export_report(report, "csv", args.out, timing)
    for f in files:
        print(f)
    print(f"{len(scen)} scenarios, {report.n_failed} with failures", file=sys.stderr)
    return EXIT_PARTIAL if report.n_failed else EXIT_OK


def cmd_report(args, opts) -> int:
    report = load_report(args.report)
    for f in export_report(report, "csv", args.out, not args.no_timing):
        print(f)
    for row in report.mse:
        mse = "nan" if row["mse"] is None else f"{row['mse']:.3e}"
        print(f"{row['method']:8s} {row['back_prop_s']:>9g} {row['kind']:8s} {row['subset']:8s} n={row['n']:<4d} mse={mse}")
    return EXIT_OK


COMMANDS = {
    "dataset": cmd_dataset,
    "propagate": cmd_propagate,
    "pc": cmd_single,
    "mc": cmd_single,
    "tmc": cmd_single,
    "pdf": cmd_pdf,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_globals(args)
        return COMMANDS[args.command](args, opts)
    except (CliError, OSError, KeyError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except Exception as exc:  # noqa: BLE001 - fatal, reported to the user
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
