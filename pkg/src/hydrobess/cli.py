"""Command line interface.

Exit codes: 0 success, 2 validation or input error, 3 run aborted by the
plant safety guard.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import forecast as fc
from . import harness as hn
from .core import ConfigError, Scenario, SynthParams, load_scenario, save_scenario
from .kpi import read_kpi_csv, write_kpi_csv

log = logging.getLogger("hydrobess")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3


def _override(s: Scenario, args) -> Scenario:
    ctrl = s.controller
    if getattr(args, "gamma", None) is not None:
        ctrl = dataclasses.replace(ctrl, gamma=args.gamma)
    s = dataclasses.replace(s, controller=ctrl)
    if getattr(args, "out", None):
        s = dataclasses.replace(s, output_dir=str(args.out))
    return s


def _report(s: Scenario, res: hn.RunResult) -> None:
    r = res.report
    print(f"{s.name}: controller={r.controller} bess_kw={r.bess_kw:g} te_rms_1s={r.te_rms_1s:.4f} "
          f"e30={r.e30:.4f} mileage={r.mileage:.2f} nom={r.nom} soe_viol={r.soe_viol} "
          f"fallbacks={r.fallbacks} step_ms(mean/max)={res.mean_step_ms:.2f}/{res.max_step_ms:.2f}")


def cmd_simulate(args) -> int:
    s = _override(load_scenario(args.scenario), args)
    res = hn.run_scenario(s, write=True)
    _report(s, res)
    print(f"wrote {Path(s.output_dir) / f'runlog_{s.name}.csv'} and {Path(s.output_dir) / 'kpi.csv'}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    d = Path(args.dir)
    if args.init:
        d.mkdir(parents=True, exist_ok=True)
        base = Scenario(seed=args.seed, synth=SynthParams(split=args.split))
        for s in hn.standard_matrix(base):
            save_scenario(s, d / f"{s.name}.cfg")
    files = sorted(d.glob("*.cfg")) if d.is_dir() else []
    if not files:
        raise ConfigError(f"no *.cfg scenario files in {d}")
    scenarios = [_override(load_scenario(f), args) for f in files]
    out = Path(args.out) if args.out else d
    _, table = hn.run_matrix(scenarios, out, args.baseline, progress=_report)
    if table:
        print(hn.format_table(table))
    print(f"wrote {out / 'kpi.csv'}" + (f" and {out / 'reductions.csv'}" if table else ""))
    return EXIT_OK


def cmd_synth(args) -> int:
    p = SynthParams(split=args.split)
    if args.std_mhz is not None:
        p = dataclasses.replace(p, std_mhz=args.std_mhz)
    tr = hn.synth_trace(args.seed, args.hours, p, t0=args.t0)
    hn.write_trace(tr, args.out)
    print(f"wrote {len(tr)} samples to {args.out}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    tr = hn.ingest_trace(args.trace)
    series = fc.integrate_hourly(tr)
    rows = fc.backtest(series, train_frac=args.train_frac, scale=args.sigma_f)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_size(args) -> int:
    if args.trace:
        tr = hn.ingest_trace(args.trace)
    else:
        tr = hn.synth_trace(args.seed, args.hours)
    kw = hn.size_bess(args.sigma_f, tr, args.coverage)
    print(f"{kw:g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = read_kpi_csv(args.kpi)
    table = hn.compare(rows, args.baseline)
    print(hn.format_table(table))
    out = Path(args.out) if args.out else Path(args.kpi).with_name("reductions.csv")
    hn.write_reductions_csv(table, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydrobess", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", help="output directory (overrides scenario.output_dir)")
    p.add_argument("--gamma", type=float, help="L1 weight on hydro set-point moves")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("matrix", help="run every *.cfg in a directory and compare")
    p.add_argument("dir")
    p.add_argument("--out")
    p.add_argument("--baseline", help="run_id of the reference run (default: hydro-only run)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--init", action="store_true", help="write the five standard scenarios first")
    p.add_argument("--seed", type=int, default=0, help="seed for --init")
    p.add_argument("--split", action="store_true", help="with --init, add the split segment")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("synth", help="write a synthetic frequency trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hours", type=float, default=12.0)
    p.add_argument("--split", action="store_true")
    p.add_argument("--std-mhz", type=float)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("forecast-backtest", help="hold-out comparison of hourly forecasters")
    p.add_argument("trace")
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--sigma-f", type=float, default=125.0, help="report errors in kWh")
    p.add_argument("--out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("size", help="BESS power rating covering a share of deviations")
    p.add_argument("--coverage", type=float, required=True)
    p.add_argument("--sigma-f", type=float, default=125.0)
    p.add_argument("--trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hours", type=float, default=12.0)
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("compare", help="percent change of KPIs against a baseline run")
    p.add_argument("kpi")
    p.add_argument("--baseline", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except hn.RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except hn.MissingBaseline as exc:
        print(f"error: baseline {exc} not found", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, hn.ParseError, fc.InsufficientData, fc.TraceTooShort,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
