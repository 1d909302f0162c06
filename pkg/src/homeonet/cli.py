"""Command-line entry point: ``homeonet <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from homeonet.harness.config import ConfigError, load_config, serialize_config

log = logging.getLogger("homeonet")

GRADCHECK_TOL = 1e-4


def _with_overrides(config, args):
    changes = {}
    for key in ("seed", "replicates", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return dataclasses.replace(config, **changes) if changes else config


def _load(args, **forced):
    config = _with_overrides(load_config(args.config), args)
    if forced:
        config = dataclasses.replace(config, **forced)
    return config


def _write_outputs(config, result, stem: str) -> Path:
    from homeonet.drift import write_event_log
    from homeonet.harness.io import write_aggregate_csv, write_metrics_csv
    from homeonet.harness.plotting import PlotSpec, write_plot

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(config), encoding="utf-8")
    write_metrics_csv(result.rows, out / f"{stem}_metrics.csv")
    write_aggregate_csv(result.aggregates, out / f"{stem}_aggregate.csv")
    if config.write_events:
        (out / "events").mkdir(exist_ok=True)
        for (label, r), events in sorted(result.events.items()):
            if events:
                write_event_log(events, out / "events" / f"swaps_{label}_rep{r}.csv")
    if result.aggregates:
        write_plot(result.aggregates, PlotSpec(metric="accuracy"), out / f"{stem}_accuracy.svg")
        write_plot(result.aggregates, PlotSpec(metric="lr", log_y=True), out / f"{stem}_lr.svg")
    for failure in result.failures:
        print(f"replicate aborted: {failure}", file=sys.stderr)
    return out


def cmd_run(args) -> int:
    from homeonet.harness.runner import run_experiment

    config = _load(args)
    result = run_experiment(config)
    out = _write_outputs(config, result, "run")
    print(f"wrote {len(result.rows)} metrics rows to {out}")
    return 0


def cmd_sweep(args) -> int:
    from homeonet.harness.io import write_aggregate_csv
    from homeonet.harness.runner import run_experiment

    config = _load(args, shift_mode="constant")
    result = run_experiment(config)
    out = _write_outputs(config, result, "sweep")
    for rate in sorted({r.shift_rate for r in result.aggregates},
                       key=lambda s: float(s)):
        rows = [r for r in result.aggregates if r.shift_rate == rate]
        write_aggregate_csv(rows, out / f"aggregate_rate_{rate}.csv")
    print(f"swept {len(config.shift_rates)} rates into {out}")
    return 0


def cmd_seasonal(args) -> int:
    from homeonet.harness.runner import run_experiment

    config = _load(args, shift_mode="seasonal")
    result = run_experiment(config)
    out = _write_outputs(config, result, "seasonal")
    print(f"ran schedules {', '.join(config.schedules)} into {out}")
    return 0


def cmd_plot(args) -> int:
    from homeonet.harness.io import read_aggregate_csv
    from homeonet.harness.plotting import load_plot_spec, write_plot

    src = Path(args.aggregate)
    if not src.is_file():
        raise FileNotFoundError(f"aggregate file not found: {src}")
    spec = load_plot_spec(args.spec)
    target = Path(args.output) if args.output else src.with_suffix(".svg")
    if args.out:
        target = Path(args.out) / target.name
    write_plot(read_aggregate_csv(src), spec, target)
    print(f"wrote {target}")
    return 0


def cmd_gradcheck(args) -> int:
    from homeonet.oracle import gradcheck_suite

    seed = 0 if args.seed is None else args.seed
    report = gradcheck_suite(args.instances, seed=seed)
    ok = report.max_rel_error <= GRADCHECK_TOL
    print(f"gradcheck: {report.n_instances} instances, max relative error "
          f"{report.max_rel_error:.3e} ({'ok' if ok else 'FAIL'}, {report.seconds:.1f}s)")
    return 0 if ok else 1


def cmd_oracle_check(args) -> int:
    from homeonet.oracle import oracle_check

    seed = 0 if args.seed is None else args.seed
    report = oracle_check(args.cases, seed=seed)
    print(f"oracle-check: {report.n_cases} cases, {report.mismatches} mismatches, "
          f"{report.n_ingest} ingest, max loss diff {report.max_loss_diff:.2e} "
          f"({report.seconds:.1f}s)")
    return 0 if report.mismatches == 0 else 1


def _common(p, config=True):
    if config:
        p.add_argument("config", help="experiment config file (key = value lines)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--replicates", type=int, help="replicates per cell")
    p.add_argument("--threads", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homeonet",
        description="Learning-rate homeostasis under concept shift: experiments and checks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_ in [("run", cmd_run, "run the experiment in a config"),
                            ("sweep", cmd_sweep, "grid over the config's shift rates"),
                            ("seasonal", cmd_seasonal, "run seasonal shift schedules")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("plot", help="render an aggregate CSV to SVG")
    p.add_argument("aggregate")
    p.add_argument("spec", help="plot spec file, or inline 'metric=lr; learners=homeostatic'")
    p.add_argument("-o", "--output", help="SVG path (default: next to the CSV)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of backprop")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="compare ingest decisions with a brute-force oracle")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for key in ("seed", "replicates", "threads"):
        value = getattr(args, key, None)
        if value is not None and value < (0 if key == "seed" else 1):
            parser.error(f"--{key} out of range: {value}")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"homeonet {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
