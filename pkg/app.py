"""
Command-line entry point.

    python app.py simulate --config run.cfg --out-dir out/
    python app.py analyze out/ticks.csv --out-dir out/
    python app.py null --length 400000 --set stride=2000 --out-dir null/
    python app.py sweep --config sweep.cfg --out-dir sweep/
    python app.py plot out/
    python app.py replay out/manifest.ini

Exit status:
    0  success
    2  usage error (unknown subcommand or flag)
    3  domain error (bad config, too little data, stalled market, ...)
    4  I/O error
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional

import pandas as pd

import plots
from dealer_model import run_simulation
from errors import MarketError
from experiments import (
    COMMAND_KEYS,
    analysis_params,
    format_value,
    ingest_ticks,
    load_config,
    market_config,
    parse_overrides,
    read_manifest,
    record_items,
    run_sweep,
    sweep_spec,
    write_manifest,
)
from potential import diffusion_curve, rolling_b, summarize_estimates, window_curve
from surrogate import KINDS, SurrogateSpec, generate, shuffled_surrogate

logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_IO = 4

MANIFEST_NAME = "manifest.ini"
# separate from manifest.ini, which belongs to the run that wrote the plotted CSVs
PLOT_MANIFEST_NAME = "plot_manifest.ini"
CURVE_PREFIX = "curve_d="

Values = Mapping[str, str]
Command = Callable[[Values, Dict[str, str]], int]


def _out_dir(run: Dict[str, str]) -> Path:
    path = Path(run.get("output_dir", "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _report(title: str, summary: Mapping[str, object]) -> None:
    print(title)
    for key, value in summary.items():
        print(f"  {key:>14}: {value:.4f}" if isinstance(value, float) else f"  {key:>14}: {value}")


# ────────────────────────────────────────────────────────────────────
# Subcommands
# ────────────────────────────────────────────────────────────────────

def simulate_command(values: Values, run: Dict[str, str]) -> int:
    config = market_config(values)
    out = _out_dir(run)
    ticks = run_simulation(config)
    ticks.to_csv(out / "ticks.csv")
    write_manifest(out / MANIFEST_NAME, "simulate", run, record_items(config))
    return EXIT_OK


def analyze_command(values: Values, run: Dict[str, str]) -> int:
    params = analysis_params(values)
    smoothing = int(values.get("smoothing", 1))
    max_lag = int(values.get("max_lag", 100))
    curve_start = int(values.get("curve_start", 0))
    out = _out_dir(run)

    ticks = ingest_ticks(run["input"], smoothing)
    result = rolling_b(ticks, params)
    result.to_csv(out / "estimates.csv")

    window_curve(ticks, params, curve_start).to_csv(out / "curve.csv")

    diffusion_curve(ticks, max_lag).to_csv(out / "diffusion.csv", index=False, float_format="%.17g")

    config = {**record_items(params), "smoothing": str(smoothing), "max_lag": str(max_lag), "curve_start": str(curve_start)}
    write_manifest(out / MANIFEST_NAME, "analyze", run, config)
    if result.estimates:
        _report(f"{len(ticks)} ticks analysed", summarize_estimates(result))
        return EXIT_OK
    logger.error("no window produced an estimate")
    return EXIT_DOMAIN


def _calibration_row(label: str, series, params) -> dict:
    return {"series": label, **summarize_estimates(rolling_b(series, params))}


def null_command(values: Values, run: Dict[str, str]) -> int:
    params = analysis_params(values)
    spec = SurrogateSpec(
        kind=values.get("kind", "gaussian_walk"),
        length=int(values.get("length", 100_000)),
        seed=int(values.get("seed", 1)),
        volatility=float(values.get("volatility", 1.0)),
        planted_b=float(values.get("planted_b", 0.0)),
        m_analysis=params.m_analysis,
    ).validate()
    out = _out_dir(run)

    series = generate(spec)
    series.to_csv(out / "surrogate.csv")
    rows = [_calibration_row(spec.kind, series, params)]

    if run.get("input"):
        source = ingest_ticks(run["input"])
        rows.append(_calibration_row("input", source, params))
        rows.append(_calibration_row("shuffled", shuffled_surrogate(source, spec.seed), params))

    report = pd.DataFrame(rows)
    report.to_csv(out / "calibration.csv", index=False, float_format="%.17g")
    for row in rows:
        _report(f"[{row.pop('series')}]", row)

    config = {
        **record_items(params),
        "kind": spec.kind,
        "length": str(spec.length),
        "seed": str(spec.seed),
        "volatility": format_value(spec.volatility),
        "planted_b": format_value(spec.planted_b),
    }
    write_manifest(out / MANIFEST_NAME, "null", run, config)
    return EXIT_OK


def sweep_command(values: Values, run: Dict[str, str]) -> int:
    spec = sweep_spec(values)
    out = _out_dir(run)
    result = run_sweep(spec)
    result.to_csv(out / "sweep.csv")
    result.fit_frame().to_csv(out / "fit.csv", index=False, float_format="%.17g")

    config = {
        **record_items(spec.base),
        **record_items(spec.analysis),
        "d_values": format_value(spec.d_values),
        "ticks_per_run": str(spec.ticks_per_run),
        "base_seed": str(spec.base_seed),
        "workers": str(spec.workers),
    }
    for d, curve in result.curves.items():
        curve.to_csv(out / f"{CURVE_PREFIX}{format_value(d)}.csv")

    seeds = {f"d={format_value(row.d)}": str(row.seed) for row in result.rows}
    write_manifest(out / MANIFEST_NAME, "sweep", run, config, seeds)

    print(result.to_frame().to_string(index=False))
    if result.fit is not None:
        print(f"b* = {result.fit.intercept:.4f} {result.fit.slope:+.4f} d   (r^2 = {result.fit.r_squared:.4f})")
    if not result.complete:
        logger.error("sweep incomplete: %s", ", ".join(f"d={row.d:g} {row.status}" for row in result.rows if row.status != "ok"))
        return EXIT_DOMAIN
    return EXIT_OK


def plot_command(values: Values, run: Dict[str, str]) -> int:
    source = Path(run["input"])
    out = _out_dir(run)
    drawn = 0
    if (source / "curve.csv").exists():
        plots.plot_potential_curve(pd.read_csv(source / "curve.csv"), out / "curve.png")
        drawn += 1
    if (source / "diffusion.csv").exists():
        plots.plot_diffusion(pd.read_csv(source / "diffusion.csv"), out / "diffusion.png")
        drawn += 1
    if (source / "sweep.csv").exists():
        fit_path = source / "fit.csv"
        fit = pd.read_csv(fit_path) if fit_path.exists() else None
        plots.plot_sweep(pd.read_csv(source / "sweep.csv"), fit, out / "sweep.png")
        drawn += 1
    by_d = {float(path.stem[len(CURVE_PREFIX):]): pd.read_csv(path) for path in source.glob(f"{CURVE_PREFIX}*.csv")}
    if by_d:
        plots.plot_curves_by_d(by_d, out / "curves.png")
        drawn += 1
    if not drawn:
        raise FileNotFoundError(f"no curve.csv, diffusion.csv, sweep.csv or {CURVE_PREFIX}*.csv in {source}")
    write_manifest(out / PLOT_MANIFEST_NAME, "plot", run, {})
    return EXIT_OK


COMMANDS: Dict[str, Command] = {
    "simulate": simulate_command,
    "analyze": analyze_command,
    "null": null_command,
    "sweep": sweep_command,
    "plot": plot_command,
}


# ────────────────────────────────────────────────────────────────────
# Argument parsing
# ────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Dealer-model market simulator and potential-force toolkit.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help=f"override one config key ({', '.join(COMMAND_KEYS[name])})")
        p.add_argument("--out-dir", default=".", help="directory for outputs and the run manifest")
        return p

    with_config("simulate", "simulate the dealer model, write ticks.csv")

    analyze = with_config("analyze", "estimate curvature, potential curve and diffusion")
    analyze.add_argument("input", help="tick CSV (u,price)")
    analyze.add_argument("--smoothing", type=int, default=1, help="moving-average width applied on ingest")
    analyze.add_argument("--max-lag", type=int, default=100)
    analyze.add_argument("--curve-start", type=int, default=0, help="first tick of the potential-curve window")

    null = with_config("null", "surrogate series and calibration report")
    # unset flags leave config and --set values in place
    null.add_argument("--kind", choices=[kind for kind in KINDS if kind != "shuffled"])
    null.add_argument("--length", type=int)
    null.add_argument("--seed", type=int)
    null.add_argument("--volatility", type=float)
    null.add_argument("--planted-b", type=float)
    null.add_argument("--input", help="tick CSV to compare against its shuffled surrogate")

    with_config("sweep", "b* as a function of d, with the line fit")

    plot = sub.add_parser("plot", help="render PNG figures from analyze/sweep outputs")
    plot.add_argument("input", help="directory holding curve.csv / diffusion.csv / sweep.csv")
    plot.add_argument("--out-dir", help="defaults to the input directory")

    replay = sub.add_parser("replay", help="re-run a manifest")
    replay.add_argument("manifest")
    replay.add_argument("--out-dir", help="defaults to the manifest's output directory")
    return parser


def _resolve(args: argparse.Namespace):
    """Config file, then --set overrides, then subcommand flags."""
    allowed = COMMAND_KEYS.get(args.command, [])
    values: Dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config, allowed))
    values.update(parse_overrides(getattr(args, "overrides", []), allowed))

    run = {"output_dir": args.out_dir or "."}
    if args.command == "analyze":
        run["input"] = args.input
        values.update(smoothing=str(args.smoothing), max_lag=str(args.max_lag), curve_start=str(args.curve_start))
    elif args.command == "null":
        if args.input:
            run["input"] = args.input
        flags = {
            "kind": args.kind,
            "length": args.length,
            "seed": args.seed,
            "volatility": args.volatility,
            "planted_b": args.planted_b,
        }
        values.update({key: format_value(value) for key, value in flags.items() if value is not None})
    elif args.command == "plot":
        run = {"input": args.input, "output_dir": args.out_dir or args.input}
    return values, run


def _replay(args: argparse.Namespace) -> int:
    command, run, values = read_manifest(args.manifest)
    if command not in COMMANDS:
        raise MarketError(f"manifest names unknown command {command!r}")
    if args.out_dir:
        run["output_dir"] = args.out_dir
    logger.info("replaying %s from %s", command, args.manifest)
    return COMMANDS[command](values, run)


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "replay":
            return _replay(args)
        values, run = _resolve(args)
        return COMMANDS[args.command](values, run)
    except MarketError as exc:
        logger.error("%s", exc)
        return EXIT_DOMAIN
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(cli_main())
