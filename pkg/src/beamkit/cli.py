"""Command-line entry point: ``beamkit --preset fig4 --trials 5 --out fig4.csv``.

Exactly one of ``--config`` or ``--preset`` selects the scenario. The master
seed comes from ``--seed`` if given, else from the ``BEAMKIT_SEED``
environment variable, else from the configuration. Output is CSV preceded by
a ``# format_version: N`` comment line.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from pathlib import Path

from beamkit.config import (
    FORMAT_VERSION,
    MAX_SEED,
    ConfigError,
    emit_config,
    load_preset,
    parse_config,
    preset_names,
)
from beamkit.evaluation import SweepResult
from beamkit.experiments import CdfResult, run_scenario

__all__ = ["main", "build_parser", "render_csv", "SWEEP_COLUMNS", "CDF_COLUMNS"]

logger = logging.getLogger("beamkit")

SWEEP_COLUMNS = ("axis", "method", "mean_rate", "stderr", "trials", "failed")
CDF_COLUMNS = ("rate", "cdf", "method")
SEED_ENV = "BEAMKIT_SEED"


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {v}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamkit", description="Hybrid beamforming Monte Carlo experiments (CSV output).")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario file")
    src.add_argument("--preset", choices=preset_names(), help="shipped scenario")
    p.add_argument("--seed", type=_u64, help=f"master seed (overrides {SEED_ENV} and the config)")
    p.add_argument("--trials", type=_positive, help="number of trials (time slots for mu_cdf)")
    p.add_argument("--out", type=Path, help="CSV destination (default: stdout)")
    p.add_argument("--threads", type=_positive, default=1, help="worker threads for independent trials")
    p.add_argument("--emit-config", action="store_true", help="print the resolved scenario and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def render_csv(result) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version: {FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(result, CdfResult):
        w.writerow(CDF_COLUMNS)
        for rate, cdf, method in result.rows():
            w.writerow((_fmt(rate), _fmt(cdf), method))
    elif isinstance(result, SweepResult):
        w.writerow(SWEEP_COLUMNS)
        for r in result.rows:
            w.writerow((_fmt(r.axis), r.method, _fmt(r.mean_rate), _fmt(r.stderr), r.trials, r.failed))
    else:
        raise TypeError(f"cannot render {type(result).__name__}")
    return buf.getvalue()


def _resolve(args):
    if args.preset:
        scenario, _ = load_preset(args.preset)
    else:
        scenario = parse_config(args.config.read_text())
    overrides = {}
    env_seed = os.environ.get(SEED_ENV)
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif env_seed:
        try:
            overrides["seed"] = _u64(env_seed)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{SEED_ENV}={env_seed!r} is not a valid seed ({exc})") from None
    if args.trials is not None:
        overrides["trials"] = args.trials
    return dataclasses.replace(scenario, **overrides) if overrides else scenario


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        scenario = _resolve(args)
        if args.emit_config:
            sys.stdout.write(emit_config(scenario))
            return 0
        result = run_scenario(scenario, threads=args.threads)
    except ConfigError as exc:
        print(f"beamkit: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"beamkit: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"beamkit: rejected: {exc}", file=sys.stderr)
        return 1

    if isinstance(result, CdfResult):
        for method, n in sorted(result.failed.items()):
            if n:
                logger.warning("%s: %d failed slots excluded", method, n)
    text = render_csv(result)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
