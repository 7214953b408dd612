"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 a boosting factor fell back
to the guard value (results remain valid, just conservative), 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import simkit
from .conformal import ConformalConfig, run_conformal_boosted
from .confseq import ConfSeqConfig, confidence_sequence
from .wor import read_population, run_wor_boosted

EXIT_OK, EXIT_USAGE, EXIT_FALLBACK, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _globals(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = p.add_argument_group("global options")
    g.add_argument("--alpha", type=float, default=d(None), help="type I level (preset default if omitted)")
    g.add_argument("--beta", type=float, default=d(None), help="type II level for two-sided presets")
    g.add_argument("--seed", type=int, default=d(None), help=f"master seed (default {simkit.DEFAULT_SEED})")
    g.add_argument("--trials", type=int, default=d(None), help="Monte Carlo trials per grid point")
    g.add_argument("--max-samples", type=int, default=d(None), help="observation cap per run")
    g.add_argument("--out", type=Path, default=d(None), help="output CSV (stdout if omitted)")
    g.add_argument("--parallelism", type=int, default=d(1), help="worker processes (output does not depend on it)")
    g.add_argument("--log-steps", action="store_true", default=d(False), help="emit per-step rows instead of a summary")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqboost", description="Boosted sequential tests: tables, simulations and audits.")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    for name, nu in (("table2", 0.0), ("table3", 0.4)):
        s = sub.add_parser(name, help=f"one-step Gaussian boosting factors (futility level {nu})")
        s.add_argument("--nu", type=float, default=nu, help="futility level on the wealth scale")
        _globals(s, suppress=True)

    s = sub.add_parser("simulate", help="run a Monte Carlo preset and write its summary table")
    s.add_argument("--preset", required=True, choices=sorted(simkit.PRESETS))
    s.add_argument("--records", type=Path, default=None, help="also write one row per (trial, method) here")
    _globals(s, suppress=True)

    s = sub.add_parser("confseq", help="boosted confidence sequence for a Gaussian mean")
    s.add_argument("--input", type=Path, default=None, help="one value per line; runs the figS1 preset if omitted")
    s.add_argument("--delta", type=float, default=None, help="bet size (default sqrt(8 log(1/alpha) / T))")
    s.add_argument("--side", choices=("lower", "upper", "two-sided"), default="lower")
    s.add_argument("--no-boost", action="store_true")
    _globals(s, suppress=True)

    s = sub.add_parser("wor", help="audit a 0/1 population file drawn in line order")
    s.add_argument("--population", type=Path, required=True)
    s.add_argument("--mu0", type=float, default=0.5)
    s.add_argument("--mu1", type=float, default=0.55)
    s.add_argument("--no-boost", action="store_true")
    _globals(s, suppress=True)

    s = sub.add_parser("conformal", help="test exchangeability of a numeric stream")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--kappa", type=float, default=0.5)
    s.add_argument("--no-boost", action="store_true")
    _globals(s, suppress=True)
    return p


@contextmanager
def _sink(path):
    if path is None:
        yield sys.stdout
        return
    try:
        fh = path.open("w", encoding="utf-8", newline="")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    with fh:
        yield fh


def _write(rows, columns, path):
    with _sink(path) as fh:
        simkit.write_csv_stream(rows, columns, fh)


def _read_values(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e
    vals = []
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        try:
            v = float(s)
        except ValueError:
            raise UsageError(f"{path}:{n}: not a number: {s!r}") from None
        if not math.isfinite(v):
            raise UsageError(f"{path}:{n}: value must be finite")
        vals.append(v)
    return np.array(vals)


def _alpha(args, default=0.05):
    return default if args.alpha is None else args.alpha


def _outcome_row(out):
    return {
        "decision": out.decision.value,
        "stopping_time": out.stopping_time,
        "boosted_wealth": out.boosted_wealth_at_stop,
        "raw_wealth": out.raw_lr_at_stop,
    }


def _emit_outcome(out, args):
    if args.log_steps:
        rows = [vars(s) for s in out.log or []]
        _write(rows, ["t", "b", "wealth"], args.out)
    else:
        row = _outcome_row(out)
        _write([row], list(row), args.out)


def _cmd_table(args):
    preset = simkit.resolve_preset(args.command, alpha=args.alpha)
    preset = replace(preset, params={"nu": args.nu})
    res = simkit.run_preset(preset)
    _write(res.table, res.columns, args.out)
    return res.fallbacks


def _cmd_simulate(args):
    res = simkit.run_preset(
        args.preset, args.parallelism, trials=args.trials, seed=args.seed,
        max_samples=args.max_samples, alpha=args.alpha, beta=args.beta,
    )
    for e in res.errors:
        print(f"seqboost: {e}", file=sys.stderr)
    _write(res.table, res.columns, args.out)
    if args.records is not None:
        simkit.emit_csv(res.records, args.records, simkit.RECORD_COLUMNS)
    if res.errors:
        return -1
    return res.fallbacks


def _cmd_confseq(args):
    if args.input is None:
        res = simkit.run_preset("figS1", trials=args.trials, seed=args.seed, max_samples=args.max_samples, alpha=args.alpha)
        _write(res.table, res.columns, args.out)
        return 0
    x = _read_values(args.input)
    if args.max_samples is not None:
        x = x[: args.max_samples]
    if x.size == 0:
        raise UsageError(f"{args.input}: no observations")
    a = _alpha(args)
    delta = args.delta if args.delta is not None else math.sqrt(8 * math.log(1 / a) / x.size)
    tr = confidence_sequence(x, ConfSeqConfig(a, delta, args.side, boost=not args.no_boost))
    cols = ["t", "mean", "lower", "upper", "robbins_lower", "robbins_upper"]
    rows = [dict(zip(cols, (int(tr.t[i]),) + tuple(float(getattr(tr, c)[i]) for c in cols[1:]))) for i in range(x.size)]
    _write(rows, cols, args.out)
    return 0


def _cmd_wor(args):
    try:
        draws = read_population(args.population)
    except OSError as e:
        raise OSError(f"cannot read {args.population}: {e.strerror or e}") from e
    if draws.size == 0:
        raise UsageError(f"{args.population}: empty population")
    if args.max_samples is not None:
        draws_used = draws[: args.max_samples]
    else:
        draws_used = draws
    out = run_wor_boosted(draws_used, draws.size, args.mu0, args.mu1, _alpha(args), with_boost=not args.no_boost, log_steps=args.log_steps)
    _emit_outcome(out, args)
    return out.fallbacks


def _cmd_conformal(args):
    x = _read_values(args.input)
    seed = simkit.DEFAULT_SEED if args.seed is None else args.seed
    cfg = ConformalConfig(args.kappa, _alpha(args), seed, not args.no_boost)
    n = x.size if args.max_samples is None else min(x.size, args.max_samples)
    out = run_conformal_boosted(x, config=cfg, max_samples=n, log_steps=args.log_steps)
    _emit_outcome(out, args)
    return out.fallbacks


COMMANDS = {
    "table2": _cmd_table,
    "table3": _cmd_table,
    "simulate": _cmd_simulate,
    "confseq": _cmd_confseq,
    "wor": _cmd_wor,
    "conformal": _cmd_conformal,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.parallelism < 1:
            raise UsageError("--parallelism must be >= 1")
        status = COMMANDS[args.command](args)
    except OSError as e:
        print(f"seqboost: {e}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError, KeyError) as e:
        print(f"seqboost: {e}", file=sys.stderr)
        return EXIT_USAGE
    if status < 0:
        return EXIT_IO
    if status > 0:
        print(f"seqboost: {status} boosting factor(s) fell back to 1", file=sys.stderr)
        return EXIT_FALLBACK
    return EXIT_OK
