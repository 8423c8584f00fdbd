"""Command-line entry point: ``tvrates {run,solve,check} --config FILE``.

Exit codes: 0 when every applicable bound holds, 2 when any bound is
violated, 1 on an operational error (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Optional

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import (
    BOUND_NAMES,
    ExperimentError,
    NoiseModel,
    RateReport,
    add_noise,
    make_phantom,
    run_experiment,
)
from .forward_ops import read_measurement_csv
from .grid import write_field_csv
from .mdp import MdpConfig, MdpError, choose_alpha_mdp, discrepancy, phi_index
from .smoothed_tv import SmoothedTvPenalty
from .solver import LineSearchError, minimize, optimality_residual

__all__ = ["main", "records_csv", "trace_csv", "report_json"]

EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2

RECORD_COLUMNS = ("delta", "alpha", "strategy", "discrepancy", "data_error", "j_gap",
                  "bregman_dist", "bregman_sym", "l2_error")


# ------------------------------------------------------------ rendering

def records_csv(report: RateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(RECORD_COLUMNS)
    for name in BOUND_NAMES:
        header += [f"{name}_satisfied", f"{name}_lhs", f"{name}_rhs"]
    w.writerow(header)
    for r in report.records:
        row = [repr(getattr(r, c)) if c != "strategy" else r.strategy for c in RECORD_COLUMNS]
        for name in BOUND_NAMES:
            c = r.check(name)
            flag = "skipped" if c.satisfied is None else str(c.satisfied).lower()
            row += [flag, repr(c.lhs), repr(c.rhs)]
        w.writerow(row)
    return buf.getvalue()


def _trace_rows(delta: float, trace) -> list:
    return [[repr(delta), i, repr(t.alpha), repr(t.discrepancy), t.iterations,
             str(t.converged).lower()] for i, t in enumerate(trace)]


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "step", "alpha", "discrepancy", "iterations", "converged"])
    w.writerows(rows)
    return buf.getvalue()


def report_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def bound_table(report: RateReport) -> str:
    short = {"satisfied": "ok", "violated": "FAIL", "skipped": "-"}
    lines = [f"{'delta':>10} {'alpha':>11} {'discrepancy':>12}  "
             + "  ".join(f"{n:>16}" for n in BOUND_NAMES)]
    for r in report.records:
        cells = [f"{short[r.check(n).status]:>16}" for n in BOUND_NAMES]
        lines.append(f"{r.delta:>10.4g} {r.alpha:>11.4g} {r.discrepancy:>12.4g}  " + "  ".join(cells))
    if report.fitted_kappa is not None:
        lines.append(f"fit: {report.fit_target} ~ {report.fitted_C:.4g} * delta^{report.fitted_kappa:.4f}")
    return "\n".join(lines)


# -------------------------------------------------------------- output

def write_atomically(out_dir: Path, writers: dict[str, Callable[[Path], None]]) -> list[Path]:
    """Write every file to a temporary sibling first, then rename all of them.

    If any writer fails, the temporaries are removed and nothing is renamed.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    staged: list[tuple[Path, Path]] = []
    try:
        for name, write in writers.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            os.close(fd)
            staged.append((Path(tmp), out_dir / name))
            write(Path(tmp))
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


def _text(content: str) -> Callable[[Path], None]:
    return lambda p: p.write_text(content)


# ------------------------------------------------------------ commands

def cmd_check(cfg: ExperimentConfig, args) -> int:
    print(json.dumps(cfg.echo(), indent=2))
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    if len(cfg.deltas) < 3:
        raise ConfigError("run needs at least 3 entries in deltas")
    report = run_experiment(cfg)
    files = {
        cfg.output.records_csv: _text(records_csv(report)),
        cfg.output.report_json: _text(report_json(report.to_dict())),
    }
    if args.trace:
        rows = [row for r in report.records for row in _trace_rows(r.delta, r.trace)]
        files[cfg.output.trace_csv] = _text(trace_csv(rows))
    written = write_atomically(Path(args.out), files)
    print(bound_table(report))
    for p in written:
        print(f"wrote {p}")
    if report.violations:
        for delta, name in report.violations:
            print(f"violated: {name} at delta={delta:g}", file=sys.stderr)
        return EXIT_VIOLATED
    return EXIT_OK


def _single_delta(cfg: ExperimentConfig) -> float:
    if cfg.delta is not None:
        return cfg.delta
    if len(cfg.deltas) == 1:
        return cfg.deltas[0]
    raise ConfigError("solve needs a single noise level: set 'delta' (or a one-entry 'deltas')")


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    delta = _single_delta(cfg)
    op = cfg.build_operator()
    penalty = SmoothedTvPenalty(cfg.beta)
    if cfg.measurement_csv:
        f = read_measurement_csv(cfg.measurement_csv)
    else:
        phantom = make_phantom(cfg.phantom.kind, op.domain_grid, cfg.phantom.amplitude)
        f = add_noise(op.measurement(op.forward_array(phantom.values)), NoiseModel(delta, cfg.seed))
    solve_cfg = cfg.build_solve_config()
    trace = ()
    if cfg.strategy == "mdp":
        res = choose_alpha_mdp(op, f, penalty, MdpConfig(
            delta, cfg.tau_low, cfg.tau_high, tuple(cfg.alpha_bracket), cfg.max_solves, solve_cfg))
        sol, trace, solves = res.solution, res.trace, res.solves_used
    else:
        sol = minimize(op, f, phi_index(delta, cfg.build_index_function()), penalty, solve_cfg)
        solves = 1
    disc = discrepancy(op, sol.phi, f)
    payload = {
        "delta": delta,
        "strategy": cfg.strategy,
        "alpha": sol.alpha,
        "discrepancy": disc,
        "in_band": cfg.tau_low * delta <= disc <= cfg.tau_high * delta,
        "optimality_residual": optimality_residual(op, f, sol, penalty),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "solves_used": solves,
        "config": cfg.echo(),
    }
    files = {
        cfg.output.solution_csv: lambda p: write_field_csv(p, sol.phi),
        cfg.output.solution_json: _text(report_json(payload)),
    }
    if args.trace and trace:
        files[cfg.output.trace_csv] = _text(trace_csv(_trace_rows(delta, trace)))
    for p in write_atomically(Path(args.out), files):
        print(f"wrote {p}")
    print(f"alpha={sol.alpha:.6g} discrepancy={disc:.6g} "
          f"residual={payload['optimality_residual']:.3e}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "solve": cmd_solve, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvrates",
        description="Smoothed-TV Tikhonov solves, discrepancy-principle parameter "
                    "choice and certification of convergence-rate bounds.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=".", help="output directory (default: .)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry; dotted keys, JSON values (repeatable)")
    parser.add_argument("--trace", action="store_true", help="also write the MDP bisection trace CSV")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except ExperimentError as exc:
        done = len(exc.partial.records) if exc.partial else 0
        print(f"error: {exc} ({done} noise level(s) completed before the failure)", file=sys.stderr)
    except (MdpError, LineSearchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
