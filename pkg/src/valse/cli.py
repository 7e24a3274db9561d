"""Command-line front end: ``estimate``, ``bench``, ``demo-vm`` and ``version``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench import PRESETS, ExperimentConfig, SweepPoint, default_workers, preset, run_trials
from .circular import TWO_PI, VmParam, solve_concentration, unwrap_vm, wrapped_vm_pdf
from .engine import EngineConfig, EstimationResult, run
from .freq_model import MeasurementSet

CSV_COLUMNS = (
    "sweep_var", "value", "n_trials", "success_rate", "nmse_db", "freq_rmse",
    "crlb_freq_rmse", "crlb_nmse_db", "mean_runtime_ms", "mode",
)
TRIAL_COLUMNS = ("sweep_var", "value", "seed", "K", "K_hat", "success", "nmse", "freq_mse", "runtime_ms",
                 "iters", "converged", "error")
SWEEP_VARS = ("snr_db", "M", "K", "delta_omega")


class ParseError(ValueError):
    pass


def read_signal(text: str, source: str = "<signal>") -> MeasurementSet:
    """Parse ``N M`` followed by M lines ``index re im``. Blank lines and ``#`` comments are skipped."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise ParseError(f"{source}: empty signal file")
    lineno, head = rows[0]
    if len(head) != 2:
        raise ParseError(f"{source}:{lineno}: header must be 'N M'")
    try:
        N, M = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"{source}:{lineno}: N and M must be integers") from None
    if N < 1 or M < 1:
        raise ParseError(f"{source}:{lineno}: N and M must be positive")
    if M > N:
        raise ParseError(f"{source}:{lineno}: M={M} exceeds N={N}")
    body = rows[1:]
    if len(body) != M:
        raise ParseError(f"{source}: expected {M} sample lines, found {len(body)}")
    idx = np.empty(M, np.int64)
    y = np.empty(M, complex)
    for j, (lineno, fields) in enumerate(body):
        if len(fields) != 3:
            raise ParseError(f"{source}:{lineno}: expected 'index re im', got {len(fields)} fields")
        names = ("index", "re", "im")
        try:
            idx[j] = int(fields[0])
        except ValueError:
            raise ParseError(f"{source}:{lineno}: field 'index' is not an integer") from None
        parts = []
        for name, val in zip(names[1:], fields[1:]):
            try:
                parts.append(float(val))
            except ValueError:
                raise ParseError(f"{source}:{lineno}: field '{name}' is not a number") from None
        y[j] = complex(*parts)
    order = np.argsort(idx, kind="stable")
    try:
        return MeasurementSet(idx[order], N, y[order])
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from None


def format_signal(mset: MeasurementSet) -> str:
    lines = [f"{mset.N} {mset.M}"]
    lines += [f"{int(k)} {float(v.real)!r} {float(v.imag)!r}" for k, v in zip(mset.indices, mset.y)]
    return "\n".join(lines) + "\n"


def _f(x: float) -> str:
    return repr(float(x))


def format_result(result: EstimationResult) -> str:
    """Human-readable result document of ``key: value`` lines and component blocks."""
    out = [
        f"K_hat: {result.K_hat}",
        f"iterations: {result.iters}",
        f"converged: {str(result.converged).lower()}",
        f"nu: {_f(result.beta.nu)}",
        f"rho: {_f(result.beta.rho)}",
        f"tau: {_f(result.beta.tau)}",
    ]
    for j in range(result.K_hat):
        post = result.posteriors[j]
        w = complex(result.amps[j])
        out += [
            "component:",
            f"  index: {int(result.components[j])}",
            f"  theta: {_f(result.freqs[j])}",
            f"  abs_w: {_f(abs(w))}",
            f"  arg_w: {_f(np.angle(w))}",
        ]
        if post.is_point or len(post.mixture) == 1:
            out.append(f"  kappa: {_f(post.kappa)}")
        else:
            parts = [f"{_f(wt)} {_f(p.kappa)} {_f(p.mu)}" for wt, p in post.mixture]
            out.append("  mixture: " + "; ".join(parts))
    out.append("x_hat:")
    out += [f"  {n} {_f(v.real)} {_f(v.imag)}" for n, v in enumerate(result.x_hat)]
    return "\n".join(out) + "\n"


def parse_result(text: str) -> dict:
    """Inverse of :func:`format_result`, with numbers left as strings except ``K_hat``."""
    doc: dict = {"components": [], "x_hat": []}
    section = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("  "):
            body = line.strip()
            if section == "x_hat":
                n, re_, im = body.split()
                doc["x_hat"].append(complex(float(re_), float(im)))
            else:
                key, val = body.split(":", 1)
                doc["components"][-1][key] = val.strip()
            continue
        key, val = line.split(":", 1)
        if key == "component":
            doc["components"].append({})
            section = "component"
        elif key == "x_hat":
            section = "x_hat"
        else:
            doc[key] = val.strip()
            section = None
    doc["K_hat"] = int(doc["K_hat"])
    return doc


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        heuristic=args.heuristic, D=args.d, mode=args.mode, max_iters=args.max_iters, rel_tol=args.rel_tol
    )


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_estimate(args) -> int:
    path = Path(args.input)
    mset = read_signal(path.read_text(), str(path))
    result = run(mset, mset.N, _engine_config(args))
    _write_text(args.out, format_result(result))
    return 0


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("grid must not be empty")
    return vals


def _sweep_points(args, engine: EngineConfig) -> list[SweepPoint]:
    timing = args.timing or args.preset == "scaling"
    if args.preset:
        return preset(args.preset, args.trials, args.seed, engine, timing)
    base = ExperimentConfig(
        N=args.n, M=args.m if args.m is not None else args.n, K=args.k,
        delta_omega=args.sep * TWO_PI / args.n, snr_db=args.snr, exact_separation=args.exact,
        n_trials=args.trials, base_seed=args.seed, engine=engine, timing=timing,
    )
    points = []
    for val in args.values:
        if args.sweep == "snr_db":
            cfg = replace(base, snr_db=val)
        elif args.sweep == "M":
            cfg = replace(base, M=int(val))
        elif args.sweep == "K":
            cfg = replace(base, K=int(val))
        else:
            cfg = replace(base, delta_omega=val * TWO_PI / base.N)
        points.append(SweepPoint(args.sweep, val, cfg))
    return points


def _csv_value(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cmd_bench(args) -> int:
    engine = _engine_config(args)
    if not args.preset and not args.values:
        raise ParseError("bench needs --preset or --values")
    points = _sweep_points(args, engine)
    workers = args.threads if args.threads else default_workers()
    summary = io.StringIO()
    trials = io.StringIO()
    writer = csv.writer(summary, lineterminator="\n")
    trial_writer = csv.writer(trials, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    trial_writer.writerow(TRIAL_COLUMNS)
    for point in points:
        records, agg = run_trials(point.config, workers)
        writer.writerow([_csv_value(v) for v in (
            point.sweep_var, float(point.value), agg.n_trials, agg.success_rate, agg.nmse_db, agg.freq_rmse,
            agg.crlb_freq_rmse, agg.crlb_nmse_db, agg.mean_runtime_ms, engine.mode,
        )])
        for r in records:
            mse = math.fsum(r.freq_sq_errors) / len(r.freq_sq_errors) if r.freq_sq_errors else math.nan
            trial_writer.writerow([_csv_value(v) for v in (
                point.sweep_var, float(point.value), r.seed, r.K, r.K_hat, r.success, r.nmse, mse,
                1e3 * r.runtime, r.iters, r.converged, r.error,
            )])
        logging.getLogger(__name__).info("%s=%s: success %.3f", point.sweep_var, point.value, agg.success_rate)
    _write_text(args.out, summary.getvalue())
    if args.per_trial:
        Path(args.per_trial).write_text(trials.getvalue())
    return 0


def cmd_demo_vm(args) -> int:
    param = VmParam.from_polar(args.kappa, args.mu)
    mix = unwrap_vm(args.m, param)
    theta = -np.pi + TWO_PI * np.arange(args.points) / (args.points - 1)
    wrapped = wrapped_vm_pdf(theta, args.m, param)
    approx = mix.pdf(theta)
    kappa_tilde = solve_concentration(args.m, args.kappa)
    print(f"kappa_tilde: {kappa_tilde!r}", file=sys.stderr if args.out in (None, "-") else sys.stdout)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("theta", "wrapped_vm_pdf", "mvm_pdf"))
    for row in zip(theta, wrapped, approx):
        writer.writerow([repr(float(v)) for v in row])
    _write_text(args.out, buf.getvalue())
    return 0


def cmd_version(args) -> int:
    print(__version__)
    return 0


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _seed(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("full", "point"), default="full")
    p.add_argument("--heuristic", choices=("h1", "h2"), default="h2")
    p.add_argument("--d", type=_positive_int, default=50, help="mixture size for h1")
    p.add_argument("--max-iters", type=_positive_int, default=5000)
    p.add_argument("--rel-tol", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valse", description=__doc__)
    parser.add_argument("--config", help="key=value file providing defaults for the subcommand flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate sinusoids in a signal file")
    est.add_argument("input")
    est.add_argument("--out", help="result file (stdout by default)")
    _add_engine_flags(est)
    est.set_defaults(func=cmd_estimate)

    bench = sub.add_parser("bench", help="Monte-Carlo sweeps on synthetic data")
    bench.add_argument("--preset", choices=PRESETS)
    bench.add_argument("--sweep", choices=SWEEP_VARS, default="snr_db")
    bench.add_argument("--values", type=_float_list, help="comma-separated sweep grid")
    bench.add_argument("--n", type=_positive_int, default=21)
    bench.add_argument("--m", type=_positive_int)
    bench.add_argument("--k", type=int, default=5)
    bench.add_argument("--snr", type=float, default=15.0)
    bench.add_argument("--sep", type=float, default=1.0, help="separation in units of 2 pi / N")
    bench.add_argument("--exact", action="store_true", help="exact instead of minimum separation")
    bench.add_argument("--trials", type=int, default=100)
    bench.add_argument("--seed", type=_seed, default=0)
    bench.add_argument("--threads", type=int, default=0, help="worker processes (0: all cores)")
    bench.add_argument("--timing", action="store_true", help="record runtimes (breaks byte-identical output)")
    bench.add_argument("--out", help="aggregate CSV (stdout by default)")
    bench.add_argument("--per-trial", help="optional per-trial CSV")
    _add_engine_flags(bench)
    bench.set_defaults(func=cmd_bench)

    demo = sub.add_parser("demo-vm", help="wrapped von Mises pdf and its mixture approximation")
    demo.add_argument("--m", type=_positive_int, default=3)
    demo.add_argument("--kappa", type=float, default=10.0)
    demo.add_argument("--mu", type=float, default=0.0)
    demo.add_argument("--points", type=_positive_int, default=721)
    demo.add_argument("--out", help="CSV file (stdout by default)")
    demo.set_defaults(func=cmd_demo_vm)

    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=cmd_version)
    return parser


def read_config(path: str) -> dict[str, str]:
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value")
        key, val = (part.strip() for part in line.split("=", 1))
        entries[key.lstrip("-").replace("-", "_")] = val
    return entries


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(parser: argparse.ArgumentParser, command: str, entries: dict[str, str]) -> None:
    """Install config entries as subcommand defaults, so explicit flags still win."""
    subparser = next(a for a in parser._subparsers._group_actions if a.dest == "command").choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, val in entries.items():
        action = actions.get(key)
        if action is None or key in ("help", "func", "input"):
            raise ParseError(f"unknown config key {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            low = val.lower()
            if low not in _TRUE | _FALSE:
                raise ParseError(f"config key {key!r} expects a boolean, got {val!r}")
            defaults[key] = low in _TRUE
        else:
            try:
                defaults[key] = action.type(val) if action.type else val
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ParseError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise ParseError(f"config key {key!r} must be one of {sorted(action.choices)}")
    subparser.set_defaults(**defaults)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config:
            _apply_config(parser, args.command, read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
