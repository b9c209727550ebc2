"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 numerical-consistency failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .csiszar import (
    ConsistencyError,
    CurveSpec,
    e_fa,
    e_fr_at_rate,
    e_fr_fixed_csiszar,
    e_fr_variable_csiszar,
)
from .gallager import (
    e_fr_fixed_gallager,
    e_fr_fixed_mismatched,
    e_fr_variable_gallager,
    e_fr_variable_mismatched,
)
from .probability import ConditionalPmf, ModelError, SourceModel, entropy, load_model, simplex_grid
from .rates import (
    FixedRates,
    privacy_feasible_variable,
    rate_functions_variable,
    rs_min_fixed,
    rw_cap_combined,
    rw_star_fixed,
    rw_star_privacy_fixed,
)
from .simulation import DecodingMetric, SizeCapExceeded, ensemble_estimate

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_CONSISTENCY = 0, 1, 2
DIGITS = 12
DUALITY_TOL = 1e-3
MISMATCH_TOL = 1e-6


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _num(x: float) -> str:
    return format(float(x), f".{DIGITS}g")


def _shown(x: float, bits: bool) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x / math.log(2) if bits else x:.10f}"


# ---------------------------------------------------------------------------
# inputs


def _model(path: str) -> SourceModel:
    try:
        return load_model(path)
    except ModelError as exc:
        raise InputError(str(exc)) from exc


def load_conditional(path: str, model: SourceModel) -> ConditionalPmf:
    """Read P'(x|y) as JSON ``{"rows": [[P'(x|y=0) ...], ...]}``, one row per y."""
    try:
        data = json.loads(Path(path).read_text())
        rows = np.asarray(data["rows"] if isinstance(data, dict) else data, dtype=float)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"cannot read P' from {path}: {exc}") from exc
    if rows.shape != (model.ny, model.nx):
        raise InputError(f"P' must have shape (|Y|, |X|) = {(model.ny, model.nx)}, got {rows.shape}")
    try:
        return ConditionalPmf.from_matrix(rows)
    except ValueError as exc:
        raise InputError(f"P' rows must be pmfs: {exc}") from exc


def parse_metric(text: str, model: SourceModel, table=None) -> DecodingMetric:
    """Decode ``map``, ``gld:<beta>``, ``minent:<beta>``, ``mismatched:<path>`` or ``varopt``."""
    kind, _, arg = text.partition(":")
    try:
        if kind == "map" and not arg:
            return DecodingMetric.map()
        if kind == "gld":
            return DecodingMetric.likelihood(float(arg or 1.0))
        if kind == "minent":
            return DecodingMetric.min_entropy(float(arg or 1.0))
        if kind == "mismatched" and arg:
            return DecodingMetric.mismatched(load_conditional(arg, model))
        if kind == "varopt" and not arg:
            if table is None:
                raise InputError("--metric varopt needs --rate-table")
            return DecodingMetric.variable_optimal(table)
    except ValueError as exc:
        raise InputError(f"bad metric {text!r}: {exc}") from exc
    raise InputError(f"unknown metric {text!r}")


def _curve_spec(args) -> CurveSpec:
    try:
        return CurveSpec(args.e0_min, args.e0_max, args.steps, args.mode)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# outputs


def _write_csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _emit(args, text: str, manifest: dict) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.write_text(text, newline="")
    manifest = dict(manifest)
    manifest["data_file"] = out.name
    manifest_path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest(args, started: float, **extra) -> dict:
    echo = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    return {
        "command": args.command,
        "arguments": echo,
        "argv": ["bioexp", *_argv(args)],
        "version": __version__,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        **extra,
    }


def _argv(args) -> list[str]:
    out = [args.command]
    for key, val in vars(args).items():
        if key in ("command", "func", "verbose") or key.startswith("_") or val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        out += [flag] if val is True else [flag, str(val)]
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_rates(args) -> int:
    model = _model(args.model)
    if args.e0 < 0 or (args.h0 is not None and args.h0 < 0):
        raise InputError("e0 and h0 must be non-negative")
    cap = rw_star_fixed(model, args.e0)
    result = {
        "e0": args.e0,
        "r_s_min": rs_min_fixed(args.e0),
        "r_w_star": cap.value,
        "r_w_star_raw": cap.raw,
        "lambda": cap.lam if math.isfinite(cap.lam) else "inf",
        "helper_useless": cap.useless,
        "duality_gap": cap.gap,
        "entropy_x": entropy(model.p_x),
    }
    if args.h0 is not None:
        result["h0"] = args.h0
        result["r_w_star_star"] = rw_star_privacy_fixed(model, args.h0)
        result["r_w_cap"] = rw_cap_combined(model, args.e0, args.h0)
        result["variable_rate_feasible"] = privacy_feasible_variable(model, args.e0, args.h0)
    unit = "bits" if args.bits else "nats"
    for key in ("r_s_min", "r_w_star", "r_w_star_star", "r_w_cap", "entropy_x"):
        if key in result:
            print(f"{key:>24s}  {_shown(result[key], args.bits)} {unit}", file=sys.stderr)
    if "variable_rate_feasible" in result:
        print(f"{'variable_rate_feasible':>24s}  {result['variable_rate_feasible']}", file=sys.stderr)
    started = args._started
    _emit(args, json.dumps(result, indent=2, sort_keys=True) + "\n", _manifest(args, started))
    return EXIT_OK


def _flags(*points) -> str:
    out: list[str] = []
    for p in points:
        if p is None:
            continue
        for f in p.flags:
            if f not in out:
                out.append(f)
        if not p.converged and "not_converged" not in out:
            out.append("not_converged")
    return ";".join(out)


def cmd_tradeoff(args) -> int:
    model = _model(args.model)
    spec = _curve_spec(args)
    use_primal = args.solver in ("primal", "both")
    use_dual = args.solver in ("dual", "both")
    modes = ["fixed", "variable"] if spec.mode == "both" else [spec.mode]
    solvers = {
        "fixed": (e_fr_fixed_csiszar, e_fr_fixed_gallager),
        "variable": (e_fr_variable_csiszar, e_fr_variable_gallager),
    }
    header = ["e0", "e_fr_fixed", "e_fr_variable", "duality_gap_fixed", "duality_gap_variable",
              "flags_fixed", "flags_variable"]
    rows, gaps = [], {m: 0.0 for m in modes}
    curves = {m: [] for m in modes}
    for e0 in spec.grid():
        e0 = float(e0)
        row = {"e0": _num(e0)}
        for mode in modes:
            primal_fn, dual_fn = solvers[mode]
            p = primal_fn(model, e0) if use_primal else None
            d = dual_fn(model, e0) if use_dual else None
            value = p.value if p is not None else d.value
            curves[mode].append(value)
            row[f"e_fr_{mode}"] = _num(value)
            if p is not None and d is not None:
                gap = abs(p.value - d.value)
                gaps[mode] = max(gaps[mode], gap)
                row[f"duality_gap_{mode}"] = _num(gap)
            row[f"flags_{mode}"] = _flags(p, d)
        rows.append([row.get(h, "") for h in header])
    violations = [m for m in modes if use_primal and use_dual and gaps[m] > args.tol_duality]
    problems = []
    for mode in modes:
        c = curves[mode]
        if any(b > a + 1e-6 for a, b in zip(c, c[1:])):
            problems.append(f"{mode} curve increases")
    if len(modes) == 2 and any(v < f - 1e-6 for f, v in zip(curves["fixed"], curves["variable"])):
        problems.append("variable-rate curve below fixed-rate curve")
    manifest = _manifest(args, args._started, duality_gaps=gaps,
                         tolerances={"duality": args.tol_duality, "monotone": 1e-6})
    _emit(args, _write_csv(header, rows), manifest)
    for mode in violations:
        print(f"error: {mode} duality gap {gaps[mode]:.3g} exceeds {args.tol_duality:g}", file=sys.stderr)
    for msg in problems:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_CONSISTENCY if violations or problems else EXIT_OK


def cmd_simulate(args) -> int:
    model = _model(args.model)
    if args.n is None or args.n < 1:
        raise InputError("--n must be a positive integer")
    if args.codes < 1:
        raise InputError("--codes must be positive")
    table = None
    if args.rate_table is not None:
        if args.rate_table < 0:
            raise InputError("--rate-table E0 must be non-negative")
        grid = simplex_grid(model.nx, args.n)
        table = rate_functions_variable(model, args.rate_table, grid)
        rates = table
        reference = {"e_fa": args.rate_table,
                     "e_fr": e_fr_variable_gallager(model, args.rate_table).value}
    else:
        if args.rs is None or args.rw is None:
            raise InputError("give --rs and --rw, or --rate-table E0")
        try:
            rates = FixedRates(args.rs, args.rw)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        reference = {"e_fa": e_fa(model, args.rw, args.rs).value,
                     "e_fr": e_fr_at_rate(model, args.rw).value}
    metric = parse_metric(args.metric, model, table)
    try:
        report = ensemble_estimate(model, args.n, rates, metric, args.codes, args.seed)
    except SizeCapExceeded as exc:
        raise InputError(str(exc)) from exc
    data = report.to_json()
    data["reference"] = reference
    unit = "bits" if args.bits else "nats"
    print(f"n={report.n} codes={report.trials} metric={report.metric}", file=sys.stderr)
    print(f"  FR  p={report.p_fr_hat:.6g} +/- {report.p_fr_halfwidth:.2g}  "
          f"exponent {_shown(report.fr_exponent, args.bits)} {unit}  "
          f"(analytic {_shown(reference['e_fr'], args.bits)})", file=sys.stderr)
    print(f"  FA  p={report.p_fa_hat:.6g} +/- {report.p_fa_halfwidth:.2g}  "
          f"exponent {_shown(report.fa_exponent, args.bits)} {unit}  "
          f"(analytic {_shown(reference['e_fa'], args.bits)})", file=sys.stderr)
    manifest = _manifest(args, args._started, seeds=[args.seed])
    _emit(args, json.dumps(data, indent=2, sort_keys=True) + "\n", manifest)
    return EXIT_OK


def cmd_mismatched(args) -> int:
    model = _model(args.model)
    p_prime = load_conditional(args.p_prime, model)
    spec = _curve_spec(args)
    modes = ["fixed", "variable"] if spec.mode == "both" else [spec.mode]
    matched = {"fixed": e_fr_fixed_gallager, "variable": e_fr_variable_gallager}
    mismatched = {"fixed": e_fr_fixed_mismatched, "variable": e_fr_variable_mismatched}
    header = ["e0"]
    for mode in modes:
        header += [f"matched_{mode}", f"mismatched_{mode}"]
    header += ["flags"]
    rows, worst = [], 0.0
    for e0 in spec.grid():
        e0 = float(e0)
        row, flags = [_num(e0)], []
        for mode in modes:
            m = matched[mode](model, e0)
            mm = mismatched[mode](model, p_prime, e0)
            worst = max(worst, mm.value - m.value)
            row += [_num(m.value), _num(mm.value)]
            flags += [f for f in mm.flags if f not in flags]
        rows.append(row + [";".join(flags)])
    manifest = _manifest(args, args._started, max_excess=worst,
                         tolerances={"mismatched_le_matched": MISMATCH_TOL})
    _emit(args, _write_csv(header, rows), manifest)
    if worst > MISMATCH_TOL:
        print(f"error: mismatched exponent exceeds matched by {worst:.3g}", file=sys.stderr)
        return EXIT_CONSISTENCY
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bioexp", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, curve=False):
        p.add_argument("--model", required=True, help="source model JSON file")
        p.add_argument("--out", help="output file (stdout if omitted)")
        p.add_argument("--bits", action="store_true", help="display rates in bits")
        if curve:
            p.add_argument("--e0-min", type=float, default=0.0)
            p.add_argument("--e0-max", type=float, default=0.3)
            p.add_argument("--steps", type=int, default=31)
            p.add_argument("--mode", choices=("fixed", "variable", "both"), default="both")

    p = sub.add_parser("rates", help="R_s, R_w*(E0) and privacy caps")
    common(p)
    p.add_argument("--e0", type=float, required=True)
    p.add_argument("--h0", type=float)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("tradeoff", help="FR-FA trade-off curves as CSV")
    common(p, curve=True)
    p.add_argument("--solver", choices=("primal", "dual", "both"), default="both")
    p.add_argument("--tol-duality", type=float, default=DUALITY_TOL)
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("simulate", help="exact small-n random-binning simulation")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rs", type=float)
    p.add_argument("--rw", type=float)
    p.add_argument("--rate-table", type=float, metavar="E0",
                   help="variable-rate code with the per-type rates for FA demand E0")
    p.add_argument("--metric", default="map",
                   help="map | gld:<beta> | minent:<beta> | mismatched:<path> | varopt")
    p.add_argument("--codes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mismatched", help="matched vs mismatched-metric curves as CSV")
    common(p, curve=True)
    p.add_argument("--p-prime", required=True, help="JSON file with rows P'(.|y)")
    p.set_defaults(func=cmd_mismatched)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._started = time.perf_counter()
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
