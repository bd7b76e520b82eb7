"""Command-line front end: QFIM tables, precision sweeps, slopes, simulation, design.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Any flag can also be given in a ``--config`` file, one ``key = value`` per
line with '#' comments; flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cfi import save_measurement, sld_povm
from .crlb import loglog_slope, precisions, sweep
from .measure_opt import DesignSpec, named_measurement, optimize_measurement
from .montecarlo import crlb_saturation_study
from .psf import gaussian_psf, load_psf, moments, overlaps
from .qfi import DegenerateStateError, build_subspace, quantum_fisher, sld_subspace
from .quadrature import QuadratureError
from .scene import PARAM_NAMES, SourceParams

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
DIGITS = 12
ORACLE_TOL = 1e-6


class UsageError(Exception):
    pass


def fmt(value: float) -> str:
    return f"{value:.{DIGITS}g}"


def rounded(value: float) -> float:
    return float(fmt(value))


# ---------------------------------------------------------------------------
# argument helpers


def float_list(text: str) -> list[float]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [float(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def name_list(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def grid_spec(text: str) -> tuple[float, float, int]:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like MIN:MAX:POINTS, got {text!r}") from None
    if n < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    return lo, hi, n


def s_grid(args) -> np.ndarray:
    if getattr(args, "s_log", None):
        lo, hi, n = args.s_log
        if lo <= 0:
            raise UsageError("log grids need positive bounds")
        return np.geomspace(lo, hi, n)
    if getattr(args, "s_lin", None):
        lo, hi, n = args.s_lin
        return np.linspace(lo, hi, n)
    if getattr(args, "s", None):
        return np.asarray(args.s, dtype=float)
    raise UsageError("give separations with --s, --s-log or --s-lin")


def q_list(args) -> list[float]:
    qs = args.q or []
    if not qs:
        raise UsageError("empty q list")
    for q in qs:
        if not 0.0 <= q <= 1.0:
            raise UsageError(f"q values must lie in [0, 1], got {q}")
    return qs


def make_psf(args):
    if args.psf == "gaussian":
        return gaussian_psf(args.width)
    path = Path(args.psf)
    if not path.exists():
        raise UsageError(f"PSF file {path} not found")
    psf, _ = load_psf(path)
    return psf


def read_config(path: str) -> list[str]:
    """Turn ``key = value`` lines into argv tokens."""
    tokens = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(" ")
        key = key.strip().lstrip("-").replace("_", "-")
        if not key:
            raise UsageError(f"{path}:{number}: malformed line {raw!r}")
        value = value.strip()
        flag = "--" + key
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens += [flag] + shlex.split(value)
    return tokens


def expand_config(argv: list[str]) -> list[str]:
    out, i = [], 0
    inserted = []
    while i < len(argv):
        if argv[i] == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file name")
            inserted += read_config(argv[i + 1])
            i += 2
        elif argv[i].startswith("--config="):
            inserted += read_config(argv[i].split("=", 1)[1])
            i += 1
        else:
            out.append(argv[i])
            i += 1
    if not inserted:
        return out
    # config tokens go right after the subcommand so explicit flags override them
    if out and not out[0].startswith("-"):
        return out[:1] + inserted + out[1:]
    return inserted + out


# ---------------------------------------------------------------------------
# commands


def cmd_qfim(args, out) -> int:
    psf = make_psf(args)
    methods = ["closed-form", "rank2", "grid-oracle"] if args.check_oracle else [args.method]
    worst = 0.0
    for q in q_list(args):
        for s in s_grid(args):
            params = SourceParams(args.s0, s, q)
            mats, undefined = {}, []
            for method in methods:
                try:
                    mats[method] = quantum_fisher(psf, params, method)
                except DegenerateStateError:
                    if not args.check_oracle or method == methods[0]:
                        raise
                    undefined.append(method)
            ref = mats[methods[0]]
            flags = ",".join(n for n, d in zip(PARAM_NAMES, ref.degenerate) if d) or "none"
            out.write(f"# s={fmt(s)} q={fmt(q)} s0={fmt(args.s0)} degenerate={flags}\n")
            for method in undefined:
                out.write(f"{method}: undefined for a pure state\n")
            for method, mat in mats.items():
                out.write(f"{method}:\n")
                for row in mat.entries:
                    out.write("  " + " ".join(f"{fmt(v):>20}" for v in row) + "\n")
            if args.check_oracle and (s == 0.0 or q in (0.0, 1.0)):
                # the closed form reports the s -> 0 limit, the oracle the derivative at the point
                out.write("pure state: provenances not compared\n")
            elif args.check_oracle:
                delta = max(float(np.max(np.abs(m.entries - ref.entries))) for m in mats.values())
                worst = max(worst, delta)
                out.write(f"max |delta| across provenances = {delta:.3e}\n")
    if args.check_oracle:
        ok = worst < ORACLE_TOL
        out.write(f"oracle check {'passed' if ok else 'FAILED'}: max |delta| = {worst:.3e} "
                  f"(tolerance {ORACLE_TOL:g})\n")
        return 0 if ok else EXIT_NUMERICAL
    return 0


def column_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", name).strip("_")


def sweep_table(args, psf):
    names = args.measure or []
    measurements = {column_name(n): named_measurement(n, psf) for n in names}
    rows = sweep(psf, s_grid(args), q_list(args), measurements, s0=args.s0)
    columns = ["s", "q", "s0", "Hs0_opt", "Hs_opt", "Hq_opt"]
    for name in measurements:
        columns += [f"Hs0_{name}", f"Hs_{name}", f"Hq_{name}"]
    table = []
    for row in rows:
        vals = [row.s, row.q, row.s0, *row.quantum.as_array()]
        for name in measurements:
            vals += list(row.classical[name].as_array())
        table.append([rounded(v) for v in vals])
    return columns, table


def write_table(columns, table, fmt_name: str, out) -> None:
    if fmt_name == "json":
        json.dump({"columns": columns, "rows": table}, out, indent=1)
        out.write("\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in table:
        writer.writerow([fmt(v) for v in row])


def read_table(path) -> tuple[list[str], list[list[float]]]:
    """Parse a table written by ``sweep`` (CSV or JSON)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return data["columns"], [[float(v) for v in r] for r in data["rows"]]
    reader = csv.reader(io.StringIO(text))
    columns = next(reader)
    return columns, [[float(v) for v in r] for r in reader if r]


def open_output(args):
    return open(args.output, "w") if getattr(args, "output", None) else None


def cmd_sweep(args, out) -> int:
    psf = make_psf(args)
    columns, table = sweep_table(args, psf)
    fh = open_output(args)
    try:
        write_table(columns, table, args.format, fh or out)
    finally:
        if fh:
            fh.close()
    return 0


def slope_rows(columns, table, lo: float, hi: float):
    data = np.asarray(table, dtype=float)
    s_col, q_col = columns.index("s"), columns.index("q")
    quantities = [c for c in columns if c.startswith("H")]
    result = []
    for q in dict.fromkeys(data[:, q_col]):
        sel = data[(data[:, q_col] == q) & (data[:, s_col] >= lo) & (data[:, s_col] <= hi)]
        for name in quantities:
            k = columns.index(name)
            pairs = [(r[s_col], r[k]) for r in sel if r[k] > 0]
            if len(pairs) < 5:
                result.append((q, name, float("nan"), float("nan"), len(pairs)))
                continue
            fit = loglog_slope(pairs)
            result.append((q, name, fit.slope, fit.stderr, fit.points))
    return result


def cmd_slopes(args, out) -> int:
    lo, hi = args.fit_range
    if args.input:
        columns, table = read_table(args.input)
    else:
        psf = make_psf(args)
        if not (args.s or args.s_log or args.s_lin):
            args.s_log = (lo, hi, 10)
        columns, table = sweep_table(args, psf)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["q", "quantity", "slope", "stderr", "points"])
    for q, name, slope, err, npts in slope_rows(columns, table, lo, hi):
        writer.writerow([fmt(q), name, fmt(slope), fmt(err), npts])
    return 0


def fit_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like MIN:MAX, got {text!r}") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return lo, hi


def build_measurement(name: str, psf, params: SourceParams):
    key = name.lower()
    if key.startswith("sld-"):
        which = key[4:]
        if which not in PARAM_NAMES:
            raise UsageError(f"unknown SLD parameter in {name!r}")
        sub = build_subspace(overlaps(psf, params.s), moments(psf), params)
        return sld_povm(sld_subspace(sub, which), psf)
    return named_measurement(name, psf)


def single_point(args) -> SourceParams:
    if args.s is None or len(args.s) != 1 or args.q is None or len(args.q) != 1:
        raise UsageError("this command needs exactly one --s and one --q")
    return SourceParams(args.s0, args.s[0], args.q[0])


def emit_json(report: dict, args, out) -> None:
    fh = open_output(args)
    try:
        json.dump(report, fh or out, indent=2)
        (fh or out).write("\n")
    finally:
        if fh:
            fh.close()


def params_dict(p: SourceParams) -> dict:
    return {name: rounded(getattr(p, name)) for name in PARAM_NAMES}


def cmd_simulate(args, out) -> int:
    psf = make_psf(args)
    params = single_point(args)
    estimate = tuple(args.estimate)
    for name in estimate:
        if name not in PARAM_NAMES:
            raise UsageError(f"unknown parameter {name!r} in --estimate")
    meas = build_measurement(args.measure, psf, params)
    start = time.perf_counter()
    run = crlb_saturation_study(psf, params, meas, n=args.n, trials=args.trials, seed=args.seed,
                                estimate=estimate, workers=args.workers, label=args.measure)
    elapsed = time.perf_counter() - start
    qfim = quantum_fisher(psf, params).entries
    idx = [PARAM_NAMES.index(n) for n in estimate]
    report = {
        "run_config": {
            "psf": args.psf, "width": args.width, "params": params_dict(params),
            "measure": args.measure, "n": args.n, "trials": args.trials, "seed": args.seed,
            "estimate": list(estimate),
        },
        "results": {
            "mean": {n: rounded(run.estimates[:, PARAM_NAMES.index(n)].mean()) for n in estimate},
            "variance": {n: rounded(run.covariance[k, k]) for k, n in enumerate(estimate)},
            "saturation_ratio": {n: rounded(v) for n, v in run.ratios.items()},
            "ratio_stderr": rounded(run.ratio_stderr()),
            "boundary_hits": run.boundary_hits,
        },
        "crlb_reference": {
            "classical_variance": {n: rounded(run.crlb[k, k]) for k, n in enumerate(estimate)},
            "quantum_variance": {n: rounded(float(np.linalg.inv(qfim[np.ix_(idx, idx)])[k, k]) / args.n)
                                 for k, n in enumerate(estimate)},
            "fisher": [[rounded(v) for v in row] for row in run.fisher],
        },
        "timing": {"seconds": round(elapsed, 3)},
    }
    emit_json(report, args, out)
    return 0


def cmd_optimize(args, out) -> int:
    psf = make_psf(args)
    params = single_point(args)
    spec = DesignSpec(n=args.modes, objective=args.objective, restarts=args.restarts,
                      seed=args.seed, workers=args.workers)
    start = time.perf_counter()
    res = optimize_measurement(spec, psf, params)
    elapsed = time.perf_counter() - start
    if args.export:
        save_measurement(res.measurement, args.export)
    H = precisions(res.fisher)
    report = {
        "run_config": {
            "psf": args.psf, "width": args.width, "params": params_dict(params),
            "objective": args.objective, "modes": args.modes, "restarts": args.restarts,
            "seed": args.seed,
        },
        "results": {
            "objective": rounded(res.objective),
            "ratio": rounded(res.ratio),
            "best_restart": res.best_restart,
            "angles": [rounded(a) for a in res.angles],
            "fisher": [[rounded(v) for v in row] for row in res.fisher.entries],
            "precisions": {n: rounded(H[n]) for n in PARAM_NAMES},
            "evaluations": [len(t) for t in res.traces],
            "loewner_margin": rounded(res.loewner_margin),
            "exported": args.export,
        },
        "crlb_reference": {
            "bound": rounded(res.bound),
            "quantum_fisher": [[rounded(v) for v in row] for row in res.quantum.entries],
        },
        "timing": {"seconds": round(elapsed, 3)},
    }
    emit_json(report, args, out)
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--psf", default="gaussian", help="'gaussian' or a two-column amplitude file")
    common.add_argument("--width", type=float, default=1.0, help="Gaussian PSF width")
    common.add_argument("--s0", type=float, default=0.0, help="centroid")
    common.add_argument("--s", type=float_list, help="separations, comma separated")
    common.add_argument("--q", type=float_list, help="relative brightnesses, comma separated")
    common.add_argument("--output", help="write to this file instead of stdout")
    common.add_argument("--config", help="read flags from a key = value file")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--s-log", type=grid_spec, metavar="MIN:MAX:N")
    grid.add_argument("--s-lin", type=grid_spec, metavar="MIN:MAX:N")
    grid.add_argument("--measure", type=name_list, default=[],
                      help="classical measurements: direct, hgN, bins:WIDTH:RANGE")
    grid.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = _Parser(prog="twopoint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("qfim", parents=[common], help="quantum Fisher matrices")
    p.add_argument("--s-log", type=grid_spec, metavar="MIN:MAX:N")
    p.add_argument("--s-lin", type=grid_spec, metavar="MIN:MAX:N")
    p.add_argument("--method", choices=("closed-form", "rank2", "grid-oracle"), default="closed-form")
    p.add_argument("--check-oracle", action="store_true",
                   help="compare all three provenances and fail above 1e-6")
    p.set_defaults(func=cmd_qfim)

    p = sub.add_parser("sweep", parents=[common, grid], help="precision table")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("slopes", parents=[common, grid], help="log-log slopes of a sweep")
    p.add_argument("--input", help="sweep table to fit instead of computing one")
    p.add_argument("--fit-range", type=fit_range, default=(1e-3, 1e-2), metavar="MIN:MAX")
    p.set_defaults(func=cmd_slopes)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo CRLB saturation study")
    p.add_argument("--n", type=int, default=100_000, help="photons per trial")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--measure", default="direct", help="direct, hgN, bins:W:R or sld-s0|sld-s|sld-q")
    p.add_argument("--estimate", type=name_list, default=list(PARAM_NAMES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", parents=[common], help="design a mode measurement")
    p.add_argument("--objective", choices=("Hs", "Hq", "Hs0", "min-ratio"), default="Hs")
    p.add_argument("--modes", type=int, default=4)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--export", help="save the optimized modes in measurement text format")
    p.set_defaults(func=cmd_optimize)
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(expand_config(argv))
        return args.func(args, out)
    except UsageError as exc:
        print(f"twopoint: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuadratureError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"twopoint: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"twopoint: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
