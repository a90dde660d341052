"""Command-line front end.

Every subcommand reads either a CSV file or a built-in population name,
writes its CSV (and SVG) artifacts into ``--output-dir``, and exits 0.  On
failure a single JSON line ``{"error": ..., "message": ...}`` goes to
stderr and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from ._parallel import ENV_THREADS
from .bootstrap import BootstrapPlan, m_of_n_bootstrap, plugin_limit_check
from .core import SeededStream
from .diagnostics import KernelWeightSpec, misspecification_test, reweighting_diagnostic
from .estimating_equations import fit_functional
from .exceptions import DataFormatError, InvalidHyperparameter, ModelRobustError
from .inference import sandwich_variance
from .io import (
    REPLICATE_HEADER,
    TRACE_HEADER,
    read_csv_rows,
    read_dataset,
    render_trace_svg,
    replicate_rows,
    trace_rows,
    write_csv,
    write_dataset,
)
from .registry import FUNCTIONALS, make_functional, parameter_names, split_hyperparams
from .simulation import BUILTIN_POPULATIONS, builtin_population, clt_check

__all__ = ["main", "build_parser", "run"]

EXIT_USAGE = 2
EXIT_FAILURE = 1

# stream ids keep the random streams of different commands apart
_STREAM_SAMPLE, _STREAM_BOOT, _STREAM_TRACE, _STREAM_TEST, _STREAM_CLT = range(5)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _int_list(text: str):
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modelrobust", description="Model-robust regression inference.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("input", help="CSV file or built-in population name "
                        f"({', '.join(BUILTIN_POPULATIONS)})")
    common.add_argument("--response", default="y", help="response column of the CSV (default y)")
    common.add_argument("--no-intercept", action="store_true", help="do not add an intercept column")
    common.add_argument("--functional", default="ols", choices=FUNCTIONALS)
    common.add_argument("--param", "-p", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                        help="functional hyperparameter or solver setting (repeatable)")
    common.add_argument("--pop-param", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                        help="population parameter for built-in populations (repeatable)")
    common.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${ENV_THREADS}, else all cores)")
    common.add_argument("--output-dir", "-o", default=".")
    common.add_argument("--N", type=int, default=None,
                        help="sample size drawn when the input is a population (default 500; 200 for plugin-limit)")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    add("fit", "fit the functional; write estimate.csv with sandwich standard errors")
    add("sandwich", "sandwich standard errors, plain and with the HC1 factor")
    s = add("bootstrap", "M-of-N pairs bootstrap; estimate.csv gains se_boot")
    s.add_argument("--M", type=_int_list, default=None, help="resample size(s); several give bootstrap.csv")
    s.add_argument("--B", type=int, default=1000)
    s.add_argument("--max-fail", type=float, default=0.10)
    s = add("diagnose", "reweighting diagnostic trace (trace.csv, trace.svg)")
    s.add_argument("--regressor", required=False, default=None)
    s.add_argument("--B", type=int, default=200)
    s.add_argument("--bandwidth", type=float, default=1.0)
    s.add_argument("--grid", default="deciles", help="'deciles' or comma-separated centers")
    s = add("misspec-test", "z-test for equality of two reweighted fits")
    s.add_argument("--regressor", default=None)
    s.add_argument("--center1", type=float, default=None, help="default: first decile")
    s.add_argument("--center2", type=float, default=None, help="default: ninth decile")
    s.add_argument("--bandwidth", type=float, default=1.0)
    s.add_argument("--B", type=int, default=200)
    add("simulate", "draw a sample from a built-in population into data.csv")
    s = add("clt-check", "Monte Carlo check of the offset CLTs (clt_report.csv)")
    s.add_argument("--R", type=int, default=2000)
    s = add("plugin-limit", "bootstrap variance against the plug-in sandwich (plugin_limit.csv)")
    s.add_argument("--M", type=_int_list, default=[50, 200, 1000, 10000])
    s.add_argument("--B", type=int, default=10000)
    return p


# -- config handling -----------------------------------------------------------------


def _read_config(path):
    out = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read config {path}: {e.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}, line {n}: expected key=value")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest: a for a in sub._actions}
    given = set()
    for tok in argv:
        if tok.startswith("--"):
            given.add(tok[2:].split("=", 1)[0].replace("-", "_"))
        elif tok.startswith("-") and len(tok) == 2:
            for a in sub._actions:
                if tok in a.option_strings:
                    given.add(a.dest)
    hyper, pop = [], []
    for k, v in _read_config(args.config):
        key = k.replace("-", "_")
        if key.startswith("pop."):
            pop.append((k[4:], v))
        elif key in dests and key not in ("param", "pop_param", "config", "input", "help"):
            if key in given:
                continue
            a = dests[key]
            if isinstance(a, argparse._StoreTrueAction):
                setattr(args, key, v.lower() in ("1", "true", "yes", "on"))
            else:
                conv = a.type or str
                try:
                    val = conv(v)
                except (ValueError, argparse.ArgumentTypeError) as e:
                    raise InvalidHyperparameter(f"config {k}: {e}") from None
                if a.choices is not None and val not in a.choices:
                    raise InvalidHyperparameter(f"config {k}: {val!r} not one of {', '.join(map(str, a.choices))}")
                setattr(args, key, val)
        else:
            hyper.append((k, v))
    # command-line key=value pairs override the file
    args.param = hyper + args.param
    args.pop_param = pop + args.pop_param
    return args


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(ENV_THREADS)
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def _pop_value(v: str):
    parts = [t for t in v.split(",")]
    try:
        nums = [float(t) for t in parts]
    except ValueError:
        low = v.lower()
        if low in ("true", "false"):
            return low == "true"
        return v
    return nums[0] if len(nums) == 1 else tuple(nums)


def _population(args):
    params = {k: _pop_value(v) for k, v in args.pop_param}
    if args.no_intercept:
        params["intercept"] = False
    return builtin_population(args.input, params)


def _load(args, default_n=500):
    """Dataset from CSV, or a sample from the named population."""
    if args.input in BUILTIN_POPULATIONS:
        pop = _population(args)
        n = args.N if args.N is not None else default_n
        if n < 1:
            raise InvalidHyperparameter("N must be at least 1")
        return pop.sample(n, SeededStream(args.seed, _STREAM_SAMPLE)), pop
    if args.pop_param:
        raise InvalidHyperparameter("--pop-param needs a built-in population as input")
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"no such file or population: {args.input}")
    return read_dataset(path, args.response, intercept=not args.no_intercept), None


def _functional(args):
    hyper = dict(args.param)
    _, cfg = split_hyperparams(args.functional, hyper)
    return make_functional(args.functional, hyper), cfg


def _outdir(args):
    d = Path(args.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _regressor(args, data):
    if args.regressor is not None:
        if args.regressor in data.column_names:
            return data.column_names.index(args.regressor)
        raise DataFormatError(f"no regressor column named {args.regressor!r}")
    cands = [j for j, n in enumerate(data.column_names) if n != "intercept"]
    if not cands:
        raise DataFormatError("no non-intercept regressor to reweight")
    return cands[0]


# -- commands ------------------------------------------------------------------------


def _estimate_rows(names, theta, **cols):
    rows = []
    for i, n in enumerate(names):
        r = {"parameter": n, "estimate": theta[i]}
        r.update({k: v[i] for k, v in cols.items()})
        rows.append(r)
    return rows


def _cmd_fit(args):
    data, _ = _load(args)
    spec, cfg = _functional(args)
    est = fit_functional(spec, data, cfg)
    rep = sandwich_variance(est)
    names = parameter_names(spec, data.column_names)
    cols = {"se_sandwich": rep.se}
    header = ["parameter", "estimate", "se_sandwich"]
    if args.command == "sandwich":
        cols["se_hc1"] = sandwich_variance(est, hc1=True).se
        header.append("se_hc1")
    write_csv(_outdir(args) / "estimate.csv", header, _estimate_rows(names, est.theta_hat, **cols))


def _cmd_bootstrap(args):
    data, _ = _load(args)
    spec, cfg = _functional(args)
    threads = _threads(args)
    est = fit_functional(spec, data, cfg)
    rep = sandwich_variance(est)
    names = parameter_names(spec, data.column_names)
    grid = args.M or [data.n_cases]
    out = _outdir(args)
    results = []
    for k, M in enumerate(grid):
        plan = BootstrapPlan(M, args.B, SeededStream(args.seed, _STREAM_BOOT).child(k))
        results.append(m_of_n_bootstrap(spec, data, plan, cfg, args.max_fail, threads))
    write_csv(out / "estimate.csv", ["parameter", "estimate", "se_sandwich", "se_boot"],
              _estimate_rows(names, est.theta_hat, se_sandwich=rep.se, se_boot=results[0].se_boot))
    if len(grid) > 1:
        rows = []
        for M, res in zip(grid, results):
            for i, n in enumerate(names):
                rows.append([M, n, res.bv[i, i], res.se_boot[i], res.failures])
        write_csv(out / "bootstrap.csv", ["M", "parameter", "bv", "se_boot", "failures"], rows)


def _grid(args):
    if args.grid == "deciles":
        return "deciles"
    try:
        return np.array([float(t) for t in args.grid.split(",")])
    except ValueError:
        raise InvalidHyperparameter(f"grid must be 'deciles' or numbers, got {args.grid!r}") from None


def _cmd_diagnose(args):
    data, _ = _load(args)
    spec, cfg = _functional(args)
    j = _regressor(args, data)
    tr = reweighting_diagnostic(data, spec, j, _grid(args), args.bandwidth, args.B,
                                SeededStream(args.seed, _STREAM_TRACE), cfg, threads=_threads(args))
    names = parameter_names(spec, data.column_names)
    if tuple(names) != tr.column_names:
        tr = dataclasses.replace(tr, column_names=tuple(names))
    out = _outdir(args)
    trows = trace_rows(tr)
    write_csv(out / "trace.csv", TRACE_HEADER, trows)
    write_csv(out / "trace_replicates.csv", REPLICATE_HEADER, replicate_rows(tr))
    write_csv(out / "estimate.csv", ["parameter", "estimate"], _estimate_rows(names, tr.theta_unweighted))
    svg = render_trace_svg(read_csv_rows(out / "trace.csv"), read_csv_rows(out / "trace_replicates.csv"))
    (out / "trace.svg").write_text(svg)


def _cmd_misspec(args):
    data, _ = _load(args)
    spec, cfg = _functional(args)
    j = _regressor(args, data)
    x = data.regressors[:, j]
    c1 = args.center1 if args.center1 is not None else float(np.quantile(x, 0.1))
    c2 = args.center2 if args.center2 is not None else float(np.quantile(x, 0.9))
    res = misspecification_test(data, spec, KernelWeightSpec(j, c1, args.bandwidth),
                                KernelWeightSpec(j, c2, args.bandwidth), args.B,
                                SeededStream(args.seed, _STREAM_TEST), cfg, _threads(args))
    names = parameter_names(spec, data.column_names)
    rows = [[n, c1, c2, res.theta_w1[i], res.theta_w2[i], res.delta[i], res.se[i], res.z[i]]
            for i, n in enumerate(names)]
    write_csv(_outdir(args) / "misspec_test.csv",
              ["parameter", "center1", "center2", "theta_w1", "theta_w2", "delta", "se", "z"], rows)


def _cmd_simulate(args):
    if args.input not in BUILTIN_POPULATIONS:
        raise InvalidHyperparameter("simulate needs a built-in population name as input")
    data, _ = _load(args)
    write_dataset(_outdir(args) / "data.csv", data, args.response)


def _cmd_clt(args):
    if args.input not in BUILTIN_POPULATIONS:
        raise InvalidHyperparameter("clt-check needs a built-in population name as input")
    pop = _population(args)
    spec, cfg = _functional(args)
    n = args.N if args.N is not None else 500
    rep = clt_check(pop, spec, n, args.R, SeededStream(args.seed, _STREAM_CLT), cfg, _threads(args))
    names = parameter_names(spec, pop.column_names)
    rows = []
    q = rep.theta_P.size
    corr = rep.cross_corr
    for r in rep.records():
        rows.append([r["component"], names[r["row"]], names[r["col"]], r["empirical"], r["theoretical"],
                     r["rel_err"], rep.N, rep.R, rep.failures])
    for a in range(q):
        for b in range(q):
            rows.append(["cross_corr", names[a], names[b], corr[a, b], 0.0, float("nan"), rep.N, rep.R,
                         rep.failures])
    write_csv(_outdir(args) / "clt_report.csv",
              ["quantity", "row", "col", "empirical", "theoretical", "rel_err", "N", "R", "failures"], rows)


def _cmd_plugin(args):
    data, _ = _load(args, default_n=200)
    spec, cfg = _functional(args)
    recs = plugin_limit_check(spec, data, args.M, args.B, SeededStream(args.seed, _STREAM_BOOT), cfg,
                              _threads(args))
    names = parameter_names(spec, data.column_names)
    header = ["M", "rel_gap", "failures"] + [f"bv_{n}" for n in names] + [f"av_{n}" for n in names]
    rows = [[r["M"], r["rel_gap"], r["failures"], *np.diag(r["bv"]), *np.diag(r["av_plugin"])] for r in recs]
    write_csv(_outdir(args) / "plugin_limit.csv", header, rows)


_COMMANDS = {
    "fit": _cmd_fit,
    "sandwich": _cmd_fit,
    "bootstrap": _cmd_bootstrap,
    "diagnose": _cmd_diagnose,
    "misspec-test": _cmd_misspec,
    "simulate": _cmd_simulate,
    "clt-check": _cmd_clt,
    "plugin-limit": _cmd_plugin,
}


def _error_line(kind, message):
    return json.dumps({"error": kind, "message": str(message)}, sort_keys=True)


def run(argv=None) -> int:
    """Run one command; returns the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        _COMMANDS[args.command](args)
    except _UsageError as e:
        print(_error_line("UsageError", e), file=sys.stderr)
        return EXIT_USAGE
    except ModelRobustError as e:
        print(_error_line(type(e).__name__, e), file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, KeyError) as e:
        kind = "IOError" if isinstance(e, OSError) else type(e).__name__
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(_error_line(kind, msg), file=sys.stderr)
        return EXIT_FAILURE
    return 0


def main(argv=None):
    sys.exit(run(argv))
