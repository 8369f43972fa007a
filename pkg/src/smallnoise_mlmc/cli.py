"""Command-line interface.

    smallnoise-mlmc estimate --model gbm --eps 0.1 --delta 0.00032 --method mlmc
    smallnoise-mlmc experiment var-h --eps 2^-6
    smallnoise-mlmc selftest --quick

Every flag can also come from a flat ``key = value`` file given with
``--config``; keys are the flag names without dashes (``sweep-from`` and
``sweep_from`` are both accepted).  Flags given on the command line win.

Exit codes: 0 success, 2 usage or validation error, 3 numerical divergence,
4 failed self-test check.
"""

import argparse
import configparser
import csv
import logging
import math
import re
import sys
from pathlib import Path

from .errors import ConfigurationError, SimulationError
from .estimators import mlmc_estimate, standard_mc_estimate
from .experiments import (
    KINDS,
    ExperimentConfig,
    default_output_dir,
    geometric_sweep,
    run_experiment,
    write_result,
)
from .models import SDE_MODELS, Observable

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4

_POWER = re.compile(r"^\s*([0-9.eE+-]+)\s*(?:\^|\*\*)\s*([0-9.eE+-]+)\s*$")


def parse_number(text):
    """Float from ``0.1``, ``1e-3``, ``2^-6`` or ``2**-6``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _POWER.match(text)
    try:
        value = float(m.group(1)) ** float(m.group(2)) if m else float(text)
    except (ValueError, OverflowError):
        raise argparse.ArgumentTypeError("not a number: %r" % text) from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError("not a finite number: %r" % text)
    return value


def parse_int(text):
    value = parse_number(text)
    if value != int(value):
        raise argparse.ArgumentTypeError("not an integer: %r" % text)
    return int(value)


def parse_list(text):
    return tuple(parse_number(v) for v in str(text).split(",") if v.strip())


# flag name -> (parser, help); all default to None so config values can fill in
OPTIONS = {
    "model": (str, "model name (SDE: %s; networks: dimerization)" % ", ".join(SDE_MODELS)),
    "eps": (parse_number, "noise level epsilon"),
    "delta": (parse_number, "target accuracy delta"),
    "h": (parse_number, "fixed coarse step for eps sweeps"),
    "N": (parse_int, "fixed system size for CTMC h sweeps"),
    "M": (parse_int, "refinement factor between levels (default 2)"),
    "seed": (parse_int, "master seed (default 0)"),
    "threads": (parse_int, "worker threads (default 1)"),
    "out": (str, "output directory (default $SMALLNOISE_MLMC_OUT or ./results)"),
    "samples": (parse_int, "samples per sweep point"),
    "pilot": (parse_int, "pilot samples (per level for mlmc)"),
    "method": (str, "estimator: mlmc or mc"),
    "sweep_from": (parse_number, "first swept value"),
    "sweep_to": (parse_number, "last swept value"),
    "sweep_factor": (parse_number, "ratio between consecutive swept values"),
    "sweep_values": (parse_list, "explicit comma-separated swept values"),
}


def read_config(path):
    """Flat ``key = value`` file into a dict of parsed values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[main]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError("cannot parse config %s: %s" % (path, exc)) from None
    out = {}
    for key, raw in parser["main"].items():
        name = key.strip().replace("-", "_")
        if name == "m":
            name = "M"
        elif name == "n":
            name = "N"
        if name not in OPTIONS:
            raise ConfigurationError("unknown config key %r in %s" % (key, path))
        try:
            out[name] = OPTIONS[name][0](raw.strip())
        except argparse.ArgumentTypeError as exc:
            raise ConfigurationError("config key %r: %s" % (key, exc)) from None
    return out


def _add_options(p, names):
    for name in names:
        conv, help_text = OPTIONS[name]
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, default=None, help=help_text)


def build_parser():
    parser = argparse.ArgumentParser(prog="smallnoise-mlmc", description="Multilevel Monte Carlo for small-noise SDEs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    config = argparse.ArgumentParser(add_help=False)
    config.add_argument("--config", default=None, help="flat key=value file of flag defaults")

    est = sub.add_parser("estimate", parents=[config], help="estimate E[f(D(T))] with f the first coordinate")
    _add_options(est, ["model", "eps", "delta", "M", "seed", "threads", "out", "pilot", "method"])

    exp = sub.add_parser("experiment", parents=[config], help="run a variance or complexity sweep")
    exp.add_argument("kind", choices=KINDS)
    _add_options(exp, ["model", "eps", "delta", "h", "N", "M", "seed", "threads", "out", "samples", "pilot",
                       "sweep_from", "sweep_to", "sweep_factor", "sweep_values"])

    st = sub.add_parser("selftest", help="run the fast invariant checks")
    st.add_argument("--quick", action="store_true", help="subset that finishes in a few seconds")
    st.add_argument("--seed", type=parse_int, default=0)
    st.add_argument("--inject-fault", default="none", help=argparse.SUPPRESS)
    return parser


def _settings(args):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for name in OPTIONS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    values.setdefault("M", 2)
    values.setdefault("seed", 0)
    values.setdefault("threads", 1)
    if values["M"] < 2:
        raise ConfigurationError("--M must be at least 2")
    if values["seed"] < 0:
        raise ConfigurationError("--seed must be non-negative")
    if values["threads"] < 1:
        raise ConfigurationError("--threads must be at least 1")
    return values


def _require(values, *names):
    missing = [n for n in names if values.get(n) is None]
    if missing:
        raise ConfigurationError("missing required parameter(s): %s" % ", ".join("--" + n for n in missing))


def _out_dir(values):
    return Path(values["out"]) if values.get("out") else default_output_dir()


def cmd_estimate(args):
    values = _settings(args)
    values.setdefault("model", "gbm")
    values.setdefault("method", "mlmc")
    _require(values, "eps", "delta")
    if values["model"] not in SDE_MODELS:
        raise ConfigurationError("unknown model %r; choose from %s" % (values["model"], ", ".join(SDE_MODELS)))
    if values["method"] not in ("mlmc", "mc"):
        raise ConfigurationError("--method must be mlmc or mc")
    model = SDE_MODELS[values["model"]](values["eps"])
    run = mlmc_estimate if values["method"] == "mlmc" else standard_mc_estimate
    kwargs = {"threads": values["threads"]}
    if values.get("pilot") is not None:
        kwargs["n_pilot"] = values["pilot"]
    est = run(model, Observable.coordinate(0), values["delta"], values["M"], values["seed"], **kwargs)

    fields = [
        ("method", est.method), ("model", values["model"]), ("eps", model.eps), ("delta", est.delta),
        ("M", values["M"]), ("seed", values["seed"]), ("threads", values["threads"]),
        ("levels", est.max_level), ("value", est.value), ("sd", est.estimator_sd),
        ("rv_cost", est.rv_cost), ("pilot_rv_cost", est.pilot_rv_cost), ("wall_time_s", est.wall_time),
    ]
    for key, val in fields:
        print("%s: %s" % (key, repr(val) if isinstance(val, float) else val))

    out = _out_dir(values)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ("estimate-%s.csv" % est.method)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        rows = [d.as_row() for d in est.levels]
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print("diagnostics: %s" % path)
    return EXIT_OK


def _sweep(values):
    if values.get("sweep_values") is not None:
        if not values["sweep_values"]:
            raise ConfigurationError("empty sweep list")
        return values["sweep_values"]
    ends = [values.get(k) for k in ("sweep_from", "sweep_to", "sweep_factor")]
    if all(v is None for v in ends):
        return None
    if any(v is None for v in ends):
        raise ConfigurationError("--sweep-from, --sweep-to and --sweep-factor go together")
    return geometric_sweep(*ends)


_FIXED_FLAG = {
    "var-h": "eps",
    "var-eps": "h",
    "var-ctmc-h": "N",
    "var-ctmc-eps": "h",
    "complexity-delta": "eps",
    "complexity-eps": "delta",
}


def cmd_experiment(args):
    values = _settings(args)
    kind = args.kind
    config = ExperimentConfig.default(
        kind,
        model=values.get("model"),
        fixed_value=values.get(_FIXED_FLAG[kind]),
        sweep=_sweep(values),
        samples=values.get("samples"),
        base=values["M"],
        seed=values["seed"],
        threads=values["threads"],
        pilot=values.get("pilot"),
    )
    result = run_experiment(config)
    csv_path, json_path = write_result(result, _out_dir(values))
    for name, curve in result.curves.items():
        if curve.fitted:
            slope = "n/a" if curve.fit is None else "%.4f" % curve.fit.slope
            print("%s slope: %s" % (name, slope))
    for row in result.table:
        print("  ".join("%s=%s" % (k, v) for k, v in row.items()))
    for msg in result.warnings:
        print("warning: %s" % msg, file=sys.stderr)
    print("wrote %s and %s" % (csv_path, json_path))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_checks

    results = run_checks(quick=args.quick, seed=args.seed, fault=args.inject_fault)
    for name, ok, detail in results:
        print("%s %s: %s" % ("PASS" if ok else "FAIL", name, detail))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK


COMMANDS = {"estimate": cmd_estimate, "experiment": cmd_experiment, "selftest": cmd_selftest}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
