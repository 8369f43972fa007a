"""Sweeps behind the variance-scaling and complexity studies.

Six experiment kinds are supported:

``var-h`` / ``var-eps``
    Var(f(fine) - f(coarse)) of coupled Euler pairs for an SDE model, with
    the coarse step ``h`` or the noise level ``eps`` swept.
``var-ctmc-h`` / ``var-ctmc-eps``
    The same quantity for coupled tau-leap pairs of a reaction network and
    for coupled Euler pairs of its diffusion approximation.  The eps sweep
    runs over the system size ``N`` and is fitted against ``N ** -0.5``.
``complexity-delta`` / ``complexity-eps``
    Multilevel and standard Monte Carlo estimates at each point, with cost
    (random variates) and wall time fitted on log-log axes.

Results go to one CSV file per experiment plus a ``.fit.json`` record.
"""

from dataclasses import asdict, dataclass, field
import csv
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Optional

from . import sampling
from .errors import ConfigurationError
from .estimators import mlmc_estimate, standard_mc_estimate
from .models import NETWORKS, SDE_MODELS, Observable, diffusion_approx_model
from .paths import LevelGrid, level_for_step
from .stats import loglog_fit

log = logging.getLogger(__name__)

CSV_HEADER = (
    "experiment", "model", "fixed_name", "fixed_value", "swept_name", "swept_value",
    "metric", "value", "stderr", "rv_cost", "wall_time_s", "samples", "seed", "threads",
)

# relative standard error of a variance estimate above which a point is flagged
NOISY_POINT_RSE = 0.5

SWEPT_NAME = {
    "var-h": "h",
    "var-eps": "eps",
    "var-ctmc-h": "h",
    "var-ctmc-eps": "N",
    "complexity-delta": "delta",
    "complexity-eps": "eps",
}
FIXED_NAME = {
    "var-h": "eps",
    "var-eps": "h",
    "var-ctmc-h": "N",
    "var-ctmc-eps": "h",
    "complexity-delta": "eps",
    "complexity-eps": "delta",
}
KINDS = tuple(SWEPT_NAME)


def geometric_sweep(start, stop, factor):
    """``start, start*factor, ...`` up to and including ``stop`` (to rounding)."""
    if not (start > 0 and stop > 0 and factor > 0) or factor == 1:
        raise ConfigurationError("sweep needs positive endpoints and a positive factor != 1")
    if (stop - start) * (factor - 1) < 0:
        raise ConfigurationError("factor %r moves away from the sweep end %r" % (factor, stop))
    n = int(math.floor(math.log(stop / start) / math.log(factor) + 1e-9))
    return tuple(start * factor ** k for k in range(n + 1))


def _dyadic(exponents):
    return tuple(2.0 ** e for e in exponents)


# Defaults reproduce the reference studies; the CTMC sample count is our choice.
DEFAULTS = {
    "var-h": dict(model="gbm", fixed_value=2.0 ** -6, sweep=_dyadic(range(-13, -19, -1)), samples=2000),
    "var-eps": dict(model="gbm", fixed_value=2.0 ** -19, sweep=_dyadic(range(-5, -10, -1)), samples=1000),
    "var-ctmc-h": dict(model="dimerization", fixed_value=2 ** 20, sweep=_dyadic(range(-10, -14, -1)), samples=3000),
    "var-ctmc-eps": dict(model="dimerization", fixed_value=2.0 ** -12,
                         sweep=tuple(2 ** k for k in range(6, 12)), samples=3000),
    "complexity-delta": dict(model="gbm", fixed_value=0.1,
                             sweep=(0.00032, 0.00016, 0.00008, 0.00004), samples=None),
    "complexity-eps": dict(model="gbm", fixed_value=2.0 ** -14,
                           sweep=(0.07, 0.06, 0.05, 0.04, 0.03), samples=None),
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: str
    fixed_value: float
    sweep: tuple
    samples: Optional[int] = None
    base: int = 2
    seed: int = 0
    threads: int = 1
    pilot: Optional[int] = None
    timing_budget: float = 2.0  # seconds; see complexity_sweep

    def __post_init__(self):
        if self.kind not in SWEPT_NAME:
            raise ConfigurationError("unknown experiment kind %r; choose from %s" % (self.kind, ", ".join(KINDS)))
        sweep = tuple(float(v) for v in self.sweep)
        if not sweep:
            raise ConfigurationError("the sweep is empty")
        diffs = [b - a for a, b in zip(sweep, sweep[1:])]
        if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ConfigurationError("swept values must be strictly monotone")
        if any(not (v > 0 and math.isfinite(v)) for v in sweep):
            raise ConfigurationError("swept values must be positive and finite")
        object.__setattr__(self, "sweep", sweep)
        if self.kind.startswith("var-"):
            if self.samples is None or self.samples < 2:
                raise ConfigurationError("variance sweeps need samples >= 2")
        known = NETWORKS if self.kind.startswith("var-ctmc") else SDE_MODELS
        if self.model not in known:
            raise ConfigurationError("model %r does not fit experiment %r; choose from %s"
                                     % (self.model, self.kind, ", ".join(known)))
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @classmethod
    def default(cls, kind, **overrides):
        if kind not in DEFAULTS:
            raise ConfigurationError("unknown experiment kind %r" % kind)
        params = dict(DEFAULTS[kind])
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **params)

    @property
    def fixed_name(self):
        return FIXED_NAME[self.kind]

    @property
    def swept_name(self):
        return SWEPT_NAME[self.kind]


@dataclass(frozen=True)
class Point:
    swept_value: float
    x: float  # abscissa used in the log-log fit
    value: float
    stderr: Optional[float]
    rv_cost: int
    wall_time: float
    samples: int


@dataclass
class Curve:
    metric: str
    points: list = field(default_factory=list)
    fit: object = None
    dropped: list = field(default_factory=list)
    fitted: bool = True


@dataclass
class ScalingResult:
    config: ExperimentConfig
    curves: dict
    warnings: list
    table: list = field(default_factory=list)

    def slope(self, metric):
        return self.curves[metric].fit.slope

    def metadata(self):
        meta = asdict(self.config)
        meta["sweep"] = list(self.config.sweep)
        meta["fixed_name"] = self.config.fixed_name
        meta["swept_name"] = self.config.swept_name
        return meta


def _fit_curve(curve, warnings, label):
    pts = []
    for p in curve.points:
        if p.value > 0:
            pts.append((p.x, p.value))
        else:
            curve.dropped.append(p.swept_value)
            msg = "%s: %s at swept value %r is %r; dropped from the fit" % (label, curve.metric, p.swept_value, p.value)
            log.warning(msg)
            warnings.append(msg)
    if len(pts) >= 2 and len({x for x, _ in pts}) >= 2:
        curve.fit = loglog_fit(pts)
    else:
        msg = "%s: %s has fewer than two usable points; no slope" % (label, curve.metric)
        log.warning(msg)
        warnings.append(msg)


def _variance_point(swept, x, summary, warnings, label):
    acc = summary.values
    var = acc.variance
    se = acc.variance_stderr()
    if var > 0 and se / var > NOISY_POINT_RSE:
        warnings.append("%s: relative standard error %.2f at %r exceeds %.0f%%"
                        % (label, se / var, swept, 100 * NOISY_POINT_RSE))
    return Point(swept, x, var, se, summary.rv_cost, summary.wall_time, summary.n)


def variance_scaling_sde(config):
    """Coupled-difference variance of an SDE model over an h or eps sweep."""
    if config.kind not in ("var-h", "var-eps"):
        raise ConfigurationError("variance_scaling_sde runs var-h or var-eps, not %r" % config.kind)
    factory = SDE_MODELS[config.model]
    f = Observable.coordinate(0)
    curve = Curve("var_diff")
    warnings = []
    for swept in config.sweep:
        if config.kind == "var-h":
            eps, h = config.fixed_value, swept
        else:
            eps, h = swept, config.fixed_value
        model = factory(eps)
        grid = LevelGrid(config.base, level_for_step(model.horizon, h, config.base) + 1, model.horizon)
        sampling.warm_up(model)
        s = sampling.sample_coupled(model, f, grid, config.samples, config.seed, config.kind, threads=config.threads)
        x = grid.coarser().step if config.kind == "var-h" else eps
        curve.points.append(_variance_point(swept, x, s, warnings, config.kind))
    _fit_curve(curve, warnings, config.kind)
    return ScalingResult(config, {curve.metric: curve}, warnings)


def variance_scaling_ctmc(config):
    """Tau-leap and diffusion-approximation coupled variances for a reaction network.

    The nominal step ``h`` maps to the coarsest grid ``T * M**-k`` not
    exceeding it, so the fitted abscissa is that grid's coarse step.
    """
    if config.kind not in ("var-ctmc-h", "var-ctmc-eps"):
        raise ConfigurationError("variance_scaling_ctmc runs var-ctmc-h or var-ctmc-eps, not %r" % config.kind)
    factory = NETWORKS[config.model]
    f = Observable.coordinate(0)
    tau, diff = Curve("var_diff_tau"), Curve("var_diff_diffusion")
    warnings = []
    for swept in config.sweep:
        if config.kind == "var-ctmc-h":
            size, h = config.fixed_value, swept
        else:
            size, h = swept, config.fixed_value
        if int(size) != size:
            raise ConfigurationError("system size must be an integer, got %r" % size)
        network = factory(int(size))
        sde = diffusion_approx_model(network)
        grid = LevelGrid(config.base, level_for_step(network.horizon, h, config.base) + 1, network.horizon)
        x = grid.coarser().step if config.kind == "var-ctmc-h" else network.eps
        sampling.warm_up_network(network)
        sampling.warm_up(sde)
        st = sampling.sample_tau_coupled(network, f, grid, config.samples, config.seed, config.kind + "/tau",
                                         threads=config.threads)
        tau.points.append(_variance_point(swept, x, st, warnings, config.kind + " tau-leap"))
        sd = sampling.sample_coupled(sde, f, grid, config.samples, config.seed, config.kind + "/diffusion",
                                     threads=config.threads)
        diff.points.append(_variance_point(swept, x, sd, warnings, config.kind + " diffusion"))
    for curve in (tau, diff):
        _fit_curve(curve, warnings, config.kind)
    return ScalingResult(config, {tau.metric: tau, diff.metric: diff}, warnings)


MAX_TIMING_REPEATS = 10


def complexity_sweep(config):
    """Both estimators at every point of a delta or eps sweep.

    Fitted curves use the sampling phase only (cost and time after the
    pilot), which is what the allocation optimises; totals including the
    pilot are recorded as unfitted curves.

    Runs shorter than ``config.timing_budget`` seconds are repeated with the
    same seed (identical results) and the fastest wall times kept.  Repeats
    go round-robin over the sweep points, so slow drift in machine speed
    hits every point alike instead of tilting the fitted runtime slope.
    """
    if config.kind not in ("complexity-delta", "complexity-eps"):
        raise ConfigurationError("complexity_sweep runs complexity-delta or complexity-eps, not %r" % config.kind)
    factory = SDE_MODELS[config.model]
    f = Observable.coordinate(0)
    runners = (("mlmc", mlmc_estimate), ("mc", standard_mc_estimate))
    kwargs = {"threads": config.threads}
    if config.pilot is not None:
        kwargs["n_pilot"] = config.pilot

    jobs = []  # [swept, method, call, estimate, best wall, best sample wall, time spent]
    for swept in config.sweep:
        if config.kind == "complexity-delta":
            eps, delta = config.fixed_value, swept
        else:
            eps, delta = swept, config.fixed_value
        model = factory(eps)
        for method, run in runners:
            call = (run, (model, f, delta, config.base, config.seed))
            est = run(*call[1], **kwargs)
            jobs.append([swept, method, call, est, est.wall_time, est.sample_wall_time, est.wall_time])
    for _ in range(MAX_TIMING_REPEATS - 1):
        active = [j for j in jobs if j[6] < config.timing_budget]
        if not active:
            break
        for j in active:
            run, args = j[2]
            again = run(*args, **kwargs)
            j[4] = min(j[4], again.wall_time)
            j[5] = min(j[5], again.sample_wall_time)
            j[6] += again.wall_time

    curves = {}
    for method, _ in runners:
        for metric, fitted in (("value", False), ("rv_cost", True), ("wall_time", True),
                               ("rv_cost_total", False), ("wall_time_total", False)):
            name = "%s_%s" % (method, metric)
            curves[name] = Curve(name, fitted=fitted)
    warnings, rows = [], {}
    for swept, method, _, est, wall, sample_wall, _ in jobs:
        total = dict(rv_cost=est.rv_cost, wall_time=wall, samples=sum(d.n for d in est.levels))
        c = curves
        c[method + "_value"].points.append(Point(swept, swept, est.value, est.estimator_sd, **total))
        c[method + "_rv_cost"].points.append(Point(swept, swept, est.sample_rv_cost, None, **total))
        c[method + "_wall_time"].points.append(Point(swept, swept, sample_wall, None, **total))
        c[method + "_rv_cost_total"].points.append(Point(swept, swept, est.rv_cost, None, **total))
        c[method + "_wall_time_total"].points.append(Point(swept, swept, wall, None, **total))
        row = rows.setdefault(swept, {config.swept_name: swept})
        row[method + "_value"] = est.value
        row[method + "_sd"] = est.estimator_sd
    table = list(rows.values())
    for curve in curves.values():
        if curve.fitted:
            _fit_curve(curve, warnings, config.kind)
    return ScalingResult(config, curves, warnings, table)


def run_experiment(config):
    if config.kind.startswith("var-ctmc"):
        return variance_scaling_ctmc(config)
    if config.kind.startswith("var-"):
        return variance_scaling_sde(config)
    return complexity_sweep(config)


# --- output --------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # shortest round-trip decimal
    return str(v)


def csv_rows(result):
    cfg = result.config
    for curve in result.curves.values():
        for p in curve.points:
            yield (
                cfg.kind, cfg.model, cfg.fixed_name, float(cfg.fixed_value), cfg.swept_name, float(p.swept_value),
                curve.metric, float(p.value), None if p.stderr is None else float(p.stderr),
                int(p.rv_cost), float(p.wall_time), int(p.samples), cfg.seed, cfg.threads,
            )


def to_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in csv_rows(result):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def fit_record(result):
    fits = {}
    for name, curve in result.curves.items():
        if not curve.fitted:
            continue
        entry = curve.fit.as_dict() if curve.fit is not None else {"slope": None}
        entry["dropped"] = list(curve.dropped)
        fits[name] = entry
    return {
        "experiment": result.config.kind,
        "config": result.metadata(),
        "fits": fits,
        "warnings": list(result.warnings),
        "table": list(result.table),
    }


def write_result(result, out_dir):
    """Write ``<kind>.csv`` and ``<kind>.fit.json`` into ``out_dir``; return both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.config.kind
    csv_path = out / (stem + ".csv")
    json_path = out / (stem + ".fit.json")
    csv_path.write_text(to_csv(result), encoding="utf-8")
    json_path.write_text(json.dumps(fit_record(result), indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path


def default_output_dir():
    return Path(os.environ.get("SMALLNOISE_MLMC_OUT", "results"))
