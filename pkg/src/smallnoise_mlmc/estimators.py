"""Multilevel and standard Monte Carlo estimators of E[f(D(T))].

Both estimators target an accuracy ``delta``: the finest step satisfies
``h_L <= delta`` (Euler is weakly first order) and sample counts are chosen
so that the estimator variance is at most ``delta**2``.  Cost is counted in
random variates, ``dim_noise`` per Euler step.
"""

from dataclasses import dataclass, field
import logging
import math
import time
from typing import Optional

from . import sampling
from .errors import ConfigurationError, DivergedPathError, SimulationError
from .paths import LevelGrid, deterministic_euler
from .stats import sample_variance

log = logging.getLogger(__name__)

DEFAULT_PILOT_MLMC = 200
DEFAULT_PILOT_MC = 500

# Plans predicted to cost at most this many variates are re-solved exactly
# over the integers; above it the ceiling overhead is at most one sample per
# level and the exact search grows too fast to be worth it.
EXACT_SEARCH_MAX_COST = 1000
EXACT_SEARCH_MAX_NODES = 5000


@dataclass(frozen=True)
class PilotVariances:
    """Per-level variance estimates: plain Var f at level 0, coupled differences above."""

    variances: tuple
    n_pilot: int
    base: int
    horizon: float
    rv_cost: int = 0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.variances):
            raise SimulationError("non-finite pilot variance %r" % (self.variances,))
        if any(v < 0 for v in self.variances):
            raise ConfigurationError("pilot variances must be non-negative")

    @property
    def max_level(self):
        return len(self.variances) - 1


@dataclass(frozen=True)
class MlmcPlan:
    max_level: int
    base: int
    delta: float
    steps: tuple
    variances: tuple
    n_real: tuple  # allocation before rounding up
    counts: tuple
    ceiling_counts: tuple  # the rounded-up formula, before any exact search
    cost_per_sample: tuple
    predicted_cost: int

    def variance_bound(self):
        """Estimator variance predicted by the pilot, sum_l V_l / n_l."""
        return math.fsum(v / n for v, n in zip(self.variances, self.counts))


@dataclass(frozen=True)
class LevelDiagnostic:
    level: int
    step: float
    pilot_variance: float
    n: int
    mean: float
    realized_variance: Optional[float]
    rv_cost: int
    wall_time: float

    def as_row(self):
        return {
            "level": self.level,
            "h": self.step,
            "pilot_variance": self.pilot_variance,
            "n": self.n,
            "mean": self.mean,
            "realized_variance": self.realized_variance,
            "rv_cost": self.rv_cost,
            "wall_time_s": self.wall_time,
        }


@dataclass(frozen=True)
class Estimate:
    method: str
    value: float
    estimator_sd: float
    rv_cost: int
    wall_time: float
    delta: float
    max_level: int
    pilot_rv_cost: int
    sample_wall_time: float
    levels: tuple = field(default_factory=tuple)

    @property
    def sample_rv_cost(self):
        """Variates drawn after the pilot phase, the cost the allocation optimises."""
        return self.rv_cost - self.pilot_rv_cost


def choose_depth(delta, base=2, horizon=1.0):
    """Smallest L with ``horizon * base**-L <= delta``."""
    if not (delta > 0 and math.isfinite(delta)):
        raise ConfigurationError("delta must be a positive real, got %r" % (delta,))
    if delta >= horizon:
        log.warning("delta=%g is not below the horizon %g; using a single level", delta, horizon)
        return 0
    level = 0
    while horizon / base ** level > delta:
        level += 1
    return level


def pilot_variances(model, observable, base, max_level, n_pilot=DEFAULT_PILOT_MLMC, seed=0, *, threads=1):
    """Estimate Var f(D_{h_0}) and Var(f(D_{h_l}) - f(D_{h_{l-1}})), l = 1..L."""
    if n_pilot < 2:
        raise ConfigurationError("need at least two pilot samples per level")
    variances, cost = [], 0
    for level in range(max_level + 1):
        grid = LevelGrid(base, level, model.horizon)
        try:
            s = sampling.sample_level(model, observable, grid, n_pilot, seed, "pilot", threads=threads)
        except DivergedPathError as exc:
            raise exc.with_level(level)
        variances.append(sample_variance(s.values))
        cost += s.rv_cost
    return PilotVariances(tuple(variances), n_pilot, base, model.horizon, cost)


def _relaxed_cost(v, cost, budget):
    """Continuous minimum of sum cost*n subject to sum v/n <= budget and n >= 1."""
    if budget <= 0:
        return math.inf
    pinned = set()
    while True:
        free = [i for i in range(len(v)) if i not in pinned]
        left = budget - math.fsum(v[i] for i in pinned)
        fixed_cost = math.fsum(cost[i] for i in pinned)
        if not free:
            return fixed_cost if left >= 0 else math.inf
        if left <= 0:
            return math.inf
        s = math.fsum(math.sqrt(v[i] * cost[i]) for i in free)
        below = {i for i in free if math.sqrt(v[i] / cost[i]) * s < left}
        if not below:
            return s * s / left + fixed_cost
        pinned |= below


def _exact_counts(v, cost, budget, start, max_nodes=EXACT_SEARCH_MAX_NODES):
    """Cheapest integer allocation meeting the budget, by branch and bound.

    Branches on the most expensive levels first; the cheapest level is then
    fixed by a ceiling.  ``start`` is the incumbent.  Returns None when the
    node limit is hit.
    """
    order = sorted(range(len(v)), key=lambda i: (-cost[i], i))
    vv = [v[i] for i in order]
    cc = [cost[i] for i in order]
    last = len(vv) - 1
    best = [[start[i] for i in order], sum(n * c for n, c in zip(start, cost))]
    nodes = 0

    def total(counts):
        return math.fsum(x / n for x, n in zip(vv, counts))

    def search(k, prefix, spent, left):
        nonlocal nodes
        nodes += 1
        if nodes > max_nodes:
            raise _SearchLimit
        if k == last:
            if vv[k] > 0 and left <= 0:
                return
            n = max(1, math.ceil(vv[k] / left)) if vv[k] > 0 else 1
            while total(prefix + [n]) > budget:
                n += 1
            if spent + n * cc[k] < best[1]:
                best[0], best[1] = prefix + [n], spent + n * cc[k]
            return
        rest_v, rest_c = vv[k + 1:], cc[k + 1:]
        floor_rest = _relaxed_cost(rest_v, rest_c, left)
        n = 1
        # the rest can never cost less than floor_rest, whatever n is
        while spent + n * cc[k] + floor_rest < best[1]:
            remaining = left - vv[k] / n
            if spent + n * cc[k] + _relaxed_cost(rest_v, rest_c, remaining) < best[1]:
                search(k + 1, prefix + [n], spent + n * cc[k], remaining)
            n += 1

    try:
        search(0, [], 0, budget)
    except _SearchLimit:
        return None
    out = [0] * len(v)
    for pos, i in enumerate(order):
        out[i] = best[0][pos]
    return tuple(out)


class _SearchLimit(Exception):
    pass


def allocate_levels(pv, delta, dim_noise=1, *, exact_below=EXACT_SEARCH_MAX_COST):
    """Samples per level minimising cost subject to sum_l V_l / n_l <= delta**2.

    Starts from the Lagrange-multiplier optimum
    ``n_l = ceil(delta**-2 sqrt(V_l h_l) sum_j sqrt(V_j / h_j))`` floored at
    one, with per-sample cost ``dim_noise * base**l`` variates.  When that
    plan costs at most ``exact_below`` variates, rounding matters and the
    counts are replaced by the exact integer optimum (``ceiling_counts``
    keeps the formula's answer).
    """
    if not delta > 0:
        raise ConfigurationError("delta must be positive")
    L, base = pv.max_level, pv.base
    steps = tuple(pv.horizon / base ** lvl for lvl in range(L + 1))
    cost = tuple(dim_noise * base ** lvl for lvl in range(L + 1))
    v = pv.variances
    budget = delta ** 2
    total = math.fsum(math.sqrt(v[j] / steps[j]) for j in range(L + 1))
    n_real = tuple(delta ** -2 * math.sqrt(v[lvl] * steps[lvl]) * total for lvl in range(L + 1))
    counts = [max(1, math.ceil(x)) for x in n_real]
    # the ceilings only tighten the constraint, up to rounding in n_real
    while math.fsum(vl / n for vl, n in zip(v, counts)) > budget:
        worst = max(range(L + 1), key=lambda lvl: v[lvl] / counts[lvl])
        counts[worst] += 1
    ceiling = tuple(counts)
    final = ceiling
    if sum(n * c for n, c in zip(ceiling, cost)) <= exact_below:
        exact = _exact_counts(v, cost, budget, ceiling)
        if exact is not None:
            final = exact
        else:
            log.debug("exact allocation search gave up; keeping the ceiling formula")
    return MlmcPlan(
        L, base, delta, steps, v, n_real, final, ceiling, cost,
        sum(n * c for n, c in zip(final, cost)),
    )


def _realized(summary, fallback):
    if summary.n >= 2:
        return sample_variance(summary.values)
    return fallback


def mlmc_estimate(model, observable, delta, base=2, seed=0, *, n_pilot=DEFAULT_PILOT_MLMC, threads=1):
    """Multilevel Monte Carlo estimate with pilot-based level allocation.

    Pilot samples only size the levels; the estimate uses fresh samples.
    Levels with a single sample fall back to the pilot variance in the
    reported standard deviation.
    """
    sampling.warm_up(model)
    t0 = time.perf_counter()
    L = choose_depth(delta, base, model.horizon)
    pv = pilot_variances(model, observable, base, L, n_pilot, seed, threads=threads)
    plan = allocate_levels(pv, delta, model.dim_noise)
    levels, means, var_terms = [], [], []
    for lvl, n in enumerate(plan.counts):
        grid = LevelGrid(base, lvl, model.horizon)
        try:
            s = sampling.sample_level(model, observable, grid, n, seed, "mlmc", threads=threads)
        except DivergedPathError as exc:
            exc.with_level(lvl).diagnostics = list(levels)
            raise
        rv = _realized(s, pv.variances[lvl])
        levels.append(LevelDiagnostic(lvl, grid.step, pv.variances[lvl], n, s.values.mean, rv, s.rv_cost, s.wall_time))
        means.append(s.values.mean)
        var_terms.append(rv / n)
    wall = time.perf_counter() - t0
    return Estimate(
        "mlmc", math.fsum(means), math.sqrt(math.fsum(var_terms)),
        pv.rv_cost + sum(d.rv_cost for d in levels), wall, delta, L, pv.rv_cost,
        sum(d.wall_time for d in levels), tuple(levels),
    )


def standard_mc_estimate(model, observable, delta, base=2, seed=0, *, n_pilot=DEFAULT_PILOT_MC, threads=1):
    """Single-level Euler Monte Carlo at ``h = T * base**-L`` with ``N = ceil(Var / delta**2)`` paths."""
    if n_pilot < 2:
        raise ConfigurationError("need at least two pilot samples")
    sampling.warm_up(model)
    t0 = time.perf_counter()
    L = choose_depth(delta, base, model.horizon)
    grid = LevelGrid(base, L, model.horizon)
    try:
        pilot = sampling.sample_single(model, observable, grid, n_pilot, seed, "mc-pilot", threads=threads)
        pilot_var = sample_variance(pilot.values)
        n = max(1, math.ceil(pilot_var / delta ** 2))
        s = sampling.sample_single(model, observable, grid, n, seed, "mc", threads=threads)
    except DivergedPathError as exc:
        raise exc.with_level(L)
    rv = _realized(s, pilot_var)
    wall = time.perf_counter() - t0
    diag = LevelDiagnostic(L, grid.step, pilot_var, n, s.values.mean, rv, s.rv_cost, s.wall_time)
    return Estimate(
        "mc", s.values.mean, math.sqrt(rv / n), pilot.rv_cost + s.rv_cost, wall, delta, L,
        pilot.rv_cost, s.wall_time, (diag,),
    )


def deterministic_value(model, observable, delta, base=2):
    """f of the noise-free Euler terminal at the finest MLMC step, for comparisons."""
    L = choose_depth(delta, base, model.horizon)
    return observable(deterministic_euler(model, model.horizon / base ** L))
