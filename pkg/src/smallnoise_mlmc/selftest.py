"""Fast invariant checks behind ``smallnoise-mlmc selftest``.

Each check returns ``(ok, detail)``.  The quick subset avoids the larger
sample counts and finishes in a few seconds once the kernels are compiled.
"""

import math

import numpy as np
from numba import njit

from . import sampling
from .estimators import PilotVariances, allocate_levels, mlmc_estimate
from .models import Observable, SdeModel, example_gbm_small_noise
from .paths import LevelGrid, deterministic_euler, injected_fault


@njit(cache=True)
def _zero_drift(x):
    return 0.0


@njit(cache=True)
def _unit_diffusion(x):
    return 1.7


def additive_noise_model(eps=0.3):
    """dX = eps * 1.7 dW, a model whose coupled pairs must agree exactly."""
    return SdeModel(1, 1, _zero_drift, _unit_diffusion, eps, (0.5,), 1.0, name="additive", scalar=True)


def check_zero_noise_variances(seed, levels=6, n=64):
    model = example_gbm_small_noise(0.0)
    f = Observable.coordinate(0)
    worst = 0.0
    for lvl in range(1, levels + 1):
        s = sampling.sample_coupled(model, f, LevelGrid(2, lvl, 1.0), n, seed, "selftest")
        worst = max(worst, abs(s.values.variance))
    return worst == 0.0, "max coupled variance over levels 1..%d is %r" % (levels, worst)


def check_zero_noise_telescoping(seed, delta=2.0 ** -8):
    model = example_gbm_small_noise(0.0)
    f = Observable.coordinate(0)
    est = mlmc_estimate(model, f, delta, 2, seed, n_pilot=4)
    target = float(deterministic_euler(model, 1.0 / 2 ** est.max_level)[0])
    ok = est.value == target and est.estimator_sd == 0.0
    return ok, "mlmc %r vs deterministic Euler %r, sd %r" % (est.value, target, est.estimator_sd)


def check_additive_noise(seed, n=2000, level=6):
    model = additive_noise_model()
    sampling.warm_up(model)
    gen = np.random.Generator(np.random.SFC64(seed))
    from .paths import coupled_batch

    xf, xc = coupled_batch(model, LevelGrid(2, level, 1.0), gen, n)
    mismatches = int(np.count_nonzero(xf != xc))
    return mismatches == 0, "%d of %d pairs differ" % (mismatches, n)


def check_allocation_constraint(seed, trials=100):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        L = int(rng.integers(0, 8))
        v = tuple(float(x) for x in 10.0 ** rng.uniform(-12, 0, size=L + 1))
        delta = float(10.0 ** rng.uniform(-4, -1))
        plan = allocate_levels(PilotVariances(v, 2, 2, 1.0), delta)
        if plan.variance_bound() > delta ** 2 or min(plan.counts) < 1:
            bad += 1
    return bad == 0, "%d of %d random plans violate sum V/n <= delta^2" % (bad, trials)


def _moment_gap(a, b):
    """Largest standardised gap between the means and variances of two accumulators."""
    se_mean = math.sqrt(a.variance / a.count + b.variance / b.count)
    se_var = math.hypot(a.variance_stderr(), b.variance_stderr())
    return max(abs(a.mean - b.mean) / se_mean, abs(a.variance - b.variance) / se_var)


def check_marginal_parity(seed, n=10_000, level=4, eps=0.5):
    """Fine and coarse marginals of coupled pairs match single-level paths within 4 SE."""
    model = example_gbm_small_noise(eps)
    f = Observable.coordinate(0)
    grid = LevelGrid(2, level, 1.0)
    pair = sampling.sample_coupled(model, f, grid, n, seed, "selftest-pair")
    fine = sampling.sample_single(model, f, grid, n, seed, "selftest-fine")
    coarse = sampling.sample_single(model, f, grid.coarser(), n, seed, "selftest-coarse")
    gaps = (_moment_gap(pair.fine, fine.values), _moment_gap(pair.coarse, coarse.values))
    return max(gaps) < 4.0, "standardised gaps fine %.2f, coarse %.2f (limit 4)" % gaps


def check_gbm_euler_mean(seed, n=10_000, h=2.0 ** -4, eps=0.5):
    """Euler mean of the GBM example equals (1 - h)^(T/h) within 3 SE."""
    model = example_gbm_small_noise(eps)
    s = sampling.sample_single(model, Observable.coordinate(0), LevelGrid(2, 4, 1.0), n, seed, "selftest-mean")
    exact = (1.0 - h) ** (1.0 / h)
    z = abs(s.values.mean - exact) / s.values.mean_stderr()
    return z < 3.0, "mean %.6f vs %.6f, %.2f SE" % (s.values.mean, exact, z)


def check_thread_invariance(seed, n=5000, level=10):
    model = example_gbm_small_noise(0.1)
    f = Observable.coordinate(0)
    grid = LevelGrid(2, level, 1.0)
    runs = [sampling.sample_coupled(model, f, grid, n, seed, "selftest-threads", threads=t) for t in (1, 3)]
    same = all(
        a.count == b.count and a.shift == b.shift and np.array_equal(a.power_sums(), b.power_sums())
        for a, b in zip((runs[0].values, runs[0].fine), (runs[1].values, runs[1].fine))
    )
    return same, "1 vs 3 threads: %s" % ("bit-identical" if same else "different")


def check_noise_identity(seed, n=200, level=6):
    model = example_gbm_small_noise(0.1)
    sampling.sample_coupled(model, Observable.coordinate(0), LevelGrid(2, level, 1.0), n, seed, "selftest",
                            checked=True)
    return True, "coarse increments equal the sums of fine increments"


CHECKS = (
    ("zero-noise-variances", check_zero_noise_variances, True),
    ("zero-noise-telescoping", check_zero_noise_telescoping, True),
    ("additive-noise-pairs", check_additive_noise, True),
    ("allocation-constraint", check_allocation_constraint, True),
    ("noise-identity", check_noise_identity, True),
    ("marginal-parity", check_marginal_parity, True),
    ("gbm-euler-mean", check_gbm_euler_mean, False),
    ("thread-invariance", check_thread_invariance, False),
)


def run_checks(quick=False, seed=0, fault="none"):
    """Run the checks (or the quick subset) and return ``[(name, ok, detail)]``."""
    results = []
    with injected_fault(fault):
        for name, check, in_quick in CHECKS:
            if quick and not in_quick:
                continue
            try:
                ok, detail = check(seed)
            except Exception as exc:  # a crashing check is a failed check
                ok, detail = False, "%s: %s" % (type(exc).__name__, exc)
            results.append((name, ok, detail))
    return results
