import itertools
import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from smallnoise_mlmc.errors import ConfigurationError, DivergedPathError, SimulationError
from smallnoise_mlmc.estimators import (
    PilotVariances,
    allocate_levels,
    choose_depth,
    deterministic_value,
    mlmc_estimate,
    pilot_variances,
    standard_mc_estimate,
)
from smallnoise_mlmc.models import SdeModel, example_gbm_small_noise
from smallnoise_mlmc.paths import deterministic_euler

from test_paths import _blowup_diffusion, _blowup_drift, _const1, _zero1


def _depth_oracle(delta, base, horizon):
    # exact rational scan of horizon * base^-L <= delta
    d, t = Fraction(delta), Fraction(horizon)
    L = 0
    while t / base ** L > d:
        L += 1
    return L


@pytest.mark.parametrize("delta,expected", [(0.00032, 12), (2.0 ** -14, 14), (0.3, 2), (0.5, 1)])
def test_choose_depth_examples(delta, expected):
    assert choose_depth(delta, 2, 1.0) == expected == _depth_oracle(delta, 2, 1.0)


@given(st.floats(min_value=1e-9, max_value=0.999), st.integers(2, 5), st.floats(min_value=1.0, max_value=10.0))
def test_choose_depth_matches_exact_scan(delta, base, horizon):
    delta = delta * horizon
    L = _depth_oracle(delta, base, horizon)
    # away from ties the float and rational comparisons must agree
    assume(all(abs(horizon / base ** k - delta) > 1e-12 * delta for k in (L - 1, L)))
    assert choose_depth(delta, base, horizon) == L


def test_choose_depth_tie_counts_as_reached():
    # 9/25 rounds to the same double as 0.36, so two levels suffice
    assert choose_depth(0.36, 5, 9.0) == 2


def test_choose_depth_edges(caplog):
    with caplog.at_level(logging.WARNING):
        assert choose_depth(1.0, 2, 1.0) == 0
    assert "not below the horizon" in caplog.text
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ConfigurationError):
            choose_depth(bad)


def test_allocation_worked_example():
    # delta = 0.1, L = 1, V = (0.01, 0.01): sum_j sqrt(V_j/h_j) = 0.1 + sqrt(0.02)
    plan = allocate_levels(PilotVariances((0.01, 0.01), 200, 2, 1.0), 0.1)
    total = 0.1 + math.sqrt(0.02)
    assert plan.n_real == pytest.approx((100 * 0.1 * total, 100 * math.sqrt(0.005) * total))
    assert plan.ceiling_counts == (3, 2)
    # 0.01/2 + 0.01/2 meets the budget too, one variate cheaper
    assert plan.counts == (2, 2)
    assert plan.predicted_cost == 2 * 1 + 2 * 2
    assert plan.variance_bound() <= 0.1 ** 2
    assert _brute_force_optimum((0.01, 0.01), (1.0, 0.5), 0.1) == (6.0, [(2, 2)])


def test_exact_search_gives_up_at_node_limit():
    from smallnoise_mlmc.estimators import _exact_counts

    v, cost = (0.01, 0.004, 0.001), (1, 2, 4)
    assert _exact_counts(v, cost, 0.01, (5, 3, 2), max_nodes=1) is None
    assert _exact_counts(v, cost, 0.01, (5, 3, 2)) is not None


def test_large_plans_keep_the_ceiling_formula():
    v = (0.0095,) + tuple(1e-4 * 4.0 ** -lvl for lvl in range(1, 13))
    plan = allocate_levels(PilotVariances(v, 200, 2, 1.0), 0.00032)
    assert plan.counts == plan.ceiling_counts
    assert plan.counts == tuple(max(1, math.ceil(x)) for x in plan.n_real)


def test_allocation_degenerate_case():
    plan = allocate_levels(PilotVariances((0.0,) * 5, 10, 2, 1.0), 0.01)
    assert plan.counts == (1,) * 5


variances = st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12)


@given(variances, st.floats(min_value=1e-5, max_value=0.5), st.integers(2, 4))
@settings(max_examples=300)
def test_allocation_meets_variance_budget(v, delta, base):
    plan = allocate_levels(PilotVariances(tuple(v), 2, base, 1.0), delta)
    assert min(plan.counts) >= 1
    assert plan.variance_bound() <= delta ** 2
    assert all(n >= max(1, math.floor(x)) for n, x in zip(plan.ceiling_counts, plan.n_real))
    assert plan.predicted_cost <= sum(n * base ** lvl for lvl, n in enumerate(plan.ceiling_counts))


# subnormal variances lose relative precision under sqrt, so homogeneity is only exact above them
normal_variances = st.lists(st.floats(min_value=0.0, max_value=1.0, allow_subnormal=False), min_size=1, max_size=12)


@given(normal_variances, st.floats(min_value=1e-4, max_value=0.5))
def test_allocation_scale_equivariance(v, delta):
    a = allocate_levels(PilotVariances(tuple(v), 2, 2, 1.0), delta)
    b = allocate_levels(PilotVariances(tuple(2 * x for x in v), 2, 2, 1.0), delta)
    assert np.allclose(b.n_real, [2 * x for x in a.n_real], rtol=1e-12, atol=0)


def _brute_force_optimum(v, steps, delta):
    """All cost-minimising integer allocations (cost n_l / h_l) meeting the budget."""
    budget = delta ** 2
    cost = [1.0 / h for h in steps]
    cont = [math.sqrt(x * h) * sum(math.sqrt(y / g) for y, g in zip(v, steps)) / budget for x, h in zip(v, steps)]
    box = [range(1, 3 * math.ceil(c) + 4) for c in cont[:-1]]
    best, argbest = math.inf, []
    for head in itertools.product(*box):
        left = budget - sum(x / n for x, n in zip(v, head))
        if left <= 0:
            continue
        last = max(1, math.ceil(v[-1] / left))
        while v[-1] / last > left:  # guard the ceiling against rounding
            last += 1
        n = head + (last,)
        c = sum(a * b for a, b in zip(n, cost))
        if c < best - 1e-9:
            best, argbest = c, [n]
        elif abs(c - best) <= 1e-9:
            argbest.append(n)
    return best, argbest


@pytest.mark.parametrize("case", range(40))
def test_allocation_within_one_unit_of_discrete_optimum(case):
    rng = np.random.default_rng(1000 + case)
    L = case % 4
    steps = tuple(2.0 ** -lvl for lvl in range(L + 1))
    while True:
        v = tuple(float(x) for x in 10.0 ** rng.uniform(-5, -1, size=L + 1))
        delta = float(10.0 ** rng.uniform(-2.5, -0.8))
        plan = allocate_levels(PilotVariances(v, 2, 2, 1.0), delta)
        if max(plan.counts) <= 25:
            break
    best, optima = _brute_force_optimum(v, steps, delta)
    assert any(all(abs(a - b) <= 1 for a, b in zip(plan.counts, n)) for n in optima), (plan.counts, optima)
    assert plan.predicted_cost == best and plan.counts in optima


def test_zero_noise_mlmc_equals_deterministic_euler(identity):
    m = example_gbm_small_noise(0.0)
    for delta in (0.25, 2.0 ** -6, 0.001):
        est = mlmc_estimate(m, identity, delta)
        assert est.value == deterministic_euler(m, 2.0 ** -est.max_level)[0]
        assert est.value == deterministic_value(m, identity, delta)
        assert est.estimator_sd == 0.0
        assert all(d.n == 1 for d in est.levels)


def test_zero_noise_standard_mc(identity):
    m = example_gbm_small_noise(0.0)
    est = standard_mc_estimate(m, identity, 2.0 ** -5)
    assert est.levels[0].n == 1 and est.estimator_sd == 0.0
    assert est.value == deterministic_euler(m, 2.0 ** -5)[0]


def test_zero_noise_pilot_variances(identity):
    pv = pilot_variances(example_gbm_small_noise(0.0), identity, 2, 6, 20, 0)
    assert pv.variances == (0.0,) * 7


def test_additive_noise_pilot_variances(identity):
    # dX = eps * 0.37 dW: coupled differences vanish, level 0 is eps^2 0.37^2 T
    m = SdeModel(1, 1, _zero1, _const1, 0.5, (1.0,), 1.0, scalar=True)
    pv = pilot_variances(m, identity, 2, 4, 4000, 3)
    assert pv.variances[1:] == (0.0,) * 4
    exact = 0.25 * 0.37 ** 2
    se = exact * math.sqrt(2 / 3999)
    assert abs(pv.variances[0] - exact) < 4 * se


def test_pilot_variances_decay_with_level(identity):
    pv = pilot_variances(example_gbm_small_noise(0.1), identity, 2, 10, 400, 0)
    v = np.array(pv.variances[3:])
    assert np.all(v[1:] < v[:-1])


def test_pilot_needs_two_samples(identity):
    with pytest.raises(ConfigurationError):
        pilot_variances(example_gbm_small_noise(0.1), identity, 2, 3, 1, 0)


def test_mlmc_bookkeeping(identity):
    m = example_gbm_small_noise(0.1)
    est = mlmc_estimate(m, identity, 0.004, seed=3)
    L = est.max_level
    assert L == 8
    assert est.pilot_rv_cost == 200 * sum(2 ** lvl for lvl in range(L + 1))
    assert est.rv_cost == est.pilot_rv_cost + sum(d.n * 2 ** d.level for d in est.levels)
    assert est.sample_rv_cost == sum(d.rv_cost for d in est.levels)
    sd2 = math.fsum(d.realized_variance / d.n for d in est.levels)
    assert est.estimator_sd ** 2 == pytest.approx(sd2, rel=1e-12)
    assert est.value == pytest.approx(math.fsum(d.mean for d in est.levels), abs=0)
    assert est.levels[0].as_row()["h"] == 1.0


def test_mlmc_is_unbiased_for_the_finest_euler_mean(identity):
    # E[D_h(1)] = (1 - h)^(1/h) because the noise has mean zero
    m = example_gbm_small_noise(0.1)
    est = mlmc_estimate(m, identity, 2.0 ** -7, seed=11)
    h = 2.0 ** -est.max_level
    assert abs(est.value - (1 - h) ** (1 / h)) < 4 * est.estimator_sd


def test_cost_grows_as_delta_shrinks(identity):
    m = example_gbm_small_noise(0.1)
    costs = [mlmc_estimate(m, identity, d, seed=2).rv_cost for d in (0.004, 0.002, 0.001)]
    assert costs[0] < costs[1] < costs[2]


def test_reference_estimate_at_coarsest_delta(identity):
    # delta = 0.00032, eps = 0.1: both SDs about delta, both values near e^-1
    m = example_gbm_small_noise(0.1)
    for run in (mlmc_estimate, standard_mc_estimate):
        est = run(m, identity, 0.00032, seed=0)
        assert abs(est.value - math.exp(-1)) < 4 * est.estimator_sd
        assert est.estimator_sd == pytest.approx(0.00032, rel=0.25)


def test_standard_mc_bookkeeping(identity):
    m = example_gbm_small_noise(0.1)
    est = standard_mc_estimate(m, identity, 0.004, seed=1)
    d = est.levels[0]
    assert d.n == math.ceil(d.pilot_variance / 0.004 ** 2)
    assert est.pilot_rv_cost == 500 * 256
    assert est.rv_cost == (500 + d.n) * 256
    assert est.estimator_sd == pytest.approx(math.sqrt(d.realized_variance / d.n))


def test_non_finite_pilot_variance_is_a_numerical_failure():
    with pytest.raises(SimulationError):
        PilotVariances((1.0, float("inf")), 2, 2, 1.0)
    with pytest.raises(ConfigurationError):
        PilotVariances((1.0, -1.0), 2, 2, 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_level_context(identity):
    m = SdeModel(1, 1, _blowup_drift, _blowup_diffusion, 0.1, (10.0,), 10.0, scalar=True)
    with pytest.raises(DivergedPathError) as info:
        mlmc_estimate(m, identity, 0.5)
    assert info.value.level is not None
