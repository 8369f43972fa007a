import numpy as np
import pytest

from smallnoise_mlmc import sampling
from smallnoise_mlmc.models import Observable, example_dimerization, example_gbm_small_noise
from smallnoise_mlmc.paths import LevelGrid


def test_block_size():
    assert sampling.block_size(1) == sampling.MAX_BLOCK
    assert sampling.block_size(2 ** 10) == 2 ** 10
    assert sampling.block_size(2 ** 30) == 1
    assert sampling._blocks(10, 4) == [(0, 4), (1, 4), (2, 2)]


def _fingerprint(summary):
    return [(a.count, a.shift, a.power_sums().tolist()) for a in (summary.values, summary.fine, summary.coarse)]


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_results_bit_identical_across_thread_counts(threads, identity):
    m = example_gbm_small_noise(0.2)
    grid = LevelGrid(2, 11, 1.0)  # 512 samples per block, so several blocks
    ref = sampling.sample_coupled(m, identity, grid, 3000, 5, "t")
    par = sampling.sample_coupled(m, identity, grid, 3000, 5, "t", threads=threads)
    assert _fingerprint(ref) == _fingerprint(par)


def test_tau_results_bit_identical_across_thread_counts(identity):
    net = example_dimerization(512)
    grid = LevelGrid(2, 9, 0.3)
    a = sampling.sample_tau_coupled(net, identity, grid, 1500, 1, "t")
    b = sampling.sample_tau_coupled(net, identity, grid, 1500, 1, "t", threads=4)
    assert _fingerprint(a) == _fingerprint(b)


def test_prefix_samples_are_stable(identity):
    # sample i always lives in the same block at the same offset
    m = example_gbm_small_noise(0.2)
    grid = LevelGrid(2, 12, 1.0)
    small = sampling.sample_single(m, identity, grid, 256, 2, "t")
    big = sampling.sample_single(m, identity, grid, 300, 2, "t")
    assert small.values.shift == big.values.shift


def test_cost_accounting(identity):
    m = example_gbm_small_noise(0.1)
    assert sampling.sample_coupled(m, identity, LevelGrid(2, 5, 1.0), 7, 0, "t").rv_cost == 7 * 32
    assert sampling.sample_single(m, identity, LevelGrid(2, 3, 1.0), 9, 0, "t").rv_cost == 9 * 8
    net = example_dimerization(64)
    assert sampling.sample_tau_coupled(net, identity, LevelGrid(2, 3, 0.3), 5, 0, "t").rv_cost == 5 * 3 * 2 * 8
    assert sampling.sample_tau_single(net, identity, LevelGrid(2, 3, 0.3), 5, 0, "t").rv_cost == 5 * 2 * 8


def test_sample_level_uses_single_paths_at_level_zero(identity):
    m = example_gbm_small_noise(0.1)
    s0 = sampling.sample_level(m, identity, LevelGrid(2, 0, 1.0), 50, 0, "t")
    assert s0.coarse.count == 0 and s0.values.count == 50
    s1 = sampling.sample_level(m, identity, LevelGrid(2, 1, 1.0), 50, 0, "t")
    assert s1.coarse.count == 50
    diff = s1.fine.mean - s1.coarse.mean
    assert s1.values.mean == pytest.approx(diff, abs=1e-14)


def test_purposes_are_independent(identity):
    m = example_gbm_small_noise(0.3)
    grid = LevelGrid(2, 2, 1.0)
    a = sampling.sample_single(m, identity, grid, 10, 0, "a")
    b = sampling.sample_single(m, identity, grid, 10, 0, "b")
    assert a.values.mean != b.values.mean


def test_non_identity_observable():
    m = example_gbm_small_noise(0.0)
    sq = Observable(lambda xs: xs[:, 0] ** 2, batched=True)
    s = sampling.sample_single(m, sq, LevelGrid(2, 2, 1.0), 4, 0, "t")
    assert s.values.mean == pytest.approx(0.75 ** 8)
    assert np.isclose(s.values.variance, 0.0)
