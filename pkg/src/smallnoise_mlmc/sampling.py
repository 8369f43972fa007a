"""Block-parallel sampling with deterministic reduction.

A level's ``n`` samples are cut into blocks of :func:`block_size` samples.
Block ``b`` draws from ``RngStream(seed, purpose, level, b)``, is simulated
independently (optionally on a worker thread, the kernels release the GIL)
and reduced to moment accumulators.  Blocks are merged in index order, so
results are bit-identical for any thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import time

import numpy as np

from . import paths
from .rng import RngStream
from .stats import MomentAccumulator, merge_all

BLOCK_RVS = 1 << 20
MAX_BLOCK = 1 << 16


def block_size(rv_per_sample):
    """Samples per keyed block for samples costing ``rv_per_sample`` variates."""
    return max(1, min(MAX_BLOCK, BLOCK_RVS // max(int(rv_per_sample), 1)))


def _blocks(n, size):
    return [(b, min(size, n - b * size)) for b in range((n + size - 1) // size)]


def _run(fn, blocks, threads):
    if threads is None or threads <= 1 or len(blocks) <= 1:
        return [fn(*blk) for blk in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda blk: fn(*blk), blocks))


@dataclass
class SampleSummary:
    """Moments of one level's samples.

    ``values`` holds f(fine) - f(coarse) for coupled levels and f itself for
    single-path runs; ``fine`` and ``coarse`` are the marginal moments.
    """

    values: MomentAccumulator
    fine: MomentAccumulator
    coarse: MomentAccumulator
    n: int
    rv_cost: int
    wall_time: float


def _summarise(parts, n, rv_cost, t0):
    vals = merge_all(p[0] for p in parts)
    fine = merge_all(p[1] for p in parts)
    coarse = merge_all(p[2] for p in parts)
    return SampleSummary(vals, fine, coarse, n, rv_cost, time.perf_counter() - t0)


def sample_single(model, observable, grid, n, seed, purpose, *, threads=1):
    """``n`` independent Euler paths on ``grid``; moments of ``f(terminal)``."""
    rv = model.dim_noise * grid.n_steps
    t0 = time.perf_counter()

    def block(b, count):
        gen = RngStream(seed, purpose, grid.level, b).generator
        fx = observable(paths.euler_batch(model, grid.step, grid.n_steps, gen, count, level=grid.level))
        acc = MomentAccumulator.from_values(fx)
        return acc, acc, MomentAccumulator()

    parts = _run(block, _blocks(n, block_size(rv)), threads)
    return _summarise(parts, n, n * rv, t0)


def sample_coupled(model, observable, grid, n, seed, purpose, *, threads=1, checked=False):
    """``n`` coupled Euler pairs at ``grid.level``; moments of f(fine) - f(coarse)."""
    rv = model.dim_noise * grid.n_steps
    t0 = time.perf_counter()

    def block(b, count):
        gen = RngStream(seed, purpose, grid.level, b).generator
        xf, xc = paths.coupled_batch(model, grid, gen, count, checked=checked)
        ff, fc = observable(xf), observable(xc)
        return (MomentAccumulator.from_values(ff - fc), MomentAccumulator.from_values(ff),
                MomentAccumulator.from_values(fc))

    parts = _run(block, _blocks(n, block_size(rv)), threads)
    return _summarise(parts, n, n * rv, t0)


def sample_level(model, observable, grid, n, seed, purpose, *, threads=1):
    """Level-0 single paths or level >= 1 coupled differences, as MLMC uses them."""
    if grid.level == 0:
        return sample_single(model, observable, grid, n, seed, purpose, threads=threads)
    return sample_coupled(model, observable, grid, n, seed, purpose, threads=threads)


def sample_tau_single(network, observable, grid, n, seed, purpose, *, threads=1):
    rv = network.n_reactions * grid.n_steps
    t0 = time.perf_counter()

    def block(b, count):
        gen = RngStream(seed, purpose, grid.level, b).generator
        fx = observable(paths.tau_leap_batch(network, grid.step, grid.n_steps, gen, count, level=grid.level))
        acc = MomentAccumulator.from_values(fx)
        return acc, acc, MomentAccumulator()

    parts = _run(block, _blocks(n, block_size(rv)), threads)
    return _summarise(parts, n, n * rv, t0)


def sample_tau_coupled(network, observable, grid, n, seed, purpose, *, threads=1):
    rv = 3 * network.n_reactions * grid.n_steps
    t0 = time.perf_counter()

    def block(b, count):
        gen = RngStream(seed, purpose, grid.level, b).generator
        xf, xc = paths.coupled_tau_batch(network, grid, gen, count)
        ff, fc = observable(xf), observable(xc)
        return (MomentAccumulator.from_values(ff - fc), MomentAccumulator.from_values(ff),
                MomentAccumulator.from_values(fc))

    parts = _run(block, _blocks(n, block_size(rv)), threads)
    return _summarise(parts, n, n * rv, t0)


def warm_up(model):
    """Compile the SDE kernels for ``model`` so later timings exclude compilation."""
    gen = np.random.Generator(np.random.SFC64(0))
    grid = paths.LevelGrid(2, 1, model.horizon)
    paths.euler_batch(model, model.horizon, 1, gen, 1)
    paths.euler_batch(model, model.horizon, 1, gen, 1, noise=False)
    paths.coupled_batch(model, grid, gen, 1)


def warm_up_network(network):
    """Compile the tau-leap kernels for ``network``."""
    gen = np.random.Generator(np.random.SFC64(0))
    grid = paths.LevelGrid(2, 1, network.horizon)
    paths.tau_leap_batch(network, network.horizon, 1, gen, 1)
    paths.coupled_tau_batch(network, grid, gen, 1)
