"""Euler-Maruyama and tau-leap path simulation.

The kernels below advance a batch of independent samples one after another,
drawing every variate from the generator they are handed.  A sample consumes
its variates contiguously, in time order, so a block of samples drawn from
one keyed stream is reproducible regardless of how blocks are scheduled.

Coupled SDE pairs follow the usual multilevel construction: each coarse step
of length ``M * h`` is covered by ``M`` fine steps driven by standard normal
vectors ``W^0 .. W^{M-1}``, and the coarse step is driven by their sum, with
drift and diffusion frozen at the coarse-step start:

    fine:    x <- x + mu(x) h + eps sqrt(h) sigma(x) W^k
    coarse:  y <- y + mu(y) M h + eps sqrt(h) sigma(y) (W^0 + ... + W^{M-1})

The coarse noise term is added one fine increment at a time, in the same
floating-point order as the fine path, so with constant sigma and zero
drift the two terminals agree bit for bit.

Coupled tau-leap pairs split each reaction channel into a shared Poisson
stream (rate ``min(lf, lc)``) and two residual streams, one per path.
"""

from contextlib import contextmanager
from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from .errors import ConfigurationError, DivergedPathError, NoiseIdentityError

_OK, _DIVERGED, _NOISE_MISMATCH = 0, 1, 2

FAULT_NONE = 0
FAULT_COARSE_NOISE_SCALE = 1
FAULTS = {"none": FAULT_NONE, "coarse-noise-scale": FAULT_COARSE_NOISE_SCALE}
_fault = FAULT_NONE


@contextmanager
def injected_fault(name):
    """Test-only mutation of the coupled kernel.

    ``"coarse-noise-scale"`` scales the summed coarse noise by
    ``sqrt(M h)`` instead of ``sqrt(h)``, which breaks the coarse marginal.
    """
    global _fault
    previous, _fault = _fault, FAULTS[name]
    try:
        yield
    finally:
        _fault = previous


@dataclass(frozen=True)
class LevelGrid:
    """Uniform grid with step ``h = horizon * base**-level``."""

    base: int
    level: int
    horizon: float

    def __post_init__(self):
        if int(self.base) != self.base or self.base < 2:
            raise ConfigurationError("refinement base M must be an integer >= 2, got %r" % (self.base,))
        if int(self.level) != self.level or self.level < 0:
            raise ConfigurationError("level must be a non-negative integer, got %r" % (self.level,))
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigurationError("horizon must be a positive real")
        object.__setattr__(self, "base", int(self.base))
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def step(self):
        return self.horizon / self.base ** self.level

    @property
    def n_steps(self):
        return self.base ** self.level

    def coarser(self):
        if self.level == 0:
            raise ConfigurationError("level 0 has no coarser grid")
        return LevelGrid(self.base, self.level - 1, self.horizon)

    def times(self):
        return self.horizon * np.arange(self.n_steps + 1) / self.n_steps


def level_for_step(horizon, h, base=2):
    """Level of the coarsest grid whose step does not exceed ``h``."""
    if not h > 0:
        raise ConfigurationError("step must be positive")
    level = max(0, math.ceil(math.log(horizon / h, base) - 1e-9))
    while horizon / base ** level > h * (1 + 1e-12):
        level += 1
    return level


def steps_for(horizon, h):
    """Number of steps of size ``h`` covering ``[0, horizon]``; must be integral."""
    if not (h > 0 and math.isfinite(h)):
        raise ConfigurationError("step h must be a positive real, got %r" % (h,))
    n = round(horizon / h)
    if n < 1 or not math.isclose(n * h, horizon, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigurationError("horizon %r is not an integer multiple of h=%r" % (horizon, h))
    return n


@dataclass(frozen=True)
class CoupledSample:
    fine_terminal: np.ndarray
    coarse_terminal: np.ndarray
    rv_count: int


# --- kernels ----------------------------------------------------------------


@njit(nogil=True)
def _euler_kernel(drift, diffusion, g, x0, h, eps, n_steps, m, with_noise, out):
    n, d = out.shape
    mu = np.empty(d)
    sig = np.empty((d, m))
    z = np.zeros(m)
    x = np.empty(d)
    scale = eps * math.sqrt(h)
    for i in range(n):
        x[:] = x0
        for s in range(n_steps):
            drift(x, mu)
            diffusion(x, sig)
            if with_noise:
                for q in range(m):
                    z[q] = g.standard_normal()
            bad = False
            for j in range(d):
                acc = 0.0
                for q in range(m):
                    acc += sig[j, q] * z[q]
                x[j] = x[j] + mu[j] * h + scale * acc
                if not math.isfinite(x[j]):
                    bad = True
            if bad:
                return _DIVERGED, i, s + 1
        out[i, :] = x
    return _OK, -1, -1


@njit(nogil=True)
def _euler_kernel_1d(drift, diffusion, g, x0, h, eps, n_steps, with_noise, out):
    scale = eps * math.sqrt(h)
    for i in range(out.shape[0]):
        x = x0
        for s in range(n_steps):
            z = g.standard_normal() if with_noise else 0.0
            x = x + drift(x) * h + scale * (diffusion(x) * z)
            if not math.isfinite(x):
                return _DIVERGED, i, s + 1
        out[i, 0] = x
    return _OK, -1, -1


@njit(nogil=True)
def _coupled_kernel_1d(drift, diffusion, g, x0, h_fine, h_coarse, eps, n_coarse, base, checked, fault, out_f, out_c):
    z = np.empty(base)
    scale = eps * math.sqrt(h_fine)
    coarse_scale = scale
    if fault == 1:
        coarse_scale = eps * math.sqrt(h_coarse)
    for i in range(out_f.shape[0]):
        xf = x0
        xc = x0
        for c in range(n_coarse):
            sig_c = diffusion(xc)
            xc = xc + drift(xc) * h_coarse
            zsum = 0.0
            for k in range(base):
                zk = g.standard_normal()
                z[k] = zk
                zsum += zk
                xf = xf + drift(xf) * h_fine + scale * (diffusion(xf) * zk)
                xc = xc + coarse_scale * (sig_c * zk)
                if not math.isfinite(xf):
                    return _DIVERGED, i, c * base + k + 1
            if checked:
                total = 0.0
                for k in range(base):
                    total += z[k]
                if total != zsum:
                    return _NOISE_MISMATCH, i, (c + 1) * base
            if not math.isfinite(xc):
                return _DIVERGED, i, (c + 1) * base
        out_f[i, 0] = xf
        out_c[i, 0] = xc
    return _OK, -1, -1


@njit(nogil=True)
def _coupled_kernel(drift, diffusion, g, x0, h_fine, h_coarse, eps, n_coarse, base, m, checked, fault, out_f, out_c):
    n, d = out_f.shape
    mu = np.empty(d)
    sig = np.empty((d, m))
    mu_c = np.empty(d)
    sig_c = np.empty((d, m))
    z = np.empty((base, m))
    zsum = np.empty(m)
    xf = np.empty(d)
    xc = np.empty(d)
    scale = eps * math.sqrt(h_fine)
    coarse_scale = scale
    if fault == 1:
        coarse_scale = eps * math.sqrt(h_coarse)
    for i in range(n):
        xf[:] = x0
        xc[:] = x0
        for c in range(n_coarse):
            drift(xc, mu_c)
            diffusion(xc, sig_c)
            for j in range(d):
                xc[j] = xc[j] + mu_c[j] * h_coarse
            zsum[:] = 0.0
            for k in range(base):
                for q in range(m):
                    z[k, q] = g.standard_normal()
                    zsum[q] += z[k, q]
                drift(xf, mu)
                diffusion(xf, sig)
                bad = False
                for j in range(d):
                    acc = 0.0
                    acc_c = 0.0
                    for q in range(m):
                        acc += sig[j, q] * z[k, q]
                        acc_c += sig_c[j, q] * z[k, q]
                    xf[j] = xf[j] + mu[j] * h_fine + scale * acc
                    xc[j] = xc[j] + coarse_scale * acc_c
                    if not math.isfinite(xf[j]):
                        bad = True
                if bad:
                    return _DIVERGED, i, c * base + k + 1
            if checked:
                for q in range(m):
                    total = 0.0
                    for k in range(base):
                        total += z[k, q]
                    if total != zsum[q]:
                        return _NOISE_MISMATCH, i, (c + 1) * base
            for j in range(d):
                if not math.isfinite(xc[j]):
                    return _DIVERGED, i, (c + 1) * base
        out_f[i, :] = xf
        out_c[i, :] = xc
    return _OK, -1, -1


@njit(nogil=True)
def _tau_kernel(propensity, g, stoich, x0, size, h, n_steps, out):
    n, d = out.shape
    n_react = stoich.shape[0]
    a = np.empty(n_react)
    counts = np.empty(n_react)
    x = np.empty(d)
    for i in range(n):
        x[:] = x0
        for s in range(n_steps):
            propensity(x, a, size)
            for k in range(n_react):
                lam = size * max(a[k], 0.0) * h
                if not math.isfinite(lam):
                    return _DIVERGED, i, s + 1
                counts[k] = g.poisson(lam)
            for k in range(n_react):
                if counts[k] != 0.0:
                    for j in range(d):
                        x[j] += counts[k] * stoich[k, j] / size
        out[i, :] = x
    return _OK, -1, -1


@njit(nogil=True)
def _coupled_tau_kernel(propensity, g, stoich, x0, size, h_fine, n_coarse, base, out_f, out_c):
    n, d = out_f.shape
    n_react = stoich.shape[0]
    af = np.empty(n_react)
    ac = np.empty(n_react)
    jf = np.empty(n_react)
    jc = np.empty(n_react)
    xf = np.empty(d)
    xc = np.empty(d)
    pending = np.empty(d)
    for i in range(n):
        xf[:] = x0
        xc[:] = x0
        for c in range(n_coarse):
            propensity(xc, ac, size)
            pending[:] = 0.0
            for k in range(base):
                propensity(xf, af, size)
                for r in range(n_react):
                    lf = size * max(af[r], 0.0)
                    lc = size * max(ac[r], 0.0)
                    if not (math.isfinite(lf) and math.isfinite(lc)):
                        return _DIVERGED, i, c * base + k + 1
                    shared = min(lf, lc)
                    p1 = g.poisson(shared * h_fine)
                    p2 = g.poisson((lf - shared) * h_fine)
                    p3 = g.poisson((lc - shared) * h_fine)
                    jf[r] = p1 + p2
                    jc[r] = p1 + p3
                for r in range(n_react):
                    for j in range(d):
                        if jf[r] != 0.0:
                            xf[j] += jf[r] * stoich[r, j] / size
                        if jc[r] != 0.0:
                            pending[j] += jc[r] * stoich[r, j] / size
            for j in range(d):
                xc[j] += pending[j]
        out_f[i, :] = xf
        out_c[i, :] = xc
    return _OK, -1, -1


def _pick(kernel, *funcs):
    # interpreted fallback runs the same code, so draws and results agree
    from numba.extending import is_jitted

    return kernel if all(is_jitted(f) for f in funcs) else kernel.py_func


def _raise_for(status, sample, step, level=None):
    if status == _DIVERGED:
        raise DivergedPathError(
            "non-finite state at step %d of sample %d" % (step, sample), step=step, sample=sample, level=level
        )
    if status == _NOISE_MISMATCH:
        raise NoiseIdentityError("coarse increment differs from the sum of fine increments at step %d" % step)


# --- batch entry points (used by the samplers) ---------------------------------


def euler_batch(model, h, n_steps, generator, n, *, noise=True, level=None):
    """Terminal states of ``n`` independent Euler-Maruyama paths, shape ``(n, d)``."""
    out = np.empty((n, model.dim_state))
    if generator is None:
        if noise:
            raise ConfigurationError("a generator is required for noisy paths")
        generator = np.random.Generator(np.random.SFC64(0))  # typed placeholder, never drawn from
    if model.scalar:
        kernel = _pick(_euler_kernel_1d, model.drift, model.diffusion)
        status, sample, step = kernel(
            model.drift, model.diffusion, generator, float(model.init[0]), float(h), model.eps,
            int(n_steps), bool(noise), out,
        )
    else:
        kernel = _pick(_euler_kernel, model.drift, model.diffusion)
        status, sample, step = kernel(
            model.drift, model.diffusion, generator, model.init, float(h), model.eps, int(n_steps),
            model.dim_noise, bool(noise), out,
        )
    _raise_for(status, sample, step, level)
    return out


def coupled_batch(model, grid, generator, n, *, checked=False):
    """Fine and coarse terminal states of ``n`` coupled pairs at ``grid.level >= 1``."""
    if grid.level < 1:
        raise ConfigurationError("coupled pairs need level >= 1")
    coarse = grid.coarser()
    out_f = np.empty((n, model.dim_state))
    out_c = np.empty((n, model.dim_state))
    if model.scalar:
        kernel = _pick(_coupled_kernel_1d, model.drift, model.diffusion)
        status, sample, step = kernel(
            model.drift, model.diffusion, generator, float(model.init[0]), grid.step, coarse.step,
            model.eps, coarse.n_steps, grid.base, bool(checked), _fault, out_f, out_c,
        )
    else:
        kernel = _pick(_coupled_kernel, model.drift, model.diffusion)
        status, sample, step = kernel(
            model.drift, model.diffusion, generator, model.init, grid.step, coarse.step, model.eps,
            coarse.n_steps, grid.base, model.dim_noise, bool(checked), _fault, out_f, out_c,
        )
    _raise_for(status, sample, step, grid.level)
    return out_f, out_c


def tau_leap_batch(network, h, n_steps, generator, n, *, level=None):
    out = np.empty((n, network.dim_state))
    kernel = _pick(_tau_kernel, network.propensity)
    status, sample, step = kernel(
        network.propensity, generator, network.stoich.astype(np.float64), network.init,
        float(network.system_size), float(h), int(n_steps), out,
    )
    _raise_for(status, sample, step, level)
    return out


def coupled_tau_batch(network, grid, generator, n):
    if grid.level < 1:
        raise ConfigurationError("coupled pairs need level >= 1")
    out_f = np.empty((n, network.dim_state))
    out_c = np.empty((n, network.dim_state))
    kernel = _pick(_coupled_tau_kernel, network.propensity)
    status, sample, step = kernel(
        network.propensity, generator, network.stoich.astype(np.float64), network.init,
        float(network.system_size), grid.step, grid.coarser().n_steps, grid.base, out_f, out_c,
    )
    _raise_for(status, sample, step, grid.level)
    return out_f, out_c


# --- single-path operations ----------------------------------------------------


def euler_path(model, h, stream):
    """One Euler-Maruyama path; returns ``(terminal, rv_count)``."""
    n_steps = steps_for(model.horizon, h)
    terminal = euler_batch(model, h, n_steps, stream.generator, 1)[0]
    return terminal, model.dim_noise * n_steps


def deterministic_euler(model, h):
    """Terminal value of the explicit Euler scheme for the noise-free ODE."""
    n_steps = steps_for(model.horizon, h)
    return euler_batch(model, h, n_steps, None, 1, noise=False)[0]


def coupled_euler_pair(model, grid, stream, *, checked=False):
    if grid.horizon != model.horizon:
        raise ConfigurationError("grid horizon does not match the model")
    fine, coarse = coupled_batch(model, grid, stream.generator, 1, checked=checked)
    return CoupledSample(fine[0], coarse[0], model.dim_noise * grid.n_steps)


def tau_leap_path(network, h, stream):
    """One tau-leap path; returns ``(terminal, rv_count)``."""
    n_steps = steps_for(network.horizon, h)
    terminal = tau_leap_batch(network, h, n_steps, stream.generator, 1)[0]
    return terminal, network.n_reactions * n_steps


def coupled_tau_leap_pair(network, grid, stream):
    if grid.horizon != network.horizon:
        raise ConfigurationError("grid horizon does not match the network")
    fine, coarse = coupled_tau_batch(network, grid, stream.generator, 1)
    return CoupledSample(fine[0], coarse[0], 3 * network.n_reactions * grid.n_steps)
