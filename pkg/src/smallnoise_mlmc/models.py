"""SDE models, reaction networks, observables and the built-in examples.

Coefficient functions use an in-place calling convention so that the path
kernels never allocate per step:

* ``drift(x, out)`` writes the drift vector at state ``x`` (shape ``(d,)``)
  into ``out`` (shape ``(d,)``);
* ``diffusion(x, out)`` writes the ``(d, m)`` diffusion matrix into ``out``;
* for one-dimensional models built with ``scalar=True``, ``drift(x)`` and
  ``diffusion(x)`` instead take and return plain floats, which lets the
  kernels keep the state in a register (about twice as fast);
* ``propensity(x, out, size)`` writes the ``K`` scaled propensities of a
  reaction network at scaled state ``x`` for system size ``size``.

Functions compiled with :func:`numba.njit` run inside the compiled kernels.
Anything else still works, through the interpreted versions of the same
kernels, only much slower.  :meth:`SdeModel.from_functions` adapts ordinary
value-returning callables.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math
from typing import Callable, Optional

import numpy as np
from numba import njit
from numba.extending import is_jitted

from .errors import ConfigurationError


def _frozen_vector(values, dim, what):
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (dim,):
        raise ConfigurationError("%s must have %d components, got %r" % (what, dim, arr.shape))
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("%s must be finite" % what)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SdeModel:
    """Small-noise SDE  dD = mu(D) dt + eps * sigma(D) dW  on [0, horizon]."""

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    eps: float
    init: np.ndarray
    horizon: float
    name: str = "custom"
    scalar: bool = False

    def __post_init__(self):
        if self.scalar and (self.dim_state, self.dim_noise) != (1, 1):
            raise ConfigurationError("scalar coefficients need dim_state = dim_noise = 1")
        if int(self.dim_state) < 1 or int(self.dim_noise) < 1:
            raise ConfigurationError("dim_state and dim_noise must be positive")
        object.__setattr__(self, "dim_state", int(self.dim_state))
        object.__setattr__(self, "dim_noise", int(self.dim_noise))
        eps = float(self.eps)
        # eps = 0 is the deterministic limit, used by the degenerate checks
        if not 0.0 <= eps <= 1.0:
            raise ConfigurationError("eps must lie in [0, 1], got %r" % self.eps)
        object.__setattr__(self, "eps", eps)
        horizon = float(self.horizon)
        if not (horizon > 0 and math.isfinite(horizon)):
            raise ConfigurationError("horizon must be a positive real, got %r" % self.horizon)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "init", _frozen_vector(self.init, self.dim_state, "init"))

    @classmethod
    def from_functions(cls, drift, diffusion, *, dim_state, dim_noise, eps, init, horizon, name="custom"):
        """Build a model from value-returning ``drift(x)`` and ``diffusion(x)``."""
        d, m = int(dim_state), int(dim_noise)

        def drift_into(x, out):
            out[:] = np.reshape(drift(x), (d,))

        def diffusion_into(x, out):
            out[:, :] = np.reshape(diffusion(x), (d, m))

        if is_jitted(drift) and is_jitted(diffusion):
            drift_into, diffusion_into = njit(drift_into), njit(diffusion_into)
        return cls(d, m, drift_into, diffusion_into, eps, init, horizon, name)

    @property
    def jitted(self):
        return is_jitted(self.drift) and is_jitted(self.diffusion)

    def drift_at(self, x):
        x = np.asarray(x, dtype=float).reshape(self.dim_state)
        if self.scalar:
            return np.array([self.drift(float(x[0]))])
        out = np.empty(self.dim_state)
        self.drift(x, out)
        return out

    def diffusion_at(self, x):
        x = np.asarray(x, dtype=float).reshape(self.dim_state)
        if self.scalar:
            return np.array([[self.diffusion(float(x[0]))]])
        out = np.empty((self.dim_state, self.dim_noise))
        self.diffusion(x, out)
        return out

    def with_eps(self, eps):
        return replace(self, eps=eps)


@dataclass(frozen=True, eq=False)
class Observable:
    """Scalar functional ``f`` of the terminal state.

    With ``batched=True``, ``f`` maps an ``(n, d)`` array of states to ``n``
    values in one call; otherwise it is applied state by state.
    """

    f: Callable
    label: str = "f"
    batched: bool = False

    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            return float(self._eval(states[None, :])[0])
        return self._eval(states)

    def _eval(self, states):
        if self.batched:
            return np.asarray(self.f(states), dtype=float).reshape(len(states))
        return np.fromiter((self.f(x) for x in states), dtype=float, count=len(states))

    @classmethod
    def coordinate(cls, index=0):
        return cls(lambda xs: xs[:, index], label="x%d" % (index + 1), batched=True)


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    """Classically scaled reaction network  X^N = counts / N.

    ``stoich`` is a ``(K, d)`` integer matrix whose rows are the reaction
    vectors (applied as ``stoich[k] / N``).  ``propensity`` gives the scaled
    intensities; reaction ``k`` fires at rate ``N * max(a_k(x), 0)``.
    ``limit_propensity`` is the intensity used by the diffusion limit and
    defaults to ``propensity``.  ``limit_coefficients`` optionally supplies
    closed-form in-place ``(drift, diffusion)`` for that limit; otherwise
    they are assembled from ``stoich`` and ``limit_propensity``.
    """

    stoich: np.ndarray
    propensity: Callable
    system_size: int
    init: np.ndarray
    horizon: float
    limit_propensity: Optional[Callable] = None
    name: str = "custom"
    check_lattice: bool = field(default=True, repr=False)
    limit_coefficients: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        stoich = np.array(self.stoich, dtype=np.int64)
        if stoich.ndim != 2 or min(stoich.shape) < 1:
            raise ConfigurationError("stoich must be a non-empty (K, d) integer matrix")
        stoich.setflags(write=False)
        object.__setattr__(self, "stoich", stoich)
        size = int(self.system_size)
        if size != self.system_size or size < 1:
            raise ConfigurationError("system size N must be a positive integer, got %r" % self.system_size)
        object.__setattr__(self, "system_size", size)
        horizon = float(self.horizon)
        if not (horizon > 0 and math.isfinite(horizon)):
            raise ConfigurationError("horizon must be a positive real")
        object.__setattr__(self, "horizon", horizon)
        init = _frozen_vector(self.init, stoich.shape[1], "init")
        if np.any(init < 0):
            raise ConfigurationError("initial state must be non-negative")
        if self.check_lattice:
            counts = init * size
            if np.any(np.abs(counts - np.round(counts)) > 1e-9 * np.maximum(1.0, counts)):
                raise ConfigurationError("initial state %r is not on the 1/N lattice for N=%d" % (tuple(init), size))
        object.__setattr__(self, "init", init)
        if self.limit_propensity is None:
            object.__setattr__(self, "limit_propensity", self.propensity)

    @property
    def dim_state(self):
        return self.stoich.shape[1]

    @property
    def n_reactions(self):
        return self.stoich.shape[0]

    @property
    def eps(self):
        return self.system_size ** -0.5

    @property
    def jitted(self):
        return is_jitted(self.propensity)

    def raw_propensities(self, x):
        out = np.empty(self.n_reactions)
        self.propensity(np.asarray(x, dtype=float), out, float(self.system_size))
        return out

    def propensities(self, x):
        """Scaled propensities at ``x``, clipped at zero as used by simulation."""
        return np.maximum(self.raw_propensities(x), 0.0)

    def with_size(self, size, init=None):
        return replace(self, system_size=size, init=self.init if init is None else init)


# --- built-in examples -------------------------------------------------------


@njit(cache=True)
def _gbm_drift(x):
    return -x


@njit(cache=True)
def _gbm_diffusion(x):
    return x


def example_gbm_small_noise(eps):
    """dD = -D dt + eps D dW,  D(0) = 1,  T = 1;  E[D(1)] = exp(-1)."""
    eps = float(eps)
    if not 0.0 <= eps < 1.0:
        raise ConfigurationError("eps must lie in [0, 1), got %r" % eps)
    return SdeModel(1, 1, _gbm_drift, _gbm_diffusion, eps, (1.0,), 1.0, name="gbm", scalar=True)


DIMERIZATION_STOICH = ((-2, 1), (2, -1))
DIMERIZATION_INIT = (0.2, 0.2)
DIMERIZATION_HORIZON = 0.3


@njit(cache=True)
def _dimer_propensity(x, out, size):
    out[0] = x[0] * (x[0] - 1.0 / size)
    out[1] = x[1]


@njit(cache=True)
def _dimer_limit_propensity(x, out, size):
    out[0] = x[0] * x[0]
    out[1] = x[1]


@njit(cache=True)
def _dimer_limit_drift(x, out):
    a0 = x[0] * x[0]
    out[0] = -2.0 * a0 + 2.0 * x[1]
    out[1] = a0 - x[1]


@njit(cache=True)
def _dimer_limit_diffusion(x, out):
    r0 = math.sqrt(max(x[0] * x[0], 0.0))
    r1 = math.sqrt(max(x[1], 0.0))
    out[0, 0] = -2.0 * r0
    out[1, 0] = r0
    out[0, 1] = 2.0 * r1
    out[1, 1] = -r1


def example_dimerization(N, init=None):
    """2A <-> B under the classical scaling, run to T = 0.3.

    Without ``init`` the network starts from (0.2, 0.2), which is the
    reference starting point even when it is off the 1/N lattice.  An
    explicit ``init`` must lie on the lattice.
    """
    if int(N) != N or N < 1:
        raise ConfigurationError("N must be a positive integer, got %r" % (N,))
    return ReactionNetwork(
        DIMERIZATION_STOICH,
        _dimer_propensity,
        int(N),
        DIMERIZATION_INIT if init is None else init,
        DIMERIZATION_HORIZON,
        limit_propensity=_dimer_limit_propensity,
        name="dimerization",
        check_lattice=init is not None,
        limit_coefficients=(_dimer_limit_drift, _dimer_limit_diffusion),
    )


@lru_cache(maxsize=None)
def _diffusion_coefficients(limit_propensity, stoich_rows):
    # generic but allocates per call; closed-form coefficients are much faster
    stoich = np.array(stoich_rows, dtype=np.float64)
    n_react, dim = stoich.shape

    def drift(x, out):
        a = np.empty(n_react)
        limit_propensity(x, a, 1.0)
        for j in range(dim):
            acc = 0.0
            for k in range(n_react):
                acc += stoich[k, j] * a[k]
            out[j] = acc

    def diffusion(x, out):
        a = np.empty(n_react)
        limit_propensity(x, a, 1.0)
        for k in range(n_react):
            r = math.sqrt(max(a[k], 0.0))
            for j in range(dim):
                out[j, k] = stoich[k, j] * r

    if is_jitted(limit_propensity):
        return njit(drift), njit(diffusion)
    return drift, diffusion


def diffusion_approx_model(network):
    """Diffusion approximation of ``network`` as a small-noise SDE.

    Drift is ``sum_k stoich_k * a_k(x)`` and column ``k`` of the diffusion
    matrix is ``stoich_k * sqrt(max(a_k(x), 0))``, with ``a`` the network's
    limit propensities; the noise scale is ``N ** -0.5``.
    """
    if network.limit_coefficients is not None:
        drift, diffusion = network.limit_coefficients
    else:
        rows = tuple(tuple(int(v) for v in row) for row in network.stoich)
        drift, diffusion = _diffusion_coefficients(network.limit_propensity, rows)
    return SdeModel(
        network.dim_state,
        network.n_reactions,
        drift,
        diffusion,
        network.eps,
        network.init,
        network.horizon,
        name="%s-diffusion" % network.name,
    )


SDE_MODELS = {"gbm": example_gbm_small_noise}
NETWORKS = {"dimerization": example_dimerization}
