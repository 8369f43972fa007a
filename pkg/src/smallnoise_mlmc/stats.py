"""Streaming moments and log-log slope fits.

Accumulators keep Neumaier-compensated power sums of ``x - shift`` up to the
fourth power, so variances and the standard error of a variance estimate can
be recovered after any number of merges.  Merging is the only way partial
results from different blocks or threads are combined.
"""

from dataclasses import dataclass
from math import comb, sqrt

import numpy as np
from numba import njit

_ORDER = 4


@njit(cache=True, nogil=True)
def _power_sums(values, shift):
    sums = np.zeros(4)
    comps = np.zeros(4)
    for v in values:
        y = v - shift
        term = y
        for p in range(4):
            a = sums[p]
            b = a + term
            if abs(a) >= abs(term):
                comps[p] += (a - b) + term
            else:
                comps[p] += (term - b) + a
            sums[p] = b
            term *= y
    return sums, comps


def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


class MomentAccumulator:
    """Count plus compensated power sums of a stream of reals.

    Parameters
    ----------
    shift : float, optional
        Centre used for the power sums.  When omitted the first value seen
        becomes the shift, which keeps the sums well conditioned for data
        whose mean is large compared to its spread.
    """

    __slots__ = ("count", "shift", "_sums", "_comps")

    def __init__(self, shift=None):
        self.count = 0
        self.shift = shift
        self._sums = np.zeros(_ORDER)
        self._comps = np.zeros(_ORDER)

    @classmethod
    def from_values(cls, values, shift=None):
        acc = cls(shift)
        acc.extend(values)
        return acc

    def push(self, x):
        self.extend(np.array([x], dtype=float))

    def extend(self, values):
        values = np.ascontiguousarray(values, dtype=float).ravel()
        if values.size == 0:
            return self
        if self.shift is None:
            self.shift = float(values[0])
        sums, comps = _power_sums(values, self.shift)
        self._add(sums, comps)
        self.count += values.size
        return self

    def _add(self, sums, comps):
        for p in range(_ORDER):
            s, err = _two_sum(self._sums[p], sums[p])
            self._sums[p] = s
            self._comps[p] += comps[p] + err

    def power_sums(self):
        """Compensated sums of ``(x - shift)**p`` for p = 1..4."""
        return self._sums + self._comps

    def merge(self, other):
        """Return a new accumulator equivalent to both input streams."""
        out = self.copy()
        out.update(other)
        return out

    def update(self, other):
        if other.count == 0:
            return self
        if self.count == 0 and self.shift is None:
            self.shift = other.shift
        if other.shift == self.shift:
            self._add(other._sums, other._comps)
        else:
            self._add(*_recentre(other, self.shift))
        self.count += other.count
        return self

    def copy(self):
        out = MomentAccumulator(self.shift)
        out.count = self.count
        out._sums = self._sums.copy()
        out._comps = self._comps.copy()
        return out

    def _central_sums(self):
        n = self.count
        s1, s2, s3, s4 = self.power_sums()
        m = s1 / n
        c2 = s2 - s1 * m
        c4 = s4 - 4.0 * m * s3 + 6.0 * m * m * s2 - 3.0 * n * m ** 4
        return m, max(c2, 0.0), max(c4, 0.0)

    @property
    def mean(self):
        if self.count == 0:
            raise ValueError("mean of an empty accumulator")
        return float(self.shift + self.power_sums()[0] / self.count)

    @property
    def variance(self):
        return sample_variance(self)

    def mean_stderr(self):
        return sqrt(self.variance / self.count)

    def variance_stderr(self):
        """Standard error of the unbiased variance estimate (fourth-moment based)."""
        n = self.count
        if n < 4:
            return float("nan")
        _, c2, c4 = self._central_sums()
        var = c2 / (n - 1)
        mu4 = c4 / n
        return sqrt(max(mu4 - var * var * (n - 3) / (n - 1), 0.0) / n)

    def __repr__(self):
        return "MomentAccumulator(count=%d, shift=%r)" % (self.count, self.shift)


def _recentre(acc, shift):
    # sum (x-a)^p = sum_k C(p,k) (b-a)^(p-k) sum (x-b)^k, with b the old shift
    old = np.concatenate(([float(acc.count)], acc.power_sums()))
    c = acc.shift - shift
    sums = np.array(
        [sum(comb(p, k) * c ** (p - k) * old[k] for k in range(p + 1)) for p in range(1, _ORDER + 1)]
    )
    return sums, np.zeros(_ORDER)


def sample_variance(acc):
    """Unbiased (n - 1 denominator) sample variance of an accumulator."""
    if acc.count < 2:
        raise ValueError("sample variance needs at least two values, got %d" % acc.count)
    return float(acc._central_sums()[1] / (acc.count - 1))


def merge_all(accumulators):
    """Merge accumulators left to right; the order is part of the result."""
    out = MomentAccumulator()
    for acc in accumulators:
        out.update(acc)
    return out


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual_norm: float
    count: int

    def predict(self, x):
        """Fitted ``y`` at ``x`` (original, not logged, units)."""
        return 2.0 ** (self.slope * np.log2(x) + self.intercept)

    def as_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_norm": self.residual_norm,
            "points": self.count,
        }


def loglog_fit(points):
    """Ordinary least squares of ``log2 y`` on ``log2 x``.

    ``points`` is a sequence of ``(x, y)`` pairs with both coordinates
    strictly positive and at least two distinct abscissae.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (x, y) points")
    if not np.all(np.isfinite(pts)) or np.any(pts <= 0):
        raise ValueError("log-log fit needs finite, strictly positive coordinates")
    lx, ly = np.log2(pts[:, 0]), np.log2(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("log-log fit needs at least two distinct x values")
    design = np.column_stack((lx, np.ones_like(lx)))
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    return SlopeFit(float(coef[0]), float(coef[1]), float(np.linalg.norm(resid)), len(pts))
