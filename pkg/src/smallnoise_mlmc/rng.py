"""Keyed random streams.

Every stream is identified by ``(seed, purpose, level, index)`` and maps to
an independent :class:`numpy.random.Generator` through
:class:`numpy.random.SeedSequence` spawn keys.  The same key always yields
the same draw sequence, whatever order streams are created or consumed in.
"""

import zlib

import numpy as np

#: bit generator behind every stream
BIT_GENERATOR = np.random.SFC64


def purpose_code(purpose):
    """Stable 32-bit code for a purpose tag such as ``"pilot"``."""
    return zlib.crc32(purpose.encode("utf-8"))


class RngStream:
    """Reproducible stream of random variates for one unit of work.

    In the batch samplers ``index`` counts blocks of samples (see
    :func:`smallnoise_mlmc.sampling.block_size`); sample ``i`` of a level
    always lives in block ``i // block_size`` at the same offset.
    """

    __slots__ = ("key", "generator")

    def __init__(self, seed, purpose, level=0, index=0):
        seed, level, index = int(seed), int(level), int(index)
        if seed < 0 or level < 0 or index < 0:
            raise ValueError("seed, level and index must be non-negative")
        self.key = (seed, str(purpose), level, index)
        ss = np.random.SeedSequence(seed, spawn_key=(purpose_code(purpose), level, index))
        self.generator = np.random.Generator(BIT_GENERATOR(ss))

    def __repr__(self):
        return "RngStream(seed=%d, purpose=%r, level=%d, index=%d)" % self.key
