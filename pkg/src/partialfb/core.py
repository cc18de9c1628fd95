"""Shared vector arithmetic, seeded random streams and error types.

Channel vectors are plain ``numpy`` complex128 arrays whose last axis is the
transmit-antenna axis.  Every function here broadcasts over leading axes so the
same code serves a single vector and a batch of Monte-Carlo trials.
"""

from __future__ import annotations

import numpy as np


class PartialFeedbackError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(PartialFeedbackError, ValueError):
    pass


class ParameterError(PartialFeedbackError, ValueError):
    pass


class ProtocolError(PartialFeedbackError, RuntimeError):
    pass


def as_vector(values, n: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite complex128 array (last axis = antennas)."""
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise ParameterError("channel vector contains NaN or Inf")
    if n is not None and arr.shape[-1] != n:
        raise DimensionError(f"expected {n} entries, got {arr.shape[-1]}")
    return arr


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def inner_product(a, b):
    """Return ``a^H b`` (conjugate on the first argument) along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    _check_same_length(a, b)
    return np.sum(np.conj(a) * b, axis=-1)


def norm_sq(a):
    """Squared Euclidean norm along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    return np.sum(a.real**2 + a.imag**2, axis=-1)


class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id, substream)``.

    Streams with different keys are statistically independent (they are spawned
    children of one ``SeedSequence``).  The wrapped ``numpy`` generator is
    exposed as :attr:`gen`; the stream is single-owner mutable state.
    """

    def __init__(self, seed: int, stream_id: int = 0, substream: int = 0):
        if seed < 0 or stream_id < 0 or substream < 0:
            raise ParameterError("seed and stream ids must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.substream = int(substream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, self.substream))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, substream={self.substream})"


def generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def draw_complex_gaussian(rng, n, variance: float = 1.0) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric complex Gaussian samples.

    Real and imaginary parts are independent with variance ``variance / 2``, so
    ``E|h|^2 == variance``.  ``n`` may be an int or a shape tuple.
    """
    if not variance > 0 or not np.isfinite(variance):
        raise ParameterError(f"variance must be positive, got {variance}")
    shape = (n,) if np.isscalar(n) else tuple(n)
    if any(int(s) < 1 for s in shape):
        raise ParameterError(f"sample count must be >= 1, got {n}")
    g = generator(rng)
    scale = np.sqrt(variance / 2.0)
    out = np.empty(shape, dtype=np.complex128)
    out.real = g.standard_normal(shape)
    out.imag = g.standard_normal(shape)
    out *= scale
    return out
