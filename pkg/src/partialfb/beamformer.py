"""BPSK / Gray-QPSK modems, MRT-style transmit beamforming and coherent detection.

Transmit convention: with beamformer ``w = h_ref / ||h_ref||`` the antenna
vector is ``t = s * w`` and the receiver sees ``d = h^H t + v = g s + v`` with
composite gain ``g = h^H w``.  For ``h_ref = h`` the gain is the real number
``||h||`` (optimal scheme); any other reference gives a complex ``g`` with
``|g| <= ||h||``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ParameterError, PartialFeedbackError, as_vector, inner_product, norm_sq


class DegenerateBeamformerError(PartialFeedbackError, ValueError):
    pass


class Scheme(str, enum.Enum):
    BPSK = "bpsk"
    QPSK = "qpsk"


@dataclass(frozen=True)
class Modulation:
    scheme: Scheme = Scheme.BPSK
    symbol_power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (np.isfinite(self.symbol_power) and self.symbol_power > 0):
            raise ParameterError(f"symbol power must be > 0, got {self.symbol_power}")

    @property
    def bits_per_symbol(self) -> int:
        return 1 if self.scheme is Scheme.BPSK else 2

    def constellation(self) -> tuple[np.ndarray, np.ndarray]:
        """All points and their bit labels, in label order."""
        k = self.bits_per_symbol
        labels = np.array([[(m >> (k - 1 - j)) & 1 for j in range(k)] for m in range(2**k)])
        return modulate(labels.ravel(), self), labels


@dataclass(frozen=True)
class Beamformer:
    weights: np.ndarray

    def transmit(self, s):
        """Antenna vector(s) for symbol(s) ``s``; shape ``s.shape + (n_T,)``."""
        return np.multiply.outer(np.asarray(s, dtype=np.complex128), self.weights)


def modulate(bits, mod: Modulation) -> np.ndarray:
    """Map bits to symbols of power ``mod.symbol_power``.

    BPSK maps 0 -> +sqrt(P), 1 -> -sqrt(P).  QPSK consumes bit pairs
    ``(b0, b1)`` in Gray order 00, 01, 11, 10 -> pi/4, 3pi/4, 5pi/4, 7pi/4,
    i.e. ``b1`` flips the real sign and ``b0`` the imaginary sign.
    """
    bits = np.asarray(bits)
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ParameterError("bits must be 0 or 1")
    amp = np.sqrt(mod.symbol_power)
    if mod.scheme is Scheme.BPSK:
        return amp * (1.0 - 2.0 * bits).astype(np.complex128)
    if bits.shape[-1] % 2:
        raise ParameterError("QPSK needs an even number of bits")
    pairs = bits.reshape(bits.shape[:-1] + (-1, 2))
    re = 1.0 - 2.0 * pairs[..., 1]
    im = 1.0 - 2.0 * pairs[..., 0]
    return (amp / np.sqrt(2.0)) * (re + 1j * im)


def make_beamformer(h_ref) -> Beamformer:
    h_ref = as_vector(h_ref)
    nrm = np.sqrt(norm_sq(h_ref))
    if np.any(nrm == 0):
        raise DegenerateBeamformerError("cannot steer towards a zero channel")
    return Beamformer(h_ref / nrm[..., None] if h_ref.ndim > 1 else h_ref / nrm)


def beam_weights(h_ref) -> np.ndarray:
    """Batched unit-norm weights ``h_ref / ||h_ref||``.

    Rows with a zero reference get equal weights ``1/sqrt(n_T)``, the
    no-CSI choice, instead of raising.
    """
    h_ref = np.asarray(h_ref, dtype=np.complex128)
    nrm = np.sqrt(norm_sq(h_ref))[..., None]
    n_t = h_ref.shape[-1]
    uniform = np.full(h_ref.shape, 1.0 / np.sqrt(n_t), dtype=np.complex128)
    safe = np.where(nrm > 0, nrm, 1.0)
    return np.where(nrm > 0, h_ref / safe, uniform)


def composite_gain(h, w):
    """Scalar gain ``h^H w`` seen by the receiver."""
    return inner_product(h, w)


def detect(d, composite_gain, mod: Modulation) -> np.ndarray:
    """Coherent hard decisions.

    The received sample is derotated by the phase of ``composite_gain`` and
    sliced to the nearest constellation point.  Returns bits with a trailing
    axis of length ``bits_per_symbol`` folded into the last axis (so a 1-D
    array of ``n`` samples gives ``n * bits_per_symbol`` bits).
    """
    g = np.asarray(composite_gain, dtype=np.complex128)
    if np.any(g == 0):
        raise DegenerateBeamformerError("zero composite gain")
    y = np.asarray(d, dtype=np.complex128) * np.conj(g) / np.abs(g)
    if mod.scheme is Scheme.BPSK:
        return (y.real < 0).astype(np.int8)
    b0 = (y.imag < 0).astype(np.int8)
    b1 = (y.real < 0).astype(np.int8)
    out = np.stack([b0, b1], axis=-1)
    return out.reshape(out.shape[:-2] + (-1,)) if out.ndim > 1 else out
