"""Block-fading Rayleigh channel, forward link and the staleness trigger."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ParameterError,
    as_vector,
    draw_complex_gaussian,
    inner_product,
    norm_sq,
    _check_same_length,
)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    epoch: int = 0

    @property
    def n_t(self) -> int:
        return self.h.shape[-1]


@dataclass(frozen=True)
class NoiseModel:
    sigma_v_sq: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma_v_sq) and self.sigma_v_sq > 0):
            raise ParameterError(f"noise variance must be finite and > 0, got {self.sigma_v_sq}")

    @classmethod
    def from_tnr_db(cls, tnr_db: float, symbol_power: float = 1.0) -> "NoiseModel":
        return cls(symbol_power / 10.0 ** (tnr_db / 10.0))


def new_epoch(rng, n_t: int, previous: ChannelRealization | None = None) -> ChannelRealization:
    """Draw a fresh CN(0, 1) channel; the epoch counter follows ``previous``."""
    if n_t < 1:
        raise ParameterError(f"n_t must be >= 1, got {n_t}")
    epoch = 0 if previous is None else previous.epoch + 1
    return ChannelRealization(draw_complex_gaussian(rng, n_t, 1.0), epoch)


def receive(h, t, noise: NoiseModel | None, rng=None):
    """Forward link ``d = h^H t + v`` with ``v ~ CN(0, sigma_v^2)``.

    ``noise=None`` gives the noiseless output.
    """
    h = as_vector(h)
    t = as_vector(t)
    _check_same_length(h, t)
    d = inner_product(h, t)
    if noise is not None:
        shape = np.shape(d)
        v = draw_complex_gaussian(rng, shape if shape else 1, noise.sigma_v_sq)
        d = d + (v if shape else v[0])
    return d


def estimate_stale(h, h_hat, zeta: float):
    """True when ``||h - h_hat|| > zeta``; the boundary counts as fresh."""
    if not zeta > 0:
        raise ParameterError(f"zeta must be > 0, got {zeta}")
    h = as_vector(h)
    h_hat = as_vector(h_hat)
    _check_same_length(h, h_hat)
    return np.sqrt(norm_sq(h - h_hat)) > zeta
