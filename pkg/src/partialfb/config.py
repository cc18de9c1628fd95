"""Simulation configuration, presets and stream bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .beamformer import Modulation, Scheme
from .core import ParameterError, RngStream

# Trials are grouped into fixed-size blocks; each block owns its random
# streams so results do not depend on how blocks are scheduled.
TRIALS_PER_STREAM = 1024

# Substream ids inside a block.
SUB_CHANNEL = 0
SUB_TRAINING = 1
SUB_DATA = 2
SUB_LIVE = 3
SUB_PREVIOUS = 4

INIT_MODES = ("zero", "previous")
TRAINING_KINDS = ("gaussian", "pn")


@dataclass(frozen=True)
class SimConfig:
    n_t: int = 2
    n_r: int = 1
    modulation: Modulation = field(default_factory=Modulation)
    zeta_list: tuple[float, ...] = (0.1, 0.3, 0.5)
    tnr_grid_db: tuple[float, ...] = tuple(float(x) for x in range(0, 21, 2))
    trials_per_point: int = 2000
    max_iters: int = 500
    quantizer_bits: int = 3
    master_seed: int = 0
    interrupt_mode: bool = True
    init_mode: str = "zero"
    block_symbols: int = 100
    training_length: int = 0  # 0 selects 64 * n_t
    training_kind: str = "pn"

    def __post_init__(self):
        object.__setattr__(self, "zeta_list", tuple(float(z) for z in self.zeta_list))
        object.__setattr__(self, "tnr_grid_db", tuple(float(t) for t in self.tnr_grid_db))
        for name in ("n_t", "n_r", "trials_per_point", "max_iters", "quantizer_bits", "block_symbols"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_iters > 0xFFFF:
            raise ParameterError("max_iters must fit the 16-bit iteration counter")
        if self.n_r > 255:
            raise ParameterError("n_r must be <= 255")
        if self.quantizer_bits > 16:
            raise ParameterError("quantizer_bits must be <= 16")
        if any(not (z > 0 and np.isfinite(z)) for z in self.zeta_list):
            raise ParameterError(f"zeta values must be positive, got {self.zeta_list}")
        if not all(np.isfinite(self.tnr_grid_db)):
            raise ParameterError("TNR grid must be finite")
        if list(self.tnr_grid_db) != sorted(self.tnr_grid_db):
            raise ParameterError("TNR grid must be sorted")
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise ParameterError("master_seed must be a 64-bit unsigned integer")
        if self.training_length < 0:
            raise ParameterError("training_length must be >= 0")
        if self.init_mode not in INIT_MODES:
            raise ParameterError(f"init_mode must be one of {INIT_MODES}")
        if self.training_kind not in TRAINING_KINDS:
            raise ParameterError(f"training_kind must be one of {TRAINING_KINDS}")

    @property
    def n_training(self) -> int:
        return self.training_length or 64 * self.n_t

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def stream(self, block: int, substream: int) -> RngStream:
        return RngStream(self.master_seed, block, substream)


def trial_blocks(trials: int) -> list[tuple[int, int]]:
    """Split ``trials`` into ``(block_index, count)`` work units."""
    out = []
    for b, start in enumerate(range(0, trials, TRIALS_PER_STREAM)):
        out.append((b, min(TRIALS_PER_STREAM, trials - start)))
    return out


PRESETS = {
    "bpsk-nt2": SimConfig(n_t=2, modulation=Modulation(Scheme.BPSK)),
    "bpsk-nt3": SimConfig(n_t=3, modulation=Modulation(Scheme.BPSK)),
    "qpsk-nt2": SimConfig(n_t=2, modulation=Modulation(Scheme.QPSK)),
    "qpsk-nt3": SimConfig(n_t=3, modulation=Modulation(Scheme.QPSK)),
}
