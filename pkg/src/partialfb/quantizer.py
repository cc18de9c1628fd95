"""Lloyd-Max scalar quantizer for the fed-back step sizes."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParameterError, PartialFeedbackError


class CodebookError(PartialFeedbackError, ValueError):
    pass


@dataclass(frozen=True)
class CodebookMeta:
    n_t: int | None = None
    zeta: float | None = None
    sample_count: int = 0
    distortion: float = float("nan")


@dataclass(frozen=True, eq=False)
class StepCodebook:
    levels: np.ndarray
    thresholds: np.ndarray
    bits: int
    meta: CodebookMeta = field(default_factory=CodebookMeta)
    history: tuple[float, ...] = ()

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        th = np.asarray(self.thresholds, dtype=np.float64)
        if lv.shape != (2**self.bits,) or th.shape != (2**self.bits - 1,):
            raise CodebookError(f"{self.bits}-bit codebook needs {2**self.bits} levels and {2**self.bits - 1} thresholds")
        if not (np.all(np.isfinite(lv)) and np.all(np.isfinite(th))):
            raise CodebookError("codebook values must be finite")
        if np.any(np.diff(lv) <= 0) or np.any(lv[:-1] >= th) or np.any(th >= lv[1:]):
            raise CodebookError("levels and thresholds must interleave strictly")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "thresholds", th)

    def __eq__(self, other):
        if not isinstance(other, StepCodebook):
            return NotImplemented
        return (
            self.bits == other.bits
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.thresholds, other.thresholds)
            and self.meta == other.meta
        )

    @property
    def size(self) -> int:
        return 2**self.bits

    def encode(self, mu):
        """Cell index of ``mu``; points on a threshold go to the lower cell."""
        return np.searchsorted(self.thresholds, mu, side="left")

    def decode(self, index):
        index = np.asarray(index)
        if np.any(index < 0) or np.any(index >= self.size):
            raise CodebookError(f"index out of range 0..{self.size - 1}")
        return self.levels[index]

    def quantize(self, mu):
        return self.decode(self.encode(mu))


def encode(cb: StepCodebook, mu: float) -> int:
    return int(cb.encode(float(mu)))


def decode(cb: StepCodebook, index: int) -> float:
    return float(cb.decode(int(index)))


def _midpoints(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels[:-1] + levels[1:])


def _cells(xs: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Boundaries into sorted samples: cell i is ``xs[b[i]:b[i+1]]``."""
    inner = np.searchsorted(xs, thresholds, side="right")
    return np.concatenate([[0], inner, [xs.size]])


def _cell_sse(xs, bounds, levels) -> np.ndarray:
    return np.array([np.sum((xs[bounds[i] : bounds[i + 1]] - c) ** 2) for i, c in enumerate(levels)])


def design_codebook(
    samples,
    bits: int = 3,
    tol: float = 1e-8,
    max_rounds: int = 500,
    meta: CodebookMeta | None = None,
) -> StepCodebook:
    """Train a ``2**bits`` level Lloyd quantizer on empirical samples.

    Levels start at the equiprobable empirical quantiles.  Each round
    partitions the samples by level midpoints and moves every level to its
    cell mean; the loop stops once the relative drop in mean squared error
    falls below ``tol``.  A cell that empties out is dropped and the cell
    with the largest squared error is split in two around its centroid.
    """
    xs = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n_levels = 2**bits
    if bits < 1:
        raise ParameterError("bits must be >= 1")
    if xs.size < n_levels:
        raise CodebookError(f"need at least {n_levels} samples, got {xs.size}")
    if not np.all(np.isfinite(xs)):
        raise CodebookError("samples must be finite")
    if np.unique(xs).size < n_levels:
        raise CodebookError(f"need at least {n_levels} distinct sample values")
    split = 1e-6 * float(np.std(xs))

    levels = np.quantile(xs, (np.arange(n_levels) + 0.5) / n_levels)
    levels = _repair(xs, np.unique(levels), n_levels, split)
    history: list[float] = []
    for _ in range(max_rounds):
        bounds = _cells(xs, _midpoints(levels))
        dist = float(np.sum(_cell_sse(xs, bounds, levels)) / xs.size)
        history.append(dist)
        counts = np.diff(bounds)
        if np.any(counts == 0):
            levels = _repair(xs, levels[counts > 0], n_levels, split)
            continue
        sums = np.add.reduceat(xs, bounds[:-1])
        levels = sums / counts
        if len(history) > 1 and history[-2] - dist <= tol * dist:
            break

    thresholds = _midpoints(levels)
    bounds = _cells(xs, thresholds)
    dist = float(np.sum(_cell_sse(xs, bounds, levels)) / xs.size)
    history.append(dist)
    meta = meta or CodebookMeta()
    meta = CodebookMeta(meta.n_t, meta.zeta, int(xs.size), dist)
    return StepCodebook(levels, thresholds, bits, meta, tuple(history))


def _repair(xs, levels, n_levels, split) -> np.ndarray:
    """Split highest-error cells until there are ``n_levels`` distinct levels."""
    levels = np.sort(levels)
    while levels.size < n_levels:
        bounds = _cells(xs, _midpoints(levels)) if levels.size > 1 else np.array([0, xs.size])
        sse = _cell_sse(xs, bounds, levels)
        worst = int(np.argmax(sse))
        c = levels[worst]
        levels = np.sort(np.concatenate([np.delete(levels, worst), [c - split, c + split]]))
        levels = np.unique(levels)
    return levels


# --------------------------------------------------------------------------
# text format


def dumps(cb: StepCodebook) -> str:
    m = cb.meta
    meta = (
        f"n_t={'none' if m.n_t is None else m.n_t} "
        f"zeta={'none' if m.zeta is None else repr(float(m.zeta))} "
        f"sample_count={m.sample_count} distortion={float(m.distortion)!r}"
    )
    return "\n".join(
        [
            f"bits={cb.bits}",
            " ".join(repr(float(v)) for v in cb.levels),
            " ".join(repr(float(v)) for v in cb.thresholds),
            meta,
        ]
    ) + "\n"


def loads(text: str) -> StepCodebook:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 4 or not lines[0].startswith("bits="):
        raise CodebookError("codebook file must have 4 lines starting with 'bits='")
    try:
        bits = int(lines[0][5:])
        levels = np.array([float(v) for v in lines[1].split()])
        thresholds = np.array([float(v) for v in lines[2].split()])
        kv = dict(tok.split("=", 1) for tok in lines[3].split())
        meta = CodebookMeta(
            None if kv["n_t"] == "none" else int(kv["n_t"]),
            None if kv["zeta"] == "none" else float(kv["zeta"]),
            int(kv["sample_count"]),
            float(kv["distortion"]),
        )
    except (ValueError, KeyError) as exc:
        raise CodebookError(f"malformed codebook file: {exc}") from None
    return StepCodebook(levels, thresholds, bits, meta)


def save(cb: StepCodebook, path) -> None:
    Path(path).write_text(dumps(cb))


def load(path) -> StepCodebook:
    return loads(Path(path).read_text())


# --------------------------------------------------------------------------
# training data


def collect_step_samples(config, trials: int, zeta: float | None = None) -> np.ndarray:
    """Step sizes seen in ``trials`` seeded sessions with ideal feedback.

    Uses the first entry of ``config.zeta_list`` unless ``zeta`` is given.
    Output order is session order, then iteration order.
    """
    from .config import trial_blocks
    from .estimator import draw_session_inputs, run_sessions_batch

    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if zeta is None:
        if not config.zeta_list:
            raise ParameterError("config has no zeta values")
        zeta = config.zeta_list[0]
    out = []
    for block, count in trial_blocks(trials):
        h, h0, train = draw_session_inputs(config, block, count)
        res = run_sessions_batch(h, h0, train, zeta, config.max_iters, None, record=True)
        out.append(res.active_mu_opt())
    return np.concatenate(out)
