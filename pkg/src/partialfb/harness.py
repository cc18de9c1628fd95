"""Monte-Carlo drivers: BER sweeps, step-size histograms, convergence stats.

Trials are processed in fixed blocks of ``TRIALS_PER_STREAM`` realizations.
Every block draws from its own seeded substreams and blocks are reduced in
index order, so results are identical for any worker count.

Within a block all schemes (OBS and every SOBS threshold) see the same
channel, bits and unit noise at a given TNR point; only the beamformer
differs.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special

from .beamformer import Modulation, Scheme, beam_weights, detect, modulate
from .config import SUB_CHANNEL, SUB_DATA, SUB_LIVE, SimConfig, trial_blocks
from .core import ParameterError, draw_complex_gaussian, generator, inner_product, norm_sq
from .estimator import draw_session_inputs, run_sessions_batch
from .quantizer import CodebookMeta, StepCodebook, collect_step_samples, design_codebook

BER_HEADER = ["tnr_db", "scheme", "zeta", "n_t", "modulation", "bits_sent", "bit_errors", "ber", "ci_lo", "ci_hi"]
HIST_HEADER = ["bin_lo", "bin_hi", "count"]
CONV_HEADER = ["zeta", "n_t", "quantized", "sessions", "median_iters", "mean_iters", "frac_converged", "feedback_bits_mean"]


def wilson_interval(errors: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class BerPoint:
    tnr_db: float
    scheme: str  # "OBS" or "SOBS"
    zeta: float | None
    bit_errors: int
    bits_sent: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_sent if self.bits_sent else float("nan")

    @property
    def ci95(self) -> tuple[float, float]:
        return wilson_interval(self.bit_errors, self.bits_sent)

    @property
    def label(self) -> str:
        return "OBS" if self.zeta is None else f"SOBS({self.zeta:g})"


@dataclass
class BerCurve:
    config: SimConfig
    points: list[BerPoint]

    def select(self, zeta: float | None = None) -> list[BerPoint]:
        """Points of one scheme (``zeta=None`` for OBS) along the TNR grid."""
        return [p for p in self.points if p.zeta == zeta]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BER_HEADER)
        mod = self.config.modulation.scheme.value
        for p in self.points:
            lo, hi = p.ci95
            w.writerow(
                [
                    repr(p.tnr_db),
                    p.scheme,
                    "" if p.zeta is None else repr(p.zeta),
                    self.config.n_t,
                    mod,
                    p.bits_sent,
                    p.bit_errors,
                    repr(p.ber),
                    repr(lo),
                    repr(hi),
                ]
            )
        return buf.getvalue()


# --------------------------------------------------------------------------
# analytic oracle


def mrc_ber_oracle(tnr_linear, n_t: int, modulation: Modulation | None = None):
    """Average BER of L-branch MRC over i.i.d. unit-power Rayleigh branches.

    Optimal beamforming over ``n_T`` unit-power channels gives exactly the
    ``L = n_T`` MRC statistic.  Gray QPSK carries two bits per symbol with the
    same per-bit error rate as BPSK at half the per-symbol SNR.
    """
    if n_t < 1:
        raise ParameterError("n_t must be >= 1")
    g = np.asarray(tnr_linear, dtype=np.float64)
    if np.any(g <= 0):
        raise ParameterError("TNR must be > 0")
    if modulation is not None and modulation.scheme is Scheme.QPSK:
        g = g / 2.0
    mu = np.sqrt(g / (1.0 + g))
    p = 0.5 * (1.0 - mu)
    total = sum(special.comb(n_t - 1 + k, k) * (1.0 - p) ** k for k in range(n_t))
    out = p**n_t * total
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# codebook training

# Pilot sessions use a shifted seed so codebooks are not trained on the very
# channels they are later evaluated on.
PILOT_SEED_OFFSET = 0x9E3779B97F4A7C15


def pilot_config(config: SimConfig) -> SimConfig:
    return config.with_(master_seed=(config.master_seed + PILOT_SEED_OFFSET) % 2**64)


def train_codebook(config: SimConfig, zeta: float, sessions: int = 4000, tol: float = 1e-8, max_rounds: int = 500) -> StepCodebook:
    """Lloyd codebook for one ``(n_T, zeta)`` pair from ideal-feedback pilot runs."""
    samples = collect_step_samples(pilot_config(config), sessions, zeta)
    return design_codebook(samples, config.quantizer_bits, tol, max_rounds, CodebookMeta(config.n_t, zeta))


# --------------------------------------------------------------------------
# BER sweep


def _codebook_for(codebook, zeta):
    if codebook is None or isinstance(codebook, StepCodebook):
        return codebook
    return codebook[zeta]


def _count_errors(h, w, bits, unit_noise, sigma, mod) -> int:
    """Bit errors for one scheme over a block of realizations."""
    g = inner_product(h, w)  # (B,)
    s = modulate(bits, mod)  # (B, m)
    d = g[:, None] * s + sigma * unit_noise
    g_det = np.where(g == 0, 1.0 + 0j, g)
    return int(np.count_nonzero(detect(d, g_det[:, None], mod) != bits))


def _live_errors(h, estimates, iterations, gen, sigma, mod) -> tuple[int, int]:
    """Symbols sent during estimation in no-interrupt mode.

    At iteration ``k`` the transmitter beamforms with the freshly updated
    ``H_k``; one symbol is sent per iteration.
    """
    nb, kmax = estimates.shape[0], estimates.shape[1] - 1
    if kmax == 0:
        return 0, 0
    bps = mod.bits_per_symbol
    bits = gen.integers(0, 2, size=(nb, kmax, bps), dtype=np.int8)
    noise = draw_complex_gaussian(gen, (nb, kmax), 1.0)
    est = estimates[:, 1:]  # (B, K, n_T)
    valid = np.arange(1, kmax + 1)[None, :] <= iterations[:, None]
    w = beam_weights(np.where(valid[..., None], est, 0))
    g = np.sum(np.conj(h)[:, None, :] * w, axis=-1)
    s = modulate(bits.reshape(nb, kmax * bps), mod).reshape(nb, kmax)
    d = g * s + sigma * noise
    g_det = np.where(g == 0, 1.0 + 0j, g)
    bad = detect(d[..., None], g_det[..., None], mod).reshape(nb, kmax, bps) != bits
    errors = int(np.count_nonzero(bad & valid[..., None]))
    return errors, int(np.count_nonzero(valid)) * bps


def _sweep_block(config: SimConfig, codebook, block: int, count: int) -> np.ndarray:
    """Errors and bits for one block, shape ``(n_tnr, 1 + n_zeta, 2)``."""
    mod = config.modulation
    n_z = len(config.zeta_list)
    n_tnr = len(config.tnr_grid_db)
    out = np.zeros((n_tnr, 1 + n_z, 2), dtype=np.int64)

    if n_z:
        h_rows, h0, train = draw_session_inputs(config, block, count)
    else:
        h_rows = draw_complex_gaussian(config.stream(block, SUB_CHANNEL), (count, config.n_r, config.n_t), 1.0)
    h = h_rows[:, 0, :]

    weights = [beam_weights(h)]
    live = []
    for zeta in config.zeta_list:
        res = run_sessions_batch(
            h_rows,
            h0,
            train,
            zeta,
            config.max_iters,
            _codebook_for(codebook, zeta),
            record_estimates=not config.interrupt_mode,
        )
        weights.append(beam_weights(res.h_est[:, 0, :]))
        if not config.interrupt_mode:
            est = res.estimates[:, :, 0, :]
            live.append((est, res.iterations))

    data = generator(config.stream(block, SUB_DATA))
    live_gen = generator(config.stream(block, SUB_LIVE))
    m_bits = config.block_symbols * mod.bits_per_symbol
    for ti, tnr_db in enumerate(config.tnr_grid_db):
        sigma = math.sqrt(mod.symbol_power / 10.0 ** (tnr_db / 10.0))
        bits = data.integers(0, 2, size=(count, m_bits), dtype=np.int8)
        noise = draw_complex_gaussian(data, (count, config.block_symbols), 1.0)
        for si, w in enumerate(weights):
            out[ti, si, 0] += _count_errors(h, w, bits, noise, sigma, mod)
            out[ti, si, 1] += count * m_bits
        for zi, (est, iters) in enumerate(live):
            e, n = _live_errors(h, est, iters, live_gen, sigma, mod)
            out[ti, 1 + zi, 0] += e
            out[ti, 1 + zi, 1] += n
    return out


def run_ber_sweep(
    config: SimConfig,
    codebook: StepCodebook | Mapping[float, StepCodebook] | None = None,
    threads: int = 1,
    progress=None,
) -> BerCurve:
    """BER versus TNR for OBS and one SOBS curve per threshold in ``zeta_list``.

    Each trial draws a channel; SOBS runs an estimation session from the
    configured initial estimate until ``||H - H_n|| <= zeta`` and then sends
    ``block_symbols`` symbols beamformed along the estimate.  ``codebook`` may
    be one codebook for every threshold or a mapping keyed by threshold;
    ``None`` means ideal feedback.
    """
    if config.n_r != 1:
        raise ParameterError("BER sweeps model a single receive antenna (n_r = 1)")
    for zeta in config.zeta_list:
        cb = _codebook_for(codebook, zeta)
        if cb is not None and cb.bits != config.quantizer_bits:
            raise ParameterError(f"codebook has {cb.bits} bits, config expects {config.quantizer_bits}")
    blocks = trial_blocks(config.trials_per_point)
    total = np.zeros((len(config.tnr_grid_db), 1 + len(config.zeta_list), 2), dtype=np.int64)

    def work(item):
        return _sweep_block(config, codebook, *item)

    if threads <= 1:
        results = map(work, blocks)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(work, blocks)
    try:
        for i, part in enumerate(results):
            total += part
            if progress is not None:
                progress(i + 1, len(blocks))
    finally:
        if threads > 1:
            pool.shutdown()

    points = []
    schemes = [("OBS", None)] + [("SOBS", z) for z in config.zeta_list]
    for ti, tnr in enumerate(config.tnr_grid_db):
        for si, (name, zeta) in enumerate(schemes):
            points.append(BerPoint(tnr, name, zeta, int(total[ti, si, 0]), int(total[ti, si, 1])))
    return BerCurve(config, points)


# --------------------------------------------------------------------------
# step-size histogram


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    samples: np.ndarray

    @property
    def mode_bin(self) -> tuple[float, float]:
        i = int(np.argmax(self.counts))
        return float(self.edges[i]), float(self.edges[i + 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return buf.getvalue()


def skewness(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    return float(np.mean(d**3) / np.mean(d**2) ** 1.5)


def run_histogram(config: SimConfig, sessions: int, bins: int = 101, zeta: float | None = None) -> Histogram:
    """Histogram of ideal-feedback step sizes over ``mean +- 5 std``.

    Samples beyond the range are counted in the outermost bins so the counts
    always add up to the number of samples.
    """
    mu = collect_step_samples(config, sessions, zeta)
    if mu.size == 0:
        return Histogram(np.array([0.0, 0.0]), np.array([0]), mu)
    m, s = float(mu.mean()), float(mu.std())
    if s == 0:
        s = 1.0
    edges = np.linspace(m - 5 * s, m + 5 * s, bins + 1)
    idx = np.clip(np.searchsorted(edges, mu, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(edges, counts, mu)


# --------------------------------------------------------------------------
# convergence statistics


@dataclass(frozen=True)
class ConvergenceStats:
    zeta: float
    n_t: int
    quantized: bool
    sessions: int
    median_iters: float
    mean_iters: float
    frac_converged: float
    feedback_bits_mean: float

    def row(self) -> list:
        return [
            repr(self.zeta),
            self.n_t,
            int(self.quantized),
            self.sessions,
            repr(self.median_iters),
            repr(self.mean_iters),
            repr(self.frac_converged),
            repr(self.feedback_bits_mean),
        ]


def convergence_stats(
    config: SimConfig,
    codebook: StepCodebook | Mapping[float, StepCodebook] | None,
    sessions: int,
    zeta: float | None = None,
) -> ConvergenceStats | list[ConvergenceStats]:
    """Iteration counts and success rate of seeded sessions.

    Feedback cost counts payload bits only, ``n * n_R * b`` per session; it is
    NaN for ideal (unquantized) feedback.  Without ``zeta`` one record per
    threshold in the config is returned.
    """
    if zeta is None:
        return [convergence_stats(config, codebook, sessions, z) for z in config.zeta_list]
    cb = _codebook_for(codebook, zeta)
    iters, conv = [], []
    for block, count in trial_blocks(sessions):
        h, h0, train = draw_session_inputs(config, block, count)
        res = run_sessions_batch(h, h0, train, zeta, config.max_iters, cb)
        iters.append(res.iterations)
        conv.append(res.converged)
    it = np.concatenate(iters)
    cv = np.concatenate(conv)
    fb = float("nan") if cb is None else float(it.mean() * config.n_r * cb.bits)
    return ConvergenceStats(
        float(zeta), config.n_t, cb is not None, int(sessions),
        float(np.median(it)), float(it.mean()), float(cv.mean()), fb,
    )


def convergence_csv(stats: list[ConvergenceStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONV_HEADER)
    for s in stats:
        w.writerow(s.row())
    return buf.getvalue()
