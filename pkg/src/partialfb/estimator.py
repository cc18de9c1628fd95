"""Adaptive partial-feedback channel estimation.

Both link ends run the recursion ``H_k = H_{k-1} + mu_k X_k`` over a training
sequence they share.  Only the receiver knows the true channel ``H``; it
computes the error-minimising step

    mu_k = Re(X_k^H (H - H_{k-1})) / ||X_k||^2

quantizes it and feeds the index back.  Both ends then advance with the
*dequantized* value so the receiver's mirror of ``H_k`` never drifts from the
transmitter's copy.  With the exact step the squared error drops by
``Re^2(X_k^H e) / ||X_k||^2`` per iteration.

Two implementations live here:

* :func:`run_session` / :func:`run_session_mimo` drive explicit transmitter and
  receiver halves that talk through encoded feedback frames.  They produce a
  full :class:`SessionTrace` and are the reference.
* :func:`run_sessions_batch` advances thousands of independent sessions at
  once with the same arithmetic; the Monte-Carlo harness uses it.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .core import (
    DimensionError,
    ParameterError,
    PartialFeedbackError,
    ProtocolError,
    as_vector,
    draw_complex_gaussian,
    generator,
    inner_product,
    norm_sq,
)
from .feedback import FeedbackMessage, MessageKind, decode_message, encode_message

if TYPE_CHECKING:
    from .config import SimConfig
    from .quantizer import StepCodebook


class DegenerateTrainingError(PartialFeedbackError, ValueError):
    pass


class Phase(enum.Enum):
    IDLE = "idle"
    ESTIMATING = "estimating"
    ENDED = "ended"


@dataclass(frozen=True)
class EstimatorState:
    """One party's view of the running estimate ``H_k``.

    ``h_est`` is ``(n_T,)`` for a single receive antenna or ``(n_R, n_T)``
    when several recursions advance in lockstep.
    """

    h_est: np.ndarray
    k: int = 0
    phase: Phase = Phase.IDLE

    def start(self, h_init=None) -> "EstimatorState":
        if self.phase is not Phase.IDLE:
            raise ProtocolError(f"cannot start a session from phase {self.phase.value}")
        h0 = self.h_est if h_init is None else as_vector(h_init)
        return EstimatorState(np.array(h0, dtype=np.complex128), 0, Phase.ESTIMATING)

    def end(self) -> "EstimatorState":
        if self.phase is not Phase.ESTIMATING:
            raise ProtocolError(f"cannot end a session from phase {self.phase.value}")
        return replace(self, phase=Phase.ENDED)

    def reset(self) -> "EstimatorState":
        if self.phase is not Phase.ENDED:
            raise ProtocolError(f"cannot reset from phase {self.phase.value}")
        return replace(self, phase=Phase.IDLE)


@dataclass(frozen=True)
class TrainingSequence:
    """Training vectors ``X_1..X_N`` shared by both ends; reused cyclically."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] < 1:
            raise DimensionError("training must be a non-empty (N, n_T) array")
        if not np.all(np.isfinite(v)):
            raise ParameterError("training contains NaN or Inf")
        if np.any(norm_sq(v) <= 0):
            raise DegenerateTrainingError("training vectors must have positive norm")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_t(self) -> int:
        return self.vectors.shape[1]

    def vector(self, k: int) -> np.ndarray:
        """``X_k`` for ``k >= 1``."""
        return self.vectors[(k - 1) % len(self)]


def draw_training(rng, n_t: int, length: int, kind: str = "gaussian", batch=None) -> np.ndarray:
    """Pseudo-white training vectors, shape ``batch + (length, n_t)``.

    ``gaussian`` draws CN(0, 1) entries.  ``pn`` draws unit-modulus entries
    ``(+-1 +- j)/sqrt(2)``; the imaginary part is needed because the step sizes
    are real and real-valued training would leave ``Im(H)`` unreachable.
    """
    shape = tuple(batch or ()) + (length, n_t)
    if kind == "gaussian":
        return draw_complex_gaussian(rng, shape, 1.0)
    if kind == "pn":
        signs = 1.0 - 2.0 * generator(rng).integers(0, 2, size=shape + (2,))
        return (signs[..., 0] + 1j * signs[..., 1]) / np.sqrt(2.0)
    raise ParameterError(f"unknown training kind {kind!r}")


@dataclass(frozen=True)
class StepResult:
    mu_opt: float
    predicted_error_sq: float


def _step_terms(h_true, h_est, x_k):
    h_true = np.asarray(h_true, dtype=np.complex128)
    h_est = np.asarray(h_est, dtype=np.complex128)
    x_k = np.asarray(x_k, dtype=np.complex128)
    if not (h_true.shape[-1] == h_est.shape[-1] == x_k.shape[-1]):
        raise DimensionError("h_true, h_est and x_k must have equal length")
    nx = norm_sq(x_k)
    if np.any(nx <= 0):
        raise DegenerateTrainingError("training vector has zero norm")
    err = h_true - h_est
    return err, inner_product(x_k, err).real, nx


def optimal_step(h_true, h_est, x_k) -> StepResult:
    """Receiver-side step size and the error it leaves behind.

    Works elementwise over leading axes; the result fields are then arrays.
    """
    err, r, nx = _step_terms(h_true, h_est, x_k)
    mu = r / nx
    pred = np.maximum(norm_sq(err) - r * r / nx, 0.0)
    if np.ndim(mu) == 0:
        return StepResult(float(mu), float(pred))
    return StepResult(mu, pred)


def admissible_interval(h_true, h_est, x_k) -> tuple[float, float]:
    """Open interval of steps that strictly shrink ``||H - H_k||``.

    ``(0, 2 mu*)`` for a positive optimum and ``(2 mu*, 0)`` for a negative
    one; ``(0, 0)`` (empty) when the residual is orthogonal to ``x_k``.
    """
    mu = optimal_step(h_true, h_est, x_k).mu_opt
    lo = np.minimum(0.0, 2.0 * np.asarray(mu))
    hi = np.maximum(0.0, 2.0 * np.asarray(mu))
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def apply_step(state: EstimatorState, x_k, mu) -> EstimatorState:
    if state.phase is not Phase.ESTIMATING:
        raise ProtocolError(f"apply_step needs an estimating session, phase is {state.phase.value}")
    x_k = as_vector(x_k, state.h_est.shape[-1])
    mu = np.asarray(mu, dtype=np.float64)
    if not np.all(np.isfinite(mu)):
        raise ParameterError("step size must be finite")
    h_new = state.h_est + mu[..., None] * x_k if mu.ndim else state.h_est + float(mu) * x_k
    return EstimatorState(h_new, state.k + 1, Phase.ESTIMATING)


# --------------------------------------------------------------------------
# transmitter / receiver halves


def _stale_rows(h_true, h_est, zeta) -> np.ndarray:
    return np.sqrt(norm_sq(h_true - h_est)) > zeta


class ReceiverSide:
    """Knows the true channel rows and mirrors the transmitter's estimate."""

    def __init__(self, h_true, h_init, training: TrainingSequence, codebook=None, zeta=0.1):
        self.h_true = np.atleast_2d(as_vector(h_true, training.n_t))
        self.mirror = EstimatorState(np.atleast_2d(as_vector(h_init, training.n_t)).copy())
        if self.mirror.h_est.shape != self.h_true.shape:
            raise DimensionError("h_init rows do not match h_true rows")
        self.training = training
        self.codebook = codebook
        self.zeta = zeta

    def err_sq(self) -> np.ndarray:
        return norm_sq(self.h_true - self.mirror.h_est)

    def stale(self) -> bool:
        return bool(np.any(_stale_rows(self.h_true, self.mirror.h_est, self.zeta)))

    def start(self) -> FeedbackMessage:
        self.mirror = self.mirror.start()
        return FeedbackMessage.start()

    def step(self):
        """Compute, quantize and apply the next step; returns (message, mu_opt, mu_sent)."""
        k = self.mirror.k + 1
        x = self.training.vector(k)
        res = optimal_step(self.h_true, self.mirror.h_est, x)
        mu_opt = np.atleast_1d(res.mu_opt)
        if self.codebook is None:
            indices = ()
            mu_sent = mu_opt
        else:
            idx = self.codebook.encode(mu_opt)
            indices = tuple(int(i) for i in idx)
            mu_sent = self.codebook.decode(idx)
        self.mirror = apply_step(self.mirror, x, mu_sent)
        return FeedbackMessage.step(k, indices), mu_opt, mu_sent

    def end(self) -> FeedbackMessage:
        self.mirror = self.mirror.end()
        return FeedbackMessage.end(self.mirror.k)


class TransmitterSide:
    """Holds ``H_k`` and advances it from feedback alone."""

    def __init__(self, h_init, training: TrainingSequence, codebook=None):
        self.state = EstimatorState(np.atleast_2d(as_vector(h_init, training.n_t)).copy())
        self.training = training
        self.codebook = codebook
        self.h_hat = self.state.h_est.copy()

    def handle(self, msg: FeedbackMessage, ideal_values=None) -> None:
        if msg.kind == MessageKind.START:
            self.state = self.state.start()
        elif msg.kind == MessageKind.STEP:
            if msg.iteration != self.state.k + 1:
                raise ProtocolError(f"expected step {self.state.k + 1}, got {msg.iteration}")
            if self.codebook is None:
                if ideal_values is None:
                    raise ProtocolError("ideal feedback needs the step values")
                mu = np.asarray(ideal_values, dtype=np.float64)
            else:
                mu = self.codebook.decode(np.asarray(msg.indices))
            self.state = apply_step(self.state, self.training.vector(msg.iteration), mu)
        elif msg.kind == MessageKind.END:
            if msg.iteration != self.state.k:
                raise ProtocolError(f"end signal for iteration {msg.iteration}, transmitter is at {self.state.k}")
            self.state = self.state.end()
            self.h_hat = self.state.h_est.copy()


# --------------------------------------------------------------------------
# reference sessions


@dataclass(frozen=True)
class StepRecord:
    k: int
    mu_opt: float
    mu_sent: float
    err_sq: float
    index: int | None = None


@dataclass
class SessionTrace:
    initial_err_sq: float
    records: list[StepRecord]
    n: int
    converged: bool
    h_final: np.ndarray
    messages: list[FeedbackMessage] = field(default_factory=list)
    frames: list[bytes] = field(default_factory=list)

    @property
    def err_sq(self) -> np.ndarray:
        """``||H - H_k||^2`` for ``k = 0..n``."""
        return np.array([self.initial_err_sq] + [r.err_sq for r in self.records])

    @property
    def mu_opt(self) -> np.ndarray:
        return np.array([r.mu_opt for r in self.records])

    def to_csv(self, fh=None) -> str | None:
        """Write ``k,mu_opt,mu_sent,err_sq`` rows (``k = 0`` holds the start error)."""
        own = fh is None
        buf = io.StringIO() if own else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mu_opt", "mu_sent", "err_sq"])
        w.writerow([0, "", "", repr(float(self.initial_err_sq))])
        for r in self.records:
            w.writerow([r.k, repr(float(r.mu_opt)), repr(float(r.mu_sent)), repr(float(r.err_sq))])
        return buf.getvalue() if own else None


def _as_training(training) -> TrainingSequence:
    return training if isinstance(training, TrainingSequence) else TrainingSequence(training)


def run_session_mimo(
    h_true_rows,
    h_init_rows,
    training,
    codebook: StepCodebook | None = None,
    zeta: float = 0.1,
    max_iters: int = 500,
) -> list[SessionTrace]:
    """Estimate ``n_R`` channel rows in lockstep over one feedback link.

    Each step frame carries one index per row.  The session ends once every
    row satisfies ``||H_r - H_{r,n}|| <= zeta`` or ``max_iters`` is hit; the
    latter is reported through ``converged=False``.
    """
    if not zeta > 0:
        raise ParameterError(f"zeta must be > 0, got {zeta}")
    if not 0 <= max_iters <= 0xFFFF:
        raise ParameterError("max_iters must fit the 16-bit iteration counter")
    training = _as_training(training)
    try:
        h_rows = np.array([as_vector(r, training.n_t) for r in h_true_rows])
        h0_rows = np.array([as_vector(r, training.n_t) for r in h_init_rows])
    except DimensionError as exc:
        raise DimensionError(f"ragged channel rows: {exc}") from None
    if h_rows.ndim != 2 or h_rows.shape != h0_rows.shape:
        raise DimensionError("h_true_rows and h_init_rows must both be (n_R, n_T)")
    bits = None if codebook is None else codebook.bits

    rx = ReceiverSide(h_rows, h0_rows, training, codebook, zeta)
    tx = TransmitterSide(h0_rows, training, codebook)
    messages, frames = [], []

    def send(msg, ideal=None):
        if bits is not None:
            frame = encode_message(msg, bits)
            frames.append(frame)
            msg = decode_message(frame, bits)
        messages.append(msg)
        tx.handle(msg, ideal)

    n_r = h_rows.shape[0]
    initial = rx.err_sq()
    recs: list[list[StepRecord]] = [[] for _ in range(n_r)]
    send(rx.start())
    while rx.stale() and rx.mirror.k < max_iters:
        msg, mu_opt, mu_sent = rx.step()
        send(msg, None if bits is not None else mu_sent)
        if not np.array_equal(tx.state.h_est, rx.mirror.h_est):
            raise ProtocolError("transmitter and receiver estimates diverged")
        e = rx.err_sq()
        for r in range(n_r):
            idx = msg.indices[r] if msg.indices else None
            recs[r].append(StepRecord(msg.iteration, float(mu_opt[r]), float(mu_sent[r]), float(e[r]), idx))
    converged = not rx.stale()
    send(rx.end())
    n = rx.mirror.k
    return [
        SessionTrace(float(initial[r]), recs[r], n, converged, tx.h_hat[r].copy(), messages, frames)
        for r in range(n_r)
    ]


def run_session(
    h_true,
    h_init,
    training,
    codebook: StepCodebook | None = None,
    zeta: float = 0.1,
    max_iters: int = 500,
) -> SessionTrace:
    """Single receive antenna session; see :func:`run_session_mimo`."""
    return run_session_mimo([h_true], [h_init], training, codebook, zeta, max_iters)[0]


# --------------------------------------------------------------------------
# batched sessions


@dataclass
class BatchSessions:
    """Outcome of :func:`run_sessions_batch` for ``B`` sessions of ``R`` rows.

    History arrays are present only when recording was requested; entries past
    a session's end are NaN (indices -1).
    """

    h_est: np.ndarray  # (B, R, n_T)
    iterations: np.ndarray  # (B,)
    converged: np.ndarray  # (B,)
    mu_opt: np.ndarray | None = None  # (B, K, R)
    mu_sent: np.ndarray | None = None
    indices: np.ndarray | None = None
    err_sq: np.ndarray | None = None  # (B, K + 1, R)
    estimates: np.ndarray | None = None  # (B, K + 1, R, n_T)

    def active_mu_opt(self) -> np.ndarray:
        """All step sizes actually computed, session by session, in order."""
        m = self.mu_opt
        return m[~np.isnan(m)]


def run_sessions_batch(
    h_true,
    h_init,
    training,
    zeta: float,
    max_iters: int,
    codebook: StepCodebook | None = None,
    record: bool = False,
    record_estimates: bool = False,
) -> BatchSessions:
    """Run many independent sessions with vectorised arithmetic.

    ``h_true`` and ``h_init`` are ``(B, n_T)`` or ``(B, R, n_T)``; rows of one
    session advance in lockstep exactly like :func:`run_session_mimo`.
    ``training`` is either shared ``(N, n_T)`` or per session ``(B, N, n_T)``.
    """
    if not zeta > 0:
        raise ParameterError(f"zeta must be > 0, got {zeta}")
    h_true = np.asarray(h_true, dtype=np.complex128)
    if h_true.ndim == 2:
        h_true = h_true[:, None, :]
    h_est = np.array(h_init, dtype=np.complex128).reshape(h_true.shape)
    training = np.asarray(training, dtype=np.complex128)
    shared = training.ndim == 2
    n_train = training.shape[-2]
    if training.shape[-1] != h_true.shape[-1]:
        raise DimensionError("training vectors and channel differ in length")
    if np.any(norm_sq(training) <= 0):
        raise DegenerateTrainingError("training vectors must have positive norm")
    nb, nr, _ = h_true.shape

    err = h_true - h_est
    active = np.any(np.sqrt(norm_sq(err)) > zeta, axis=1)
    iterations = np.zeros(nb, dtype=np.int64)

    hist_mu, hist_sent, hist_idx, hist_err, hist_est = [], [], [], [], []
    if record:
        hist_err.append(norm_sq(err))
    if record_estimates:
        hist_est.append(h_est.copy())

    k = 0
    while k < max_iters and active.any():
        k += 1
        rows = np.flatnonzero(active)
        if shared:
            x = np.broadcast_to(training[(k - 1) % n_train], (rows.size, training.shape[-1]))
        else:
            x = training[rows, (k - 1) % n_train]
        e = err[rows]
        r = np.sum(np.conj(x)[:, None, :] * e, axis=-1).real
        mu_opt = r / norm_sq(x)[:, None]
        if codebook is None:
            mu_sent = mu_opt
            idx = None
        else:
            idx = codebook.encode(mu_opt)
            mu_sent = codebook.decode(idx)
        h_new = h_est[rows] + mu_sent[..., None] * x[:, None, :]
        h_est[rows] = h_new
        e_new = h_true[rows] - h_new
        err[rows] = e_new
        iterations[rows] = k
        active[rows] = np.any(np.sqrt(norm_sq(e_new)) > zeta, axis=1)

        if record:
            full = np.full((nb, nr), np.nan)
            full[rows] = mu_opt
            hist_mu.append(full)
            full = np.full((nb, nr), np.nan)
            full[rows] = mu_sent
            hist_sent.append(full)
            full = np.full((nb, nr), -1, dtype=np.int64)
            if idx is not None:
                full[rows] = idx
            hist_idx.append(full)
            full = np.full((nb, nr), np.nan)
            full[rows] = norm_sq(e_new)
            hist_err.append(full)
        if record_estimates:
            full = np.full(h_est.shape, np.nan, dtype=np.complex128)
            full[rows] = h_new
            hist_est.append(full)

    out = BatchSessions(h_est, iterations, ~active)
    if record:
        empty = np.empty((nb, 0, nr))
        out.mu_opt = np.stack(hist_mu, axis=1) if hist_mu else empty
        out.mu_sent = np.stack(hist_sent, axis=1) if hist_sent else empty.copy()
        out.indices = np.stack(hist_idx, axis=1) if hist_idx else empty.astype(np.int64)
        out.err_sq = np.stack(hist_err, axis=1)
    if record_estimates:
        out.estimates = np.stack(hist_est, axis=1)
    return out


def draw_session_inputs(config: SimConfig, block: int, count: int):
    """Channel rows, initial estimates and training for ``count`` sessions.

    Returns ``(h_true, h_init, training)`` shaped ``(count, n_R, n_T)``,
    ``(count, n_R, n_T)`` and ``(count, N, n_T)``.  Each quantity comes from
    its own substream of the block so adding, say, SOBS runs never changes the
    channels the OBS baseline sees.
    """
    from .config import SUB_CHANNEL, SUB_PREVIOUS, SUB_TRAINING

    shape = (count, config.n_r, config.n_t)
    h_true = draw_complex_gaussian(config.stream(block, SUB_CHANNEL), shape, 1.0)
    if config.init_mode == "zero":
        h_init = np.zeros(shape, dtype=np.complex128)
    else:
        # the estimate left over from an independent earlier epoch
        h_init = draw_complex_gaussian(config.stream(block, SUB_PREVIOUS), shape, 1.0)
    training = draw_training(
        config.stream(block, SUB_TRAINING), config.n_t, config.n_training, config.training_kind, (count,)
    )
    return h_true, h_init, training
