import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialfb.config import SimConfig
from partialfb.core import DimensionError, ParameterError, ProtocolError, RngStream, draw_complex_gaussian
from partialfb.estimator import (
    DegenerateTrainingError,
    EstimatorState,
    Phase,
    TrainingSequence,
    TransmitterSide,
    admissible_interval,
    apply_step,
    draw_session_inputs,
    draw_training,
    optimal_step,
    run_session,
    run_session_mimo,
    run_sessions_batch,
)
from partialfb.feedback import MessageKind, decode_message
from partialfb.quantizer import design_codebook

from conftest import crandn


def direct_err_sq(h, h_prev, x, mu):
    """Oracle: form H_k = H_{k-1} + mu X_k and measure ||H - H_k||^2 term by term."""
    return sum(abs(complex(a) - (complex(b) + mu * complex(c))) ** 2 for a, b, c in zip(h, h_prev, x))


def estimating(h):
    return EstimatorState(np.asarray(h, dtype=complex)).start()


# ---------------------------------------------------------------- optimal step


def test_converged_fixed_point(rng):
    h = crandn(rng, 3)
    res = optimal_step(h, h, crandn(rng, 3))
    assert res.mu_opt == 0 and res.predicted_error_sq == 0


def test_residual_parallel_to_training(rng):
    x = crandn(rng, 3)
    h_est = crandn(rng, 3)
    res = optimal_step(h_est + 0.37 * x, h_est, x)
    assert res.mu_opt == pytest.approx(0.37, abs=1e-12)
    assert res.predicted_error_sq == pytest.approx(0, abs=1e-12)


@settings(max_examples=500, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_error_identity_matches_direct_evaluation(n, seed):
    rng = np.random.default_rng(seed)
    h, h_prev, x = crandn(rng, n), crandn(rng, n), crandn(rng, n)
    res = optimal_step(h, h_prev, x)
    assert direct_err_sq(h, h_prev, x, res.mu_opt) == pytest.approx(res.predicted_error_sq, abs=1e-12)
    state = apply_step(estimating(h_prev), x, res.mu_opt)
    assert np.sum(np.abs(h - state.h_est) ** 2) == pytest.approx(res.predicted_error_sq, abs=1e-12)


def test_optimal_step_minimises_error(rng):
    h, h_prev, x = crandn(rng, 4), crandn(rng, 4), crandn(rng, 4)
    mu = optimal_step(h, h_prev, x).mu_opt
    grid = mu + np.linspace(-1, 1, 2001)
    errs = [direct_err_sq(h, h_prev, x, m) for m in grid]
    assert grid[int(np.argmin(errs))] == pytest.approx(mu, abs=1e-3)


def test_optimal_step_vectorised(rng):
    h, h_prev, x = crandn(rng, 50, 3), crandn(rng, 50, 3), crandn(rng, 50, 3)
    res = optimal_step(h, h_prev, x)
    for i in range(50):
        single = optimal_step(h[i], h_prev[i], x[i])
        assert res.mu_opt[i] == single.mu_opt


def test_optimal_step_errors():
    with pytest.raises(DegenerateTrainingError):
        optimal_step([1, 2], [0, 0], [0, 0])
    with pytest.raises(DimensionError):
        optimal_step([1, 2], [0, 0], [1, 0, 0])


# ---------------------------------------------------------------- interval


def _instance_with_mu(mu_star, rng):
    """Build (h, h_prev, x) whose optimal step is exactly ``mu_star``."""
    x = np.array([1.0 + 0j, 0.0])
    h_prev = crandn(rng, 2)
    h = h_prev + np.array([mu_star, 0.3j])
    return h, h_prev, x


def test_interval_examples(rng):
    assert admissible_interval(*_instance_with_mu(0.5, rng)) == pytest.approx((0.0, 1.0))
    assert admissible_interval(*_instance_with_mu(-0.5, rng)) == pytest.approx((-1.0, 0.0))
    lo, hi = admissible_interval(*_instance_with_mu(0.0, rng))
    assert lo == hi == 0.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_interval_decides_descent(n, seed, frac):
    rng = np.random.default_rng(seed)
    h, h_prev, x = crandn(rng, n), crandn(rng, n), crandn(rng, n)
    lo, hi = admissible_interval(h, h_prev, x)
    base = direct_err_sq(h, h_prev, x, 0.0)
    mu = lo + frac * (hi - lo)
    new = direct_err_sq(h, h_prev, x, mu)
    margin = 1e-9 * max(1.0, base)
    if lo + 1e-6 * (hi - lo) < mu < hi - 1e-6 * (hi - lo):
        assert new < base
    elif mu < lo - 1e-6 * (hi - lo) or mu > hi + 1e-6 * (hi - lo):
        assert new > base - margin


# ---------------------------------------------------------------- state machine


def test_apply_step_examples():
    s = apply_step(estimating([0]), [1], 1.0)
    np.testing.assert_array_equal(s.h_est, [1])
    assert s.k == 1
    s0 = estimating([2 + 1j, 3])
    s1 = apply_step(s0, [1, 1], 0.0)
    np.testing.assert_array_equal(s1.h_est, s0.h_est)
    assert s1.k == 1


def test_phase_transitions():
    s = EstimatorState(np.zeros(2, dtype=complex))
    assert s.phase is Phase.IDLE
    with pytest.raises(ProtocolError):
        apply_step(s, [1, 0], 0.1)
    with pytest.raises(ProtocolError):
        s.end()
    s = s.start()
    assert s.phase is Phase.ESTIMATING and s.k == 0
    with pytest.raises(ProtocolError):
        s.start()
    s = s.end()
    with pytest.raises(ProtocolError):
        apply_step(s, [1, 0], 0.1)
    assert s.reset().phase is Phase.IDLE


def test_apply_step_rejects_nonfinite():
    with pytest.raises(ParameterError):
        apply_step(estimating([0, 0]), [1, 0], np.nan)


def test_training_sequence_validation():
    with pytest.raises(DegenerateTrainingError):
        TrainingSequence(np.array([[1, 0], [0, 0]]))
    t = TrainingSequence(np.eye(2))
    np.testing.assert_array_equal(t.vector(3), [1, 0])  # cyclic reuse


def test_pn_training_is_unit_modulus():
    x = draw_training(RngStream(1), 3, 100, "pn")
    np.testing.assert_allclose(np.abs(x), 1.0)
    assert abs(np.mean(x)) < 0.1


# ---------------------------------------------------------------- sessions


def test_session_already_converged(rng):
    h = crandn(rng, 2)
    tr = run_session(h, h, crandn(rng, 8, 2), None, 0.1)
    assert tr.n == 0 and tr.converged and tr.records == []
    assert [m.kind for m in tr.messages] == [MessageKind.START, MessageKind.END]


def test_scalar_one_step():
    tr = run_session([1.0], [0.0], [[1.0]], None, 0.1)
    assert tr.n == 1 and tr.converged
    np.testing.assert_allclose(tr.h_final, [1.0])


def test_unquantized_session_descends():
    for t in range(200):
        s = RngStream(2024, t)
        h = draw_complex_gaussian(s, 2, 1.0)
        x = draw_training(s, 2, 128, "gaussian")
        tr = run_session(h, np.zeros(2), x, None, 0.1, 500)
        assert tr.converged
        assert np.all(np.diff(tr.err_sq) < 0)
        assert np.sqrt(tr.err_sq[-1]) <= 0.1 < np.sqrt(tr.err_sq[-2])
        assert [m.kind for m in tr.messages] == [MessageKind.START] + [MessageKind.STEP] * tr.n + [MessageKind.END]


def test_median_iterations_regression():
    # pinned from the first run: 1000 sessions, n_T = 2, CN(0,1) training, zeta = 0.1
    ns = []
    for t in range(1000):
        s = RngStream(2024, t)
        h = draw_complex_gaussian(s, 2, 1.0)
        x = draw_training(s, 2, 128, "gaussian")
        ns.append(run_session(h, np.zeros(2), x, None, 0.1, 500).n)
    assert np.median(ns) == 14


def test_non_convergence_is_reported():
    tr = run_session([1.0 + 1j, 1.0], [0, 0], [[1, 0], [0, 1]], None, 0.1, 1)
    assert not tr.converged and tr.n == 1
    assert tr.messages[-1].kind == MessageKind.END and tr.messages[-1].iteration == 1


def test_quantized_session_frames_and_coherence(rng):
    cb = design_codebook(rng.standard_normal(20_000) * 0.4, 3)
    h = crandn(rng, 3)
    tr = run_session(h, np.zeros(3), draw_training(RngStream(4), 3, 192), cb, 0.1, 500)
    assert tr.converged
    steps = [decode_message(f, 3) for f in tr.frames[1:-1]]
    assert [m.indices[0] for m in steps] == [r.index for r in tr.records]
    for r in tr.records:
        assert r.mu_sent == cb.levels[r.index]
    # replaying the frames alone on a fresh transmitter reproduces H_n bit for bit
    train = TrainingSequence(draw_training(RngStream(4), 3, 192))
    tx = TransmitterSide(np.zeros(3), train, cb)
    for f in tr.frames:
        tx.handle(decode_message(f, 3))
    np.testing.assert_array_equal(tx.h_hat[0], tr.h_final)
    assert np.sqrt(tr.err_sq[-1]) <= 0.1


def test_trace_csv(rng):
    tr = run_session(crandn(rng, 2), np.zeros(2), crandn(rng, 32, 2), None, 0.2)
    text = tr.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "k,mu_opt,mu_sent,err_sq"
    assert len(lines) == tr.n + 2
    buf = io.StringIO()
    tr.to_csv(buf)
    assert buf.getvalue() == text


def test_bad_zeta():
    with pytest.raises(ParameterError):
        run_session([1.0], [0.0], [[1.0]], None, 0.0)


# ---------------------------------------------------------------- MIMO


def test_mimo_single_row_matches_miso(rng):
    h, x = crandn(rng, 3), crandn(rng, 64, 3)
    a = run_session(h, np.zeros(3), x, None, 0.1)
    (b,) = run_session_mimo([h], [np.zeros(3)], x, None, 0.1)
    assert a.records == b.records and a.n == b.n


def test_mimo_identical_rows(rng):
    h, x = crandn(rng, 2), crandn(rng, 64, 2)
    a, b = run_session_mimo([h, h], [np.zeros(2)] * 2, x, None, 0.1)
    assert a.records == b.records


def test_mimo_rows_descend_and_all_converge(rng):
    rows = crandn(rng, 3, 2)
    cb = design_codebook(rng.standard_normal(10_000) * 0.4, 3)
    traces = run_session_mimo(rows, np.zeros((3, 2)), crandn(rng, 128, 2), None, 0.1)
    for tr in traces:
        assert np.all(np.diff(tr.err_sq) <= 0)
        assert np.sqrt(tr.err_sq[-1]) <= 0.1
    q = run_session_mimo(rows, np.zeros((3, 2)), crandn(rng, 128, 2), cb, 0.1)
    step = decode_message(q[0].frames[1], 3)
    assert len(step.indices) == 3


def test_mimo_ragged_rows():
    with pytest.raises(DimensionError):
        run_session_mimo([[1, 2], [1, 2, 3]], [[0, 0], [0, 0]], np.eye(2), None, 0.1)


# ---------------------------------------------------------------- batch engine


@pytest.mark.parametrize("quantized", [False, True])
@pytest.mark.parametrize("n_r", [1, 2])
def test_batch_matches_reference(quantized, n_r):
    cfg = SimConfig(n_t=3, n_r=n_r)
    h, h0, train = draw_session_inputs(cfg, 0, 60)
    cb = design_codebook(np.random.default_rng(1).standard_normal(5000) * 0.3, 3) if quantized else None
    batch = run_sessions_batch(h, h0, train, 0.1, 500, cb, record=True)
    for i in range(60):
        traces = run_session_mimo(h[i], h0[i], train[i], cb, 0.1, 500)
        assert batch.iterations[i] == traces[0].n
        assert batch.converged[i] == traces[0].converged
        for r, tr in enumerate(traces):
            np.testing.assert_array_equal(batch.h_est[i, r], tr.h_final)
            np.testing.assert_array_equal(batch.mu_opt[i, : tr.n, r], tr.mu_opt)
            np.testing.assert_array_equal(batch.err_sq[i, : tr.n + 1, r], tr.err_sq)


def test_batch_shared_training_and_estimates(rng):
    h = crandn(rng, 10, 2)
    res = run_sessions_batch(h, np.zeros_like(h), crandn(rng, 64, 2), 0.1, 500, record_estimates=True)
    assert res.converged.all()
    for i in range(10):
        n = res.iterations[i]
        np.testing.assert_array_equal(res.estimates[i, n, 0], res.h_est[i, 0])
        assert np.all(np.isnan(res.estimates[i, n + 1 :]))
