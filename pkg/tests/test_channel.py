import numpy as np
import pytest

from partialfb.channel import NoiseModel, estimate_stale, new_epoch, receive
from partialfb.core import DimensionError, ParameterError, RngStream, norm_sq


def test_new_epoch_shape_and_independence(stream):
    a = new_epoch(stream, 3)
    b = new_epoch(stream, 3, a)
    assert a.h.shape == (3,)
    assert b.epoch == a.epoch + 1
    assert not np.array_equal(a.h, b.h)


def test_mean_channel_energy():
    s = RngStream(5, 0)
    energies = [norm_sq(new_epoch(s, 2).h) for _ in range(10_000)]
    assert np.mean(energies) == pytest.approx(2.0, abs=0.05)


def test_receive_noiseless_obs_gain(rng):
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    s = 0.7 - 0.7j
    t = s * h / np.sqrt(norm_sq(h))
    d = receive(h, t, None)
    assert d == pytest.approx(s * np.sqrt(norm_sq(h)), abs=1e-12)


def test_receive_selector():
    assert receive([1, 0], [2, 5], None) == 2


def test_receive_noise_calibration():
    noise = NoiseModel(0.25)
    d = receive(np.ones((100_000, 2)), np.zeros((100_000, 2)), noise, RngStream(3, 0))
    assert np.var(d) == pytest.approx(0.25, rel=0.02)


def test_receive_linear_in_t(rng):
    h = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    t1 = rng.standard_normal(2) + 0j
    t2 = 1j * rng.standard_normal(2)
    noise = NoiseModel(0.5)
    # same stream state for every call, so all three share one noise sample v
    d12 = receive(h, t1 + t2, noise, RngStream(8, 0))
    d1 = receive(h, t1, noise, RngStream(8, 0))
    d2 = receive(h, t2, noise, RngStream(8, 0))
    v = d1 - receive(h, t1, None)
    assert d12 - d1 - d2 == pytest.approx(-v, abs=1e-12)


def test_receive_dimension_mismatch():
    with pytest.raises(DimensionError):
        receive([1, 2], [1, 2, 3], None)


def test_noise_model_validation():
    with pytest.raises(ParameterError):
        NoiseModel(0.0)
    assert NoiseModel.from_tnr_db(10.0).sigma_v_sq == pytest.approx(0.1)


def test_estimate_stale():
    h = np.array([1.0 + 1j, -0.5])
    assert not estimate_stale(h, h, 0.01)
    assert estimate_stale(h, h + np.array([0.3, 0]), 0.1)
    # exactly on the threshold counts as satisfactory
    assert not estimate_stale([0.0], [0.5], 0.5)
    assert not estimate_stale([0.1], [0.0], 0.1)


def test_estimate_stale_bad_zeta():
    with pytest.raises(ParameterError):
        estimate_stale([1], [1], 0.0)
