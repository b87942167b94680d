"""Coherence-drift SRO estimator."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from srocomp.dsp import StftConfig, stft
from srocomp.dwacd import (ActivityDetector, CoherenceState, DwacdConfig, DwacdEstimator,
                           SroTrace, detect_activity, dwacd_update, gcc_lag, run_dwacd,
                           update_coherence)
from srocomp.errors import AlignmentError, ConfigError, DataError, ShapeError
from srocomp.resample import apply_sro

FS = 16000
N_FFT = 8192
K = np.arange(N_FFT // 2 + 1)


def ramp(beta):
    return np.exp(-2j * np.pi * K * beta / N_FFT)


def estimator(**kw):
    return DwacdEstimator(N_FFT // 2 + 1, N_FFT, 2048, DwacdConfig(**kw))


# ------------------------------------------------------------ coherence

def test_self_coherence_is_one(rng):
    s = CoherenceState(65)
    for _ in range(30):
        z = rng.standard_normal(65) + 1j * rng.standard_normal(65)
        g = update_coherence(z, z, s)
    np.testing.assert_allclose(g, 1, atol=1e-12)


def test_independent_noise_is_incoherent(rng):
    s = CoherenceState(257, smoothing=0.99)
    for _ in range(3000):
        z = rng.standard_normal(257) + 1j * rng.standard_normal(257)
        x = rng.standard_normal(257) + 1j * rng.standard_normal(257)
        g = update_coherence(z, x, s)
    assert np.mean(np.abs(g)) <= 0.1


def test_delay_phase_of_coherence(rng):
    c = StftConfig()
    x = rng.standard_normal(20 * FS)
    tau = 5
    z = np.r_[np.zeros(tau), x[:-tau]]
    Z, X = stft(z, c).data[0], stft(x, c).data[0]
    s = CoherenceState(c.n_bins, smoothing=0.95)     # long average: steady state
    for l in range(Z.shape[0]):
        g = update_coherence(Z[l], X[l], s)
    mid = (K > 400) & (K < 3700)
    err = np.angle(g * np.exp(2j * np.pi * K * tau / N_FFT))[mid]
    assert np.max(np.abs(err)) <= 0.05


@given(st.integers(0, 2 ** 32 - 1))
def test_coherence_magnitude_bounded(seed):
    r = np.random.default_rng(seed)
    s = CoherenceState(33, smoothing=float(r.uniform(0.05, 0.95)))
    for _ in range(20):
        scale = 10 ** r.uniform(-6, 6, size=2)
        z = scale[0] * (r.standard_normal(33) + 1j * r.standard_normal(33))
        x = scale[1] * (r.standard_normal(33) + 1j * r.standard_normal(33))
        assert np.max(np.abs(update_coherence(z, x, s))) <= 1 + 1e-9


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_coherence_is_gain_invariant(seed, a, b):
    r = np.random.default_rng(seed)
    s1, s2 = CoherenceState(17), CoherenceState(17)
    for _ in range(10):
        z = r.standard_normal(17) + 1j * r.standard_normal(17)
        x = r.standard_normal(17) + 1j * r.standard_normal(17)
        g1 = update_coherence(z, x, s1)
        g2 = update_coherence(a * z, b * x, s2)
    np.testing.assert_allclose(g1, g2, atol=1e-9)


def test_zero_auto_psd_gives_zero_coherence():
    s = CoherenceState(4)
    g = update_coherence(np.array([1, 0, 1, 0j]), np.array([1, 1, 0, 0j]), s)
    np.testing.assert_array_equal(g, [1, 0, 0, 0])


def test_inactive_frame_holds_coherence(rng):
    s = CoherenceState(9)
    z = rng.standard_normal(9) + 0j
    g = update_coherence(z, z, s).copy()
    np.testing.assert_array_equal(update_coherence(-z, z, s, active=False), g)


def test_frame_shape_checked():
    with pytest.raises(ShapeError):
        update_coherence(np.ones(4), np.ones(5), CoherenceState(4))


# ------------------------------------------------------------ activity

def test_activity_detection():
    d = ActivityDetector(threshold_db=40.0)
    assert not detect_activity(np.zeros(8), d)
    assert detect_activity(np.ones(8), d)                       # at the running peak
    assert detect_activity(np.full(8, 10 ** (-30 / 20)), d)     # -30 dB
    assert not detect_activity(np.full(8, 10 ** (-60 / 20)), d)  # -60 dB


def test_running_peak_decays():
    d = ActivityDetector(threshold_db=10.0, decay=0.5)
    d(np.ones(4))
    quiet = np.full(4, 10 ** (-20 / 20))
    assert not d(quiet)
    for _ in range(10):
        d(np.zeros(4))
    assert d(quiet)


# ------------------------------------------------------------ GCC lag

@pytest.mark.parametrize("beta0", [0.0, 3.0, 2.4, -7.6])
def test_constructed_phase_ramp_lag(beta0):
    beta, peak = gcc_lag(ramp(beta0), N_FFT)
    assert abs(beta - beta0) <= 0.01
    assert peak == pytest.approx(1.0, abs=1e-3)


def test_fractional_lag_agrees_with_dense_grid():
    P = ramp(2.4)
    grid = oracles.dense_gcc_peak(P, N_FFT, 1.5, 3.5, step=1e-4)
    assert abs(grid - 2.4) <= 1e-4
    assert abs(gcc_lag(P, N_FFT)[0] - grid) <= 0.01


@pytest.mark.parametrize("beta0", [0.0, 3.0, 2.4, -7.6])
def test_update_emits_raw_estimate(beta0):
    est = estimator(alpha_s=0.5)
    g_old = np.ones(K.size, complex)
    beta, _ = dwacd_update(est, ramp(beta0) * g_old, g_old)
    assert abs(beta - beta0) <= 0.01
    eps = -beta / (8 * 2048)
    assert abs(eps - (-beta0 / (8 * 2048))) <= 0.01 / (8 * 2048)


def test_no_drift_peaks_at_zero():
    est = estimator()
    g = np.exp(1j * np.linspace(0, 3, K.size))
    beta, peak = dwacd_update(est, g, g)
    assert abs(beta) <= 1e-3
    assert np.all(np.abs(np.angle(est.P[1:])) < 1e-12)


def test_quantization_floor():
    # golden tolerance 1e-3 lag over L * N_h = 16384 samples
    assert 1e-3 / (8 * 2048) / 1e-6 <= 0.07


def test_positive_offset_gives_negative_lag():
    # a fast device (eps > 0) advances Z against X
    est = estimator()
    eps = 100e-6
    beta, _ = dwacd_update(est, ramp(-eps * 8 * 2048), np.ones(K.size))
    assert beta < 0
    # within the quantization of a 1e-3 lag tolerance
    assert -beta / (8 * 2048) == pytest.approx(eps, abs=1e-3 / (8 * 2048))


# ------------------------------------------------------------ streaming

def test_identical_signals_give_zero_trace(rng):
    c = StftConfig()
    X = stft(rng.standard_normal(15 * FS), c)
    tr = run_dwacd(X, X)
    cfg = DwacdConfig()
    assert np.all(np.isnan(tr.raw_ppm[:cfg.warmup_frames]))
    assert np.max(np.abs(tr.smoothed_ppm)) <= 1e-3


@pytest.mark.parametrize("eps", [10.0, 50.0, 100.0])
def test_clean_estimate_converges(eps):
    x = np.random.default_rng(11).standard_normal(31 * FS)
    c = StftConfig()
    z = apply_sro(x, eps)
    n = z.size
    tr = run_dwacd(stft(z, c), stft(x[:n], c))
    assert abs(tr.value_at(30.0) - eps) <= 0.5


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_trace_is_gain_invariant(seed, gain):
    c = StftConfig(1024, 256)
    r = np.random.default_rng(seed)
    x = r.standard_normal(4 * FS)
    z = np.roll(x, 3)
    cfg = DwacdConfig(warmup_frames=2)
    a = run_dwacd(stft(z, c), stft(x, c), cfg)
    b = run_dwacd(stft(gain * z, c), stft(x, c), cfg)
    np.testing.assert_allclose(a.smoothed_ppm, b.smoothed_ppm, atol=1e-9)


def test_smoothed_trace_holds_on_inactive_frames(rng):
    c = StftConfig()
    x = rng.standard_normal(20 * FS)
    x[10 * FS:12 * FS] = 0
    X = stft(x, c)
    Z = stft(np.roll(x, 2), c)
    tr = run_dwacd(Z, X)
    s = tr.smoothed_ppm
    changed = np.nonzero(np.diff(s))[0] + 1
    assert np.all(tr.active[changed])
    assert not tr.active.all()


def test_gate_forces_inactive(rng):
    est = estimator()
    z = rng.standard_normal(K.size) + 0j
    step = est.update(z, z, gate=False)
    assert not step.active and math.isnan(step.raw_ppm)
    assert est.update(z, z).active


def test_run_dwacd_checks_alignment(rng):
    c = StftConfig(256, 64)
    a = stft(rng.standard_normal(3000), c)
    b = stft(rng.standard_normal(4000), c)
    with pytest.raises(AlignmentError):
        run_dwacd(a, b)
    with pytest.raises(ShapeError):
        two = stft(rng.standard_normal((2, 3000)), c)
        run_dwacd(two, two)


def test_config_validation():
    with pytest.raises(ConfigError):
        DwacdConfig(temporal_distance=0)
    with pytest.raises(ConfigError):
        DwacdConfig(alpha_s=1.0)
    assert DwacdConfig(temporal_distance=4).warmup_frames == 9
    with pytest.raises(ConfigError):
        DwacdEstimator(100, 8192, 2048)


# ------------------------------------------------------------ trace IO

def test_trace_csv_round_trip(tmp_path):
    tr = SroTrace(np.arange(4), [0.1, 0.2, 0.3, 1 / 3], [math.nan, 1.5, -2.25, 1e-17],
                  [0.0, 0.075, 0.1 / 3, 7.0], [False, True, True, False],
                  [math.nan, 0.5, 0.9, 0.123456789012345])
    p = str(tmp_path / "t.csv")
    tr.to_csv(p)
    back = SroTrace.from_csv(p)
    for name in ("frame_index", "time_s", "raw_ppm", "smoothed_ppm", "active", "gcc_peak"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))
    assert back.value_at(0.25) == 0.075
    assert back.value_at(0.0) == 0.0


def test_trace_csv_header_checked(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("x\n")
    with pytest.raises(DataError):
        SroTrace.from_csv(str(p))


def test_trace_field_lengths_checked():
    with pytest.raises(ShapeError):
        SroTrace([0, 1], [0.0], [0.0, 0], [0.0, 0], [True, True], [0.0, 0])
