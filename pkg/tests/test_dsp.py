"""STFT framework, golden-section search and small helpers."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from srocomp.dsp import (StftConfig, cola_deviation, golden_section_max, istft, n_frames_for,
                         snr_db, stft)
from srocomp.errors import ConfigError, DataError, EmptyInputError


@pytest.fixture
def small():
    return StftConfig(window_size=256, hop_size=64)


def test_defaults_match_reference_frame_layout():
    c = StftConfig()
    assert (c.window_size, c.hop_size, c.fft_size, c.sample_rate) == (8192, 2048, 8192, 16000)
    assert c.n_bins == 4097


@pytest.mark.parametrize("window", ["hann", "sqrt_hann"])
@pytest.mark.parametrize("hop", [64, 128])
def test_cola_holds(window, hop):
    assert cola_deviation(StftConfig(256, hop, window)) < 1e-12


def test_rejects_hop_not_dividing_window():
    with pytest.raises(ConfigError):
        StftConfig(256, 100)


def test_rejects_fft_shorter_than_window():
    with pytest.raises(ConfigError):
        StftConfig(256, 64, fft_size=128)


def test_zero_signal_gives_zero_spectrogram(small):
    spec = stft(np.zeros(2000), small)
    assert not np.any(spec.data)


def test_impulse_frame_matches_direct_dft(small):
    x = np.zeros(1024)
    x[0] = 1.0
    spec = stft(x, small, pad=False)
    window = oracles.periodic_hann(256)
    expect = oracles.dft(window * x[:256], 256)
    np.testing.assert_allclose(spec.data[0, 0], expect, atol=1e-12)
    # magnitude equals the window value at the impulse position
    np.testing.assert_allclose(np.abs(spec.data[0, 0]), window[0], atol=1e-12)


def test_frames_match_direct_dft_with_padding(small, rng):
    x = rng.standard_normal(1500)
    spec = stft(x, small)
    window = oracles.periodic_hann(256)
    for l in (0, 3, 7, spec.n_frames - 1):
        start = spec.start_offset + l * small.hop_size
        np.testing.assert_allclose(spec.data[0, l], oracles.stft_frame(x, start, window, 256),
                                   atol=1e-10)


def test_bin_centred_sinusoid_leakage_matches_brute_force(small):
    k0 = 10
    n = np.arange(2048)
    x = np.cos(2 * np.pi * k0 * n / 256)
    spec = stft(x, small, pad=False)
    frame = spec.data[0, 2]
    expect = oracles.stft_frame(x, 2 * 64, oracles.periodic_hann(256), 256)
    np.testing.assert_allclose(frame, expect, atol=1e-9)
    mag = np.abs(frame)
    assert np.argmax(mag) == k0
    # Hann mainlobe: neighbours at half the peak, nothing beyond
    np.testing.assert_allclose(mag[[k0 - 1, k0 + 1]] / mag[k0], 0.5, atol=1e-9)
    assert mag[k0 + 2] / mag[k0] < 1e-9


def test_round_trip_white_noise_exceeds_80_db(rng):
    c = StftConfig()
    x = rng.standard_normal(10 * 16000)
    y = istft(stft(x, c), x.size)[0]
    assert snr_db(x, y) >= 80


@pytest.mark.parametrize("window", ["hann", "sqrt_hann"])
def test_round_trip_is_exact_for_small_layout(window, rng):
    c = StftConfig(256, 64, window)
    x = rng.standard_normal((2, 3000))
    np.testing.assert_allclose(istft(stft(x, c), 3000), x, atol=1e-12)


def test_zero_spectrogram_inverts_to_zero(small, rng):
    spec = stft(rng.standard_normal(1000), small)
    assert not np.any(istft(spec.with_data(np.zeros_like(spec.data))))


def test_single_frame_output_is_local(small, rng):
    spec = stft(rng.standard_normal(2000), small)
    data = np.zeros_like(spec.data)
    l = 10
    data[0, l] = spec.data[0, l]
    y = istft(spec.with_data(data), 2000)[0]
    start = spec.start_offset + l * small.hop_size
    support = np.nonzero(np.abs(y) > 0)[0]
    assert support.min() >= start and support.max() < start + small.window_size


def test_parseval_per_frame(small, rng):
    x = rng.standard_normal(4000)
    spec = stft(x, small, pad=False)
    w = oracles.periodic_hann(256)
    for l in (0, 5, 20):
        seg = x[l * 64:l * 64 + 256] * w
        X = spec.data[0, l]
        energy = (np.abs(X[0]) ** 2 + 2 * np.sum(np.abs(X[1:-1]) ** 2)
                  + np.abs(X[-1]) ** 2) / 256
        assert energy == pytest.approx(np.sum(seg ** 2), rel=1e-12)


def test_frame_count_formula(small):
    for n in (256, 257, 1000, 4096):
        assert stft(np.ones(n), small).n_frames == n_frames_for(n, small)


def test_too_short_signal_is_rejected(small):
    with pytest.raises(EmptyInputError):
        stft(np.ones(100), small)


def test_non_finite_input_is_rejected(small):
    x = np.ones(1000)
    x[5] = np.nan
    with pytest.raises(DataError):
        stft(x, small)


def test_golden_section_analytic_maximum():
    x = golden_section_max(lambda v: -(v - 0.2) ** 2, -0.5, 0.5, tol=1e-4)
    assert abs(x - 0.2) <= 1e-4


def test_golden_section_constant_terminates():
    x, n = golden_section_max(lambda v: 1.0, -1.0, 1.0, tol=1e-6, full_output=True)
    assert -1.0 <= x <= 1.0
    assert n < 100


def test_golden_section_fractional_gcc_peak():
    n_fft = 512
    k = np.arange(n_fft // 2 + 1)
    P = np.exp(-2j * np.pi * k * 0.3 / n_fft)

    def gcc(b):
        w = np.full(k.size, 2.0)
        w[0] = w[-1] = 1.0
        return abs(np.dot(w, np.real(P * np.exp(2j * np.pi * k * b / n_fft))))

    grid = oracles.dense_gcc_peak(P, n_fft, -0.5, 0.5)
    x = golden_section_max(gcc, -0.5, 0.5, tol=1e-4)
    assert abs(grid - 0.3) <= 1e-4
    assert abs(x - 0.3) <= 1e-3


def test_golden_section_rejects_empty_interval():
    with pytest.raises(ValueError):
        golden_section_max(lambda v: v, 1.0, 1.0)


@given(st.floats(-10, 10), st.floats(0.01, 5))
def test_golden_section_finds_parabola_peak(c, half):
    x = golden_section_max(lambda v: -(v - c) ** 2, c - half, c + 0.7 * half, tol=1e-6)
    assert abs(x - c) <= 1e-6


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(128, 32), (256, 64), (512, 256)]))
def test_round_trip_property(seed, layout):
    c = StftConfig(*layout)
    x = np.random.default_rng(seed).standard_normal(3 * layout[0] + 17)
    np.testing.assert_allclose(istft(stft(x, c), x.size)[0], x, atol=1e-11)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_stft_is_linear(seed, a, b):
    c = StftConfig(128, 32)
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(600), r.standard_normal(600)
    lhs = stft(a * x + b * y, c).data
    rhs = a * stft(x, c).data + b * stft(y, c).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_snr_of_identical_signals_is_huge(rng):
    x = rng.standard_normal(100)
    assert snr_db(x, x) > 200
    assert math.isclose(snr_db(x, 0.9 * x), 20.0, abs_tol=1e-9)
