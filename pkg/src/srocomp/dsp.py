"""STFT analysis/synthesis and small numerical helpers shared by all modules.

Shape convention: time signals are ``(channels, samples)`` (1-D input is
treated as a single channel), spectrograms are ``(channels, frames, bins)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .errors import ConfigError, DataError, EmptyInputError, NumericError, ShapeError

GOLDEN = (1 + math.sqrt(5)) / 2
_WINDOWS = ("hann", "sqrt_hann")


@dataclass(frozen=True)
class StftConfig:
    """Frame layout of a short-time Fourier transform.

    Args:
        window_size: Analysis window length in samples.
        hop_size: Frame shift in samples; must divide ``window_size``.
        window: ``"hann"`` or ``"sqrt_hann"`` (periodic).
        fft_size: DFT length, defaults to ``window_size``.
        sample_rate: Nominal sampling rate in Hz.
    """

    window_size: int = 8192
    hop_size: int = 2048
    window: str = "hann"
    fft_size: int | None = None
    sample_rate: float = 16000.0

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.window_size)
        if self.window not in _WINDOWS:
            raise ConfigError(f"window must be one of {_WINDOWS}, got {self.window!r}")
        if self.window_size <= 0 or self.hop_size <= 0:
            raise ConfigError("window_size and hop_size must be positive")
        if self.window_size % self.hop_size:
            raise ConfigError(
                f"hop_size {self.hop_size} does not divide window_size {self.window_size}")
        if self.fft_size < self.window_size:
            raise ConfigError("fft_size must be >= window_size")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        den = _overlap_sum(self.analysis_window ** 2, self.hop_size)
        if den.min() <= 1e-12 * den.max():
            raise ConfigError(
                f"{self.window} window is not invertible at hop {self.hop_size}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        """Zero padding applied at both signal ends so that every sample is
        covered by a full set of overlapping frames."""
        return self.window_size - self.hop_size

    @property
    def analysis_window(self) -> np.ndarray:
        w = get_window("hann", self.window_size, fftbins=True)
        return np.sqrt(w) if self.window == "sqrt_hann" else w

    @property
    def synthesis_window(self) -> np.ndarray:
        """Weighted overlap-add synthesis window matched to the analysis window.

        ``analysis * synthesis`` overlap-adds to exactly one at ``hop_size``.
        """
        wa = self.analysis_window
        return wa / _overlap_sum(wa ** 2, self.hop_size)

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size


def _overlap_sum(w, hop):
    """Periodic sum ``sum_r w[n + r*hop]`` tiled back to ``len(w)``."""
    folded = w.reshape(-1, hop).sum(axis=0)
    return np.tile(folded, len(w) // hop)


def cola_deviation(config: StftConfig) -> float:
    """Maximum relative deviation of the analysis*synthesis overlap-add from 1."""
    s = _overlap_sum(config.analysis_window * config.synthesis_window, config.hop_size)
    return float(np.max(np.abs(s - 1.0)))


@dataclass
class Spectrogram:
    """Complex STFT tensor with its frame layout.

    ``data`` has shape ``(channels, frames, bins)``. Frame ``l`` covers the
    samples ``start_offset + l * hop_size + [0, window_size)`` of the source
    signal, which had ``length`` samples.
    """

    data: np.ndarray
    config: StftConfig
    start_offset: int = 0
    length: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def frame_centers(self) -> np.ndarray:
        """Centre sample of every frame in source-signal coordinates."""
        cfg = self.config
        return (self.start_offset + np.arange(self.n_frames) * cfg.hop_size
                + cfg.window_size / 2)

    def frame_times(self) -> np.ndarray:
        return self.frame_centers() / self.config.sample_rate

    def channel(self, c: int) -> "Spectrogram":
        return Spectrogram(self.data[c:c + 1], self.config, self.start_offset,
                           self.length, dict(self.meta))

    def with_data(self, data) -> "Spectrogram":
        return Spectrogram(np.asarray(data), self.config, self.start_offset,
                           self.length, dict(self.meta))


@dataclass
class TimeSignal:
    """Multi-channel sampled signal, shape ``(channels, samples)``."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def __len__(self):
        return self.data.shape[1]


def as_channels(x) -> np.ndarray:
    """Return ``x`` as a float array of shape ``(channels, samples)``."""
    if isinstance(x, TimeSignal):
        x = x.data
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ShapeError(f"expected 1-D or 2-D signal, got shape {x.shape}")
    return x


def n_frames_for(length: int, config: StftConfig, pad: bool = True) -> int:
    """Number of frames :func:`stft` produces for a ``length``-sample signal."""
    if pad:
        return (length - 1 + config.pad) // config.hop_size + 1
    return (length - config.window_size) // config.hop_size + 1


def stft(x, config: StftConfig, pad: bool = True, chunk: int = 256) -> Spectrogram:
    """One-sided short-time Fourier transform.

    Args:
        x: Signal of shape ``(channels, samples)`` or ``(samples,)``.
        config: Frame layout.
        pad: Zero-pad ``window_size - hop_size`` samples in front (and enough
            at the end) so that :func:`istft` reconstructs every sample.
        chunk: Number of frames transformed per FFT call (memory bound).

    Returns:
        Spectrogram with data of shape ``(channels, frames, fft_size//2 + 1)``.
    """
    x = as_channels(x)
    length = x.shape[1]
    if length < config.window_size:
        raise EmptyInputError(
            f"signal has {length} samples, shorter than one window ({config.window_size})")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains NaN or inf")
    n_frames = n_frames_for(length, config, pad)
    hop, nw = config.hop_size, config.window_size
    front = config.pad if pad else 0
    back = (n_frames - 1) * hop + nw - front - length
    xp = np.pad(x, ((0, 0), (front, max(back, 0))))
    frames = np.lib.stride_tricks.sliding_window_view(xp, nw, axis=1)[:, ::hop][:, :n_frames]
    win = config.analysis_window
    out = np.empty((x.shape[0], n_frames, config.n_bins), dtype=complex)
    for start in range(0, n_frames, chunk):
        sl = slice(start, start + chunk)
        out[:, sl] = np.fft.rfft(frames[:, sl] * win, n=config.fft_size, axis=-1)
    return Spectrogram(out, config, start_offset=-front, length=length)


def istft(spec: Spectrogram, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft` by weighted overlap-add.

    Returns:
        Array of shape ``(channels, length)`` in source-signal coordinates
        (``length`` defaults to the length recorded in ``spec``).
    """
    cfg = spec.config
    data = np.asarray(spec.data)
    if data.ndim != 3 or data.shape[2] != cfg.n_bins:
        raise ConfigError(
            f"spectrogram shape {data.shape} inconsistent with {cfg.n_bins} bins")
    if length is None:
        length = spec.length
    if length is None:
        length = spec.start_offset + (data.shape[1] - 1) * cfg.hop_size + cfg.window_size
    hop, nw = cfg.hop_size, cfg.window_size
    n_ch, n_frames = data.shape[:2]
    total = (n_frames - 1) * hop + nw
    buf = np.zeros((n_ch, total))
    ws = cfg.synthesis_window
    for l in range(n_frames):
        seg = np.fft.irfft(data[:, l], n=cfg.fft_size, axis=-1)[:, :nw]
        buf[:, l * hop:l * hop + nw] += seg * ws
    out = np.zeros((n_ch, length))
    lo = -spec.start_offset
    src = buf[:, max(lo, 0):max(lo, 0) + length]
    dst0 = max(-lo, 0)
    out[:, dst0:dst0 + src.shape[1]] = src[:, :length - dst0]
    return out


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-3,
                       max_iter: int | None = None, full_output: bool = False):
    """Maximise a unimodal scalar function on ``[lo, hi]``.

    The bracket shrinks by the golden ratio per iteration until its width is
    at most ``2 * tol``; the midpoint is returned, so the result is within
    ``tol`` of the maximiser. With ``full_output`` the iteration count is
    returned as well.
    """
    if not lo < hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if max_iter is None:
        max_iter = math.ceil(math.log((hi - lo) / tol) / math.log(GOLDEN)) + 2
    invphi = 1 / GOLDEN
    a, b = float(lo), float(hi)
    c = b - (b - a) * invphi
    d = a + (b - a) * invphi
    fc, fd = _checked(f, c), _checked(f, d)
    it = 0
    while b - a > 2 * tol and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * invphi
            fc = _checked(f, c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * invphi
            fd = _checked(f, d)
        it += 1
    x = 0.5 * (a + b)
    return (x, it) if full_output else x


def _checked(f, x):
    v = float(f(x))
    if not math.isfinite(v):
        raise NumericError(f"objective returned {v} at x={x}")
    return v


def snr_db(reference, estimate) -> float:
    """SNR of ``estimate`` against ``reference`` in dB."""
    reference = np.asarray(reference, dtype=float)
    err = np.asarray(estimate, dtype=float) - reference
    return 10 * np.log10(np.sum(reference ** 2) / max(np.sum(err ** 2), 1e-300))
