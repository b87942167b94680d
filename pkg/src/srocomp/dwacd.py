"""Streaming SRO estimation from the drift of a coherence function.

The coherence between the isolated loudspeaker signal ``Z`` and its playback
reference ``X`` is tracked frame by frame. The phase change of that coherence
over ``L`` frames is averaged into a phase function ``P`` whose generalized
cross-correlation (GCC) peaks at the drift accumulated over ``L`` frames:
``beta = -eps * L * N_h``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dsp import Spectrogram, golden_section_max
from .errors import AlignmentError, ConfigError, DataError, EmptyInputError, ShapeError
from .resample import PPM

TRACE_FIELDS = ("frame_index", "time_s", "raw_ppm", "smoothed_ppm", "active", "gcc_peak")


@dataclass(frozen=True)
class DwacdConfig:
    """Estimator settings.

    Args:
        temporal_distance: Frame distance ``L`` between the coherence
            functions whose phase difference is accumulated.
        alpha_s: Smoothing factor of the phase function ``P``.
        estimate_smoothing: Smoothing factor ``gamma`` of the SRO estimate.
        activity_threshold_db: A frame is active if its energy is within this
            many dB of the running peak.
        peak_decay: Per-frame decay of the running peak energy.
        psd_smoothing: Recursive smoothing factor of the coherence PSDs.
        max_lag: Largest GCC lag searched, in samples.
        golden_tol: Tolerance of the fractional lag refinement.
        warmup_frames: Active frames before the first estimate; defaults to
            ``L + 5``.
    """

    temporal_distance: int = 8
    alpha_s: float = 0.95
    estimate_smoothing: float = 0.95
    activity_threshold_db: float = 40.0
    peak_decay: float = 0.999
    psd_smoothing: float = 0.5
    max_lag: int = 50
    golden_tol: float = 1e-3
    warmup_frames: int | None = None

    def __post_init__(self):
        if int(self.temporal_distance) < 1:
            raise ConfigError(f"temporal_distance must be >= 1, got {self.temporal_distance}")
        for name in ("alpha_s", "estimate_smoothing", "psd_smoothing"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not 0 < self.peak_decay <= 1:
            raise ConfigError(f"peak_decay must lie in (0, 1], got {self.peak_decay}")
        if not self.activity_threshold_db > 0:
            raise ConfigError("activity_threshold_db must be positive")
        if int(self.max_lag) < 1:
            raise ConfigError("max_lag must be >= 1")
        if not self.golden_tol > 0:
            raise ConfigError("golden_tol must be positive")
        if self.warmup_frames is None:
            object.__setattr__(self, "warmup_frames", self.temporal_distance + 5)
        if self.warmup_frames < 0:
            raise ConfigError("warmup_frames must be >= 0")


class ActivityDetector:
    """Energy gate relative to a slowly decaying running peak.

    Args:
        threshold_db: Frames more than this far below the peak are inactive.
        decay: Factor applied to the peak energy every frame.
    """

    def __init__(self, threshold_db: float = 40.0, decay: float = 0.999):
        self.ratio = 10 ** (-threshold_db / 10)
        self.decay = decay
        self.peak = 0.0

    def __call__(self, frame) -> bool:
        energy = float(np.sum(np.abs(frame) ** 2))
        self.peak = max(self.peak * self.decay, energy)
        return energy > 0 and energy >= self.ratio * self.peak


def detect_activity(frame, state: ActivityDetector) -> bool:
    """Update ``state`` with ``frame`` and report whether the frame is active."""
    return state(frame)


class CoherenceState:
    """Recursively smoothed auto- and cross-PSDs of a signal pair."""

    def __init__(self, n_bins: int, smoothing: float = 0.5):
        self.smoothing = smoothing
        self.phi_zx = np.zeros(n_bins, dtype=complex)
        self.phi_zz = np.zeros(n_bins)
        self.phi_xx = np.zeros(n_bins)
        self.gamma = np.zeros(n_bins, dtype=complex)

    def update(self, Z, X):
        lam = self.smoothing
        self.phi_zx = lam * self.phi_zx + (1 - lam) * Z * np.conj(X)
        self.phi_zz = lam * self.phi_zz + (1 - lam) * np.abs(Z) ** 2
        self.phi_xx = lam * self.phi_xx + (1 - lam) * np.abs(X) ** 2
        den = np.sqrt(self.phi_zz * self.phi_xx)
        ok = den > 0
        gamma = np.zeros_like(self.phi_zx)
        gamma[ok] = self.phi_zx[ok] / den[ok]
        self.gamma = gamma
        return gamma


def update_coherence(Z, X, state: CoherenceState, active: bool = True) -> np.ndarray:
    """Coherence ``Phi_ZX / sqrt(Phi_ZZ Phi_XX)`` after one frame.

    Args:
        Z: Frame spectrum of the isolated loudspeaker signal.
        X: Frame spectrum of the playback reference.
        state: PSD state, updated in place.
        active: Only active frames (activity in both signals) update the PSDs;
            otherwise the previous coherence is returned unchanged.

    Returns:
        Complex coherence per bin; 0 where an auto-PSD vanishes.
    """
    Z = np.asarray(Z)
    X = np.asarray(X)
    if Z.shape != X.shape or Z.shape != state.phi_zx.shape:
        raise ShapeError(f"frame shapes {Z.shape}, {X.shape} do not match the state")
    if active:
        return state.update(Z, X)
    return state.gamma


def gcc_lag(P, fft_size: int, max_lag: int = 50, tol: float = 1e-3):
    """Lag of the GCC peak of a phase function.

    Args:
        P: One-sided phase function, bins ``0 .. fft_size // 2``.
        fft_size: DFT length.
        max_lag: Integer lags ``|beta| <= max_lag`` are searched.
        tol: Tolerance of the golden-section refinement around the best
            integer lag.

    Returns:
        ``(beta, peak)``: the refined lag in samples and ``|p(beta)|``
        normalized by ``sum_k |P[k]|`` over the full spectrum.
    """
    P = np.asarray(P)
    p = np.fft.irfft(P, n=fft_size) * fft_size
    lags = np.arange(-max_lag, max_lag + 1)
    b0 = int(lags[np.argmax(np.abs(p[lags % fft_size]))])
    def gcc(b):
        return abs(_kernels.gcc_at_lag(P, b, fft_size))

    beta = golden_section_max(gcc, b0 - 0.5, b0 + 0.5, tol)
    if gcc(b0) >= gcc(beta):
        beta = b0       # the integer lag is already the peak (e.g. no drift)
    norm = np.abs(P[0]) + 2 * np.sum(np.abs(P[1:])) - (np.abs(P[-1]) if fft_size % 2 == 0 else 0)
    peak = abs(_kernels.gcc_at_lag(P, beta, fft_size)) / norm if norm > 0 else 0.0
    return float(beta), float(peak)


@dataclass
class DwacdStep:
    """Output of one estimator frame (``raw_ppm`` is NaN when none emitted)."""

    raw_ppm: float
    smoothed_ppm: float
    active: bool
    gcc_peak: float


class DwacdEstimator:
    """Streaming estimator for one loudspeaker.

    Args:
        n_bins: One-sided bin count of the frames.
        fft_size: DFT length of the frames.
        hop_size: Frame shift ``N_h`` in samples.
        cfg: Estimator settings.
    """

    def __init__(self, n_bins: int, fft_size: int, hop_size: int,
                 cfg: DwacdConfig = DwacdConfig()):
        if n_bins != fft_size // 2 + 1:
            raise ConfigError(f"{n_bins} bins inconsistent with fft_size {fft_size}")
        self.cfg = cfg
        self.fft_size = fft_size
        self.hop_size = hop_size
        self.coherence = CoherenceState(n_bins, cfg.psd_smoothing)
        self.detect_z = ActivityDetector(cfg.activity_threshold_db, cfg.peak_decay)
        self.detect_x = ActivityDetector(cfg.activity_threshold_db, cfg.peak_decay)
        L = cfg.temporal_distance
        self._gammas = np.zeros((L + 1, n_bins), dtype=complex)
        self._fresh = np.zeros(L + 1, dtype=bool)
        self.P = np.zeros(n_bins, dtype=complex)
        self.frame = 0
        self.n_active = 0
        self.n_updates = 0
        self.smoothed = 0.0
        self.ready = False

    def update(self, Z, X, gate: bool = True) -> DwacdStep:
        """Process one frame pair and return the current estimate.

        ``gate=False`` forces the frame to count as inactive (used for frames
        that straddle a change of the beamformer input); the activity
        detectors still see it.
        """
        cfg = self.cfg
        L = cfg.temporal_distance
        active_z = self.detect_z(Z)
        active_x = self.detect_x(X)
        active = active_z and active_x and gate
        gamma = update_coherence(Z, X, self.coherence, active)
        slot = self.frame % (L + 1)
        old = (self.frame - L) % (L + 1)
        self._gammas[slot] = gamma
        self._fresh[slot] = active
        self.frame += 1
        raw, peak = math.nan, math.nan
        if active:
            self.n_active += 1
            if self.frame > L and self._fresh[old]:
                beta, peak = dwacd_update(self, gamma, self._gammas[old])
                if self.n_active > cfg.warmup_frames:
                    raw = -beta / (L * self.hop_size) / PPM
                    g = cfg.estimate_smoothing
                    self.smoothed = g * self.smoothed + (1 - g) * raw
                    self.ready = True
        return DwacdStep(raw, self.smoothed, active, peak)


def dwacd_update(state: DwacdEstimator, gamma_new, gamma_old):
    """Fold one coherence pair ``L`` frames apart into the phase function.

    ``P = alpha_s P + (1 - alpha_s) Gamma[l] conj(Gamma[l - L])`` and the
    lag of its GCC peak is located (integer search, then golden section).

    Returns:
        ``(beta, peak)`` as from :func:`gcc_lag`. The raw SRO estimate is
        ``-beta / (L * N_h)``.
    """
    a = state.cfg.alpha_s
    state.P = a * state.P + (1 - a) * np.asarray(gamma_new) * np.conj(gamma_old)
    state.n_updates += 1
    return gcc_lag(state.P, state.fft_size, state.cfg.max_lag, state.cfg.golden_tol)


@dataclass
class SroTrace:
    """Per-frame SRO estimates of one loudspeaker (all arrays of equal length)."""

    frame_index: np.ndarray
    time_s: np.ndarray
    raw_ppm: np.ndarray
    smoothed_ppm: np.ndarray
    active: np.ndarray
    gcc_peak: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.time_s = np.asarray(self.time_s, dtype=float)
        self.raw_ppm = np.asarray(self.raw_ppm, dtype=float)
        self.smoothed_ppm = np.asarray(self.smoothed_ppm, dtype=float)
        self.active = np.asarray(self.active, dtype=bool)
        self.gcc_peak = np.asarray(self.gcc_peak, dtype=float)
        n = self.frame_index.size
        for name in TRACE_FIELDS[1:]:
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"trace field {name} has {getattr(self, name).shape}, "
                                 f"expected ({n},)")

    def __len__(self):
        return self.frame_index.size

    def value_at(self, t: float) -> float:
        """Smoothed estimate of the last frame centred at or before ``t``."""
        i = np.searchsorted(self.time_s, t, side="right") - 1
        return float(self.smoothed_ppm[i]) if i >= 0 else 0.0

    def to_csv(self, path: str):
        """Write the documented CSV layout; floats are written with ``repr``
        so that :meth:`from_csv` reproduces them exactly."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(TRACE_FIELDS)
            for i in range(len(self)):
                w.writerow([int(self.frame_index[i]), repr(float(self.time_s[i])),
                            repr(float(self.raw_ppm[i])), repr(float(self.smoothed_ppm[i])),
                            int(self.active[i]), repr(float(self.gcc_peak[i]))])

    @classmethod
    def from_csv(cls, path: str) -> "SroTrace":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows or tuple(rows[0]) != TRACE_FIELDS:
            raise DataError(f"{path}: expected header {','.join(TRACE_FIELDS)}")
        cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(TRACE_FIELDS)
        return cls(np.array([int(v) for v in cols[0]], dtype=np.int64),
                   np.array([float(v) for v in cols[1]]),
                   np.array([float(v) for v in cols[2]]),
                   np.array([float(v) for v in cols[3]]),
                   np.array([v == "1" for v in cols[4]], dtype=bool),
                   np.array([float(v) for v in cols[5]]))


def run_dwacd(Z: Spectrogram, X: Spectrogram, cfg: DwacdConfig = DwacdConfig()) -> SroTrace:
    """Estimate the SRO of ``Z`` relative to ``X`` over a whole recording.

    Args:
        Z: Single-channel spectrogram of the isolated loudspeaker signal.
        X: Single-channel spectrogram of its playback, frame-aligned with ``Z``.
        cfg: Estimator settings.

    Returns:
        :class:`SroTrace` with one entry per frame.
    """
    if Z.n_frames != X.n_frames or Z.config != X.config:
        raise AlignmentError(f"spectrograms not frame-aligned: {Z.n_frames} vs {X.n_frames} "
                             f"frames")
    if Z.n_channels != 1 or X.n_channels != 1:
        raise ShapeError("run_dwacd expects single-channel spectrograms")
    if Z.n_frames == 0:
        raise EmptyInputError("no frames")
    c = Z.config
    est = DwacdEstimator(c.n_bins, c.fft_size, c.hop_size, cfg)
    steps = [est.update(Z.data[0, l], X.data[0, l]) for l in range(Z.n_frames)]
    return SroTrace(np.arange(Z.n_frames), Z.frame_times(),
                    [s.raw_ppm for s in steps], [s.smoothed_ppm for s in steps],
                    [s.active for s in steps], [s.gcc_peak for s in steps])
