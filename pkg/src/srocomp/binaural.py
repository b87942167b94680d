"""Interaural time difference (ITD) and interaural coherence (IC) maps.

Both cues are computed per auditory band and per block from the cross-spectrum
of the two ear signals. Band ``b`` weights the spectrum with the squared
magnitude response of a 4th-order gammatone filter, which makes the
cross-spectrum that of the two band-passed signals. Its inverse transform,
restricted to positive frequencies, is the analytic interaural
cross-correlation ``c(tau)``. The IC is the peak of ``|c|`` within the
+-1 ms search window; the ITD is the lag of the fine-structure peak of
``Re c`` closest to that envelope peak, refined to sub-sample precision from
the phase of ``c``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import freqz, gammatone

from .dsp import as_channels
from .errors import DataError, ShapeError

MAP_FIELDS = ("band_hz", "time_s", "ic", "itd_s", "reliable")


def erb_space(low: float = 100.0, high: float = 7500.0, n: int = 24) -> np.ndarray:
    """``n`` centre frequencies uniformly spaced on the ERB-rate scale."""
    def rate(f):
        return 21.4 * np.log10(1 + 0.00437 * f)

    def inv(e):
        return (10 ** (e / 21.4) - 1) / 0.00437
    return inv(np.linspace(rate(low), rate(high), n))


@dataclass(frozen=True)
class BandSpec:
    """Analysis grid of the cue maps.

    Args:
        centers: Band centre frequencies in Hz.
        block_len: Block length in seconds.
        overlap: Fractional block overlap.
        max_itd: Half width of the lag search window in seconds.
        min_peak: Normalized correlation peak below which an ITD is
            unreliable.
    """

    centers: tuple = tuple(erb_space())
    block_len: float = 1.0
    overlap: float = 0.5
    max_itd: float = 1e-3
    min_peak: float = 0.1


@dataclass
class CueMap:
    """IC and ITD per band (rows) and block (columns).

    ``ic`` is NaN for blocks where either ear is silent; ``itd`` is NaN there
    as well. ``reliable`` is false for silent blocks, for correlation peaks
    below the threshold and for saturated ITDs (peak at the window edge),
    which ``saturated`` marks separately.
    """

    ic: np.ndarray
    itd: np.ndarray
    reliable: np.ndarray
    saturated: np.ndarray
    band_centers: np.ndarray
    block_times: np.ndarray

    @property
    def shape(self):
        return self.ic.shape

    def to_csv(self, path: str):
        """Long table ``band_hz, time_s, ic, itd_s, reliable``."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(MAP_FIELDS)
            for b, fc in enumerate(self.band_centers):
                for t, ts in enumerate(self.block_times):
                    w.writerow([repr(float(fc)), repr(float(ts)), repr(float(self.ic[b, t])),
                                repr(float(self.itd[b, t])), int(self.reliable[b, t])])

    @classmethod
    def from_csv(cls, path: str) -> "CueMap":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows or tuple(rows[0]) != MAP_FIELDS:
            raise DataError(f"{path}: expected header {','.join(MAP_FIELDS)}")
        body = rows[1:]
        bands = np.array(sorted({float(r[0]) for r in body}))
        times = np.array(sorted({float(r[1]) for r in body}))
        shape = (bands.size, times.size)
        ic, itd = np.full(shape, np.nan), np.full(shape, np.nan)
        rel = np.zeros(shape, dtype=bool)
        bi = {v: i for i, v in enumerate(bands)}
        ti = {v: i for i, v in enumerate(times)}
        for r in body:
            i, j = bi[float(r[0])], ti[float(r[1])]
            ic[i, j], itd[i, j], rel[i, j] = float(r[2]), float(r[3]), r[4] == "1"
        return cls(ic, itd, rel, np.zeros(shape, dtype=bool), bands, times)

    def to_grid(self, path: str, field: str = "ic"):
        """Matrix text file for plotting: the first row holds the block times,
        every further row a band centre followed by that band's values."""
        values = getattr(self, field)
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# {field}: rows band_hz, columns time_s\n")
            f.write("nan " + " ".join(repr(float(t)) for t in self.block_times) + "\n")
            for fc, row in zip(self.band_centers, values):
                f.write(repr(float(fc)) + " " + " ".join(repr(float(v)) for v in row) + "\n")


def _band_weights(centers, n_fft, fs):
    """Squared gammatone magnitude responses, shape ``(bands, n_fft//2 + 1)``,
    each normalized to unit peak."""
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    out = np.empty((len(centers), freqs.size))
    for i, fc in enumerate(centers):
        b, a = gammatone(fc, "iir", fs=fs)
        _, h = freqz(b, a, worN=freqs, fs=fs)
        p = np.abs(h) ** 2
        out[i] = p / p.max()
    return out


def _block_starts(n, block, hop):
    if n < block:
        return np.zeros(0, dtype=int)
    return np.arange(0, n - block + 1, hop)


def cue_map(bL, bR, bands: BandSpec = BandSpec(), sample_rate: float = 16000.0) -> CueMap:
    """IC and ITD maps of an ear-signal pair.

    Args:
        bL: Left ear signal.
        bR: Right ear signal, same length.
        bands: Band and block grid.
        sample_rate: Sampling rate in Hz.

    Returns:
        :class:`CueMap`; ``itd > 0`` means the right ear lags the left.
    """
    left = as_channels(bL)[0]
    right = as_channels(bR)[0]
    if left.shape != right.shape:
        raise ShapeError(f"ear signals differ in length: {left.size} vs {right.size}")
    fs = float(sample_rate)
    block = int(round(bands.block_len * fs))
    hop = max(1, int(round(block * (1 - bands.overlap))))
    max_lag = int(math.floor(bands.max_itd * fs))
    n_fft = 1 << int(math.ceil(math.log2(block + max_lag + 1)))
    weights = _band_weights(bands.centers, n_fft, fs)
    weights[:, 1:-1] *= 2          # one-sided sums covering the full spectrum
    starts = _block_starts(left.size, block, hop)
    n_bands, n_blocks = len(bands.centers), starts.size
    ic = np.full((n_bands, n_blocks), np.nan)
    itd = np.full((n_bands, n_blocks), np.nan)
    reliable = np.zeros((n_bands, n_blocks), dtype=bool)
    saturated = np.zeros((n_bands, n_blocks), dtype=bool)
    lags = np.arange(-max_lag, max_lag + 1)
    for t, s in enumerate(starts):
        L = np.fft.rfft(left[s:s + block], n_fft)
        R = np.fft.rfft(right[s:s + block], n_fft)
        e_l = weights @ np.abs(L) ** 2
        e_r = weights @ np.abs(R) ** 2
        live = (e_l > 0) & (e_r > 0)
        if not live.any():
            continue
        cross = weights[live] * (np.conj(L) * R)[None, :]
        # analytic cross-correlation: positive-frequency half only
        c = np.fft.ifft(cross, n=n_fft, axis=1)[:, lags % n_fft] * n_fft
        norm = np.sqrt(e_l[live] * e_r[live])
        c = c / norm[:, None]
        ic[live, t] = np.minimum(np.max(np.abs(c), axis=1), 1.0)
        mag = np.abs(c)
        i = np.argmax(mag, axis=1)
        rows = np.arange(c.shape[0])
        peak = mag[rows, i]
        # fine-structure peak of Re c nearest the envelope maximum, located
        # from the analytic phase and the local phase slope
        j = np.clip(i, 1, lags.size - 2)
        omega = 0.5 * (np.angle(c[rows, j + 1] * np.conj(c[rows, j]))
                       + np.angle(c[rows, j] * np.conj(c[rows, j - 1])))
        omega = np.where(np.abs(omega) > 1e-9, omega, 1e-9)
        tau = lags[i] - np.angle(c[rows, i]) / omega
        edge = (i == 0) | (i == lags.size - 1) | (np.abs(tau) > max_lag)
        tau = np.clip(tau, -max_lag, max_lag)
        itd[live, t] = tau / fs
        saturated[live, t] = edge
        reliable[live, t] = (peak >= bands.min_peak) & ~edge
    times = (starts + block / 2) / fs
    return CueMap(ic, itd, reliable, saturated, np.asarray(bands.centers, dtype=float), times)


def interaural_coherence_map(bL, bR, bands: BandSpec = BandSpec(),
                             sample_rate: float = 16000.0) -> np.ndarray:
    """IC part of :func:`cue_map`, shape ``(bands, blocks)``."""
    return cue_map(bL, bR, bands, sample_rate).ic


def itd_map(bL, bR, bands: BandSpec = BandSpec(), sample_rate: float = 16000.0) -> np.ndarray:
    """ITD part of :func:`cue_map` in seconds, shape ``(bands, blocks)``."""
    return cue_map(bL, bR, bands, sample_rate).itd


def cue_difference(cmap: CueMap, reference: CueMap) -> CueMap:
    """Element-wise ``cmap - reference``; undefined cells stay undefined.

    A difference cell is reliable only if both inputs are.
    """
    if (cmap.ic.shape != reference.ic.shape
            or not np.allclose(cmap.band_centers, reference.band_centers)
            or not np.allclose(cmap.block_times, reference.block_times)):
        raise ShapeError("cue maps are on different band/block grids")
    return CueMap(cmap.ic - reference.ic, cmap.itd - reference.itd,
                  cmap.reliable & reference.reliable,
                  cmap.saturated | reference.saturated,
                  cmap.band_centers.copy(), cmap.block_times.copy())


def mean_abs_difference(diff: CueMap, band_mask=None, time_mask=None):
    """Mean ``|dIC|`` over defined cells and mean ``|dITD|`` over reliable
    cells, optionally restricted to selected bands and blocks."""
    sel = np.ones(diff.shape, dtype=bool)
    if band_mask is not None:
        sel &= np.asarray(band_mask, dtype=bool)[:, None]
    if time_mask is not None:
        sel &= np.asarray(time_mask, dtype=bool)[None, :]
    ic = np.abs(diff.ic[sel & np.isfinite(diff.ic)])
    itd = np.abs(diff.itd[sel & diff.reliable])
    return (float(ic.mean()) if ic.size else math.nan,
            float(itd.mean()) if itd.size else math.nan)
