"""Sampling-rate-offset (SRO) injection and compensation.

Sign convention used throughout the package: a device with SRO ``eps``
(in ppm) runs at ``(1 + eps) * fs``. A signal played through it and sampled
at the nominal rate is ``y[n] = x(n * (1 + eps))``, i.e. it runs ahead of the
original by ``eps * n`` samples. :func:`apply_sro` simulates exactly that,
and compensation pre-delays the playback by the same accumulated amount.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal.windows import hann

from . import _kernels
from .dsp import Spectrogram, StftConfig, as_channels
from .errors import AlignmentError, DomainError, ShapeError, ValidityError

PPM = 1e-6
MAX_SRO_PPM = 500.0


def check_sro(eps_ppm: float, name: str = "sro") -> float:
    """Reject offsets beyond the supported ``|eps| <= 500`` ppm."""
    eps_ppm = float(eps_ppm)
    if not math.isfinite(eps_ppm) or abs(eps_ppm) > MAX_SRO_PPM:
        raise DomainError(f"{name} = {eps_ppm} ppm outside [-{MAX_SRO_PPM}, {MAX_SRO_PPM}]")
    return eps_ppm


def max_valid_frame(eps_ppm: float, config: StftConfig) -> float:
    """Largest frame index for which the accumulated drift
    ``l * hop * |eps|`` stays within a quarter window."""
    eps = abs(eps_ppm) * PPM
    if eps == 0:
        return math.inf
    return config.window_size / 4 / (config.hop_size * eps)


def check_validity(eps_ppm: float, n_frames: int, config: StftConfig, name: str = "sro"):
    """Raise :class:`ValidityError` if frame ``n_frames - 1`` breaks the
    small-drift condition of the STFT phase-ramp model."""
    check_sro(eps_ppm, name)
    l_max = n_frames - 1
    limit = max_valid_frame(eps_ppm, config)
    if l_max > limit:
        first_bad = math.floor(limit) + 1
        raise ValidityError(
            f"{name} = {eps_ppm} ppm: phase-ramp validity condition "
            f"l*N_h*|eps| <= N_w/4 violated from frame {first_bad} "
            f"(t = {first_bad * config.hop_size / config.sample_rate:.1f} s) on; "
            f"requested {n_frames} frames")


def sro_phase_term(k, l, eps_ppm: float, config: StftConfig):
    """STFT-domain phase term of an SRO-induced drift at bin ``k``, frame ``l``.

    ``exp(-2j*pi*k*l*N_h*eps / N_fft)``: a delay by the drift ``l*N_h*eps``
    samples accumulated up to frame ``l``. Multiplying by its conjugate
    undoes it.
    """
    check_sro(eps_ppm)
    l_arr = np.asarray(l)
    if np.any(np.abs(l_arr) > max_valid_frame(eps_ppm, config)):
        bad = int(np.max(np.abs(l_arr)))
        raise ValidityError(f"phase-ramp validity condition violated at frame {bad}")
    drift = l_arr * config.hop_size * eps_ppm * PPM
    return np.exp(-2j * np.pi * np.asarray(k) * drift / config.fft_size)


def _check_layout(segment_len, block):
    if segment_len <= 0 or segment_len & (segment_len - 1):
        raise DomainError(f"segment_len must be a power of two, got {segment_len}")
    if block is None:
        block = segment_len // 8
    if block % 4 or not 0 < block <= segment_len:
        raise DomainError(f"block length {block} must be a multiple of 4 "
                          f"not exceeding segment_len")
    return block


def warp_range(x, shift_fn, n0: int, n1: int, segment_len: int = 8192,
               block: int | None = None, x_offset: int = 0) -> np.ndarray:
    """Samples ``n0 .. n1 - 1`` of ``y[n] ~= x(n + shift_fn(n))``.

    Blocks start on a fixed grid of multiples of ``block // 4``, so any
    partition of the output into ranges reproduces :func:`warp` exactly;
    this is what allows streaming.

    Args:
        x: Input samples; ``x[i]`` is input sample ``x_offset + i`` and
            samples outside the buffer count as zero.
        shift_fn: Maps output positions (array) to read offsets in samples;
            evaluated once per block at the block centre.
        n0: First output sample.
        n1: One past the last output sample.
        segment_len: FFT length (power of two).
        block: Block length, default ``segment_len // 8``; blocks overlap
            by 75 %.
        x_offset: Input index of ``x[0]``.

    Returns:
        ``n1 - n0`` output samples.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("warp expects a single channel")
    block = _check_layout(segment_len, block)
    if n1 <= n0:
        return np.zeros(0)
    hop = block // 4
    spill = (segment_len - block) // 2
    # blocks whose circular output [start - spill, start - spill + segment_len) meets [n0, n1)
    b_lo = -(-(n0 + spill - segment_len + 1) // hop)
    b_hi = (n1 - 1 + spill) // hop
    starts = np.arange(b_lo, b_hi + 1) * hop
    shifts = np.asarray(shift_fn(starts + block / 2), dtype=float)
    int_shift = np.round(shifts).astype(np.int64)
    frac = shifts - int_shift
    read = starts + int_shift - x_offset
    lo = min(0, int(read.min()))
    hi = max(x.size, int(read.max()) + block)
    xp = np.zeros(hi - lo)
    xp[-lo:-lo + x.size] = x
    win = hann(block, sym=False) * (2 * hop / block)
    k = np.arange(segment_len // 2 + 1)
    out = np.zeros(n1 - n0 + 2 * segment_len)
    base = n0 - segment_len
    idx = np.arange(block)
    step = 64
    for b0 in range(0, starts.size, step):
        bs = slice(b0, b0 + step)
        seg = xp[(read[bs] - lo)[:, None] + idx[None, :]] * win
        spec = np.fft.rfft(seg, n=segment_len, axis=1)
        spec *= np.exp(2j * np.pi * k[None, :] * frac[bs, None] / segment_len)
        blocks = np.roll(np.fft.irfft(spec, n=segment_len, axis=1), spill, axis=1)
        for j in range(blocks.shape[0]):
            o = starts[b0 + j] - spill - base
            out[o:o + segment_len] += blocks[j]
    return out[segment_len:segment_len + n1 - n0]


def warp(x, shift_fn, segment_len: int = 8192, block: int | None = None,
         out_len: int | None = None):
    """Time-warp a 1-D signal: ``y[n] ~= x(n + shift_fn(n))``.

    Each block of ``block`` samples (default ``segment_len // 8``, 75 %
    overlap) is read at the offset ``shift_fn`` gives for its centre: the
    integer part moves the read position, the fractional part is a linear
    phase on the ``segment_len``-point FFT. The whole circular output of every
    block, including the interpolation tails that spill past the block, is
    overlap-added. Shorter blocks follow a growing drift more closely.

    Args:
        x: Input signal.
        shift_fn: Maps output sample positions (array) to read offsets.
        segment_len: FFT length (power of two).
        block: Block length.
        out_len: Output length, default ``len(x)``.
    """
    x = np.asarray(x, dtype=float)
    if out_len is None:
        out_len = x.size
    return warp_range(x, shift_fn, 0, out_len, segment_len, block)


def _grow(buf, size):
    """``buf`` zero-extended to at least ``size`` (capacity doubles)."""
    if size <= buf.size:
        return buf
    out = np.zeros(max(size, 2 * buf.size))
    out[:buf.size] = buf
    return out


class StreamingWarp:
    """Incremental form of :func:`warp` for input that arrives in pieces.

    Blocks are processed as soon as the input they read is complete, and
    output samples are released once no later block can reach them. The
    released samples equal those of :func:`warp` on the whole input.

    Args:
        shift_fn: As for :func:`warp`.
        segment_len: FFT length (power of two).
        block: Block length, default ``segment_len // 8``.
    """

    def __init__(self, shift_fn, segment_len: int = 8192, block: int | None = None):
        self.block = _check_layout(segment_len, block)
        self.segment_len = segment_len
        self.hop = self.block // 4
        self.spill = (segment_len - self.block) // 2
        self.shift_fn = shift_fn
        self._x = np.zeros(0)
        self._n = 0
        self._closed = False
        self._next = -(-(self.spill - segment_len + 1) // self.hop)   # first block index
        self._out = np.zeros(0)
        self._out_base = self._next * self.hop - self.spill
        self.released = 0
        win = hann(self.block, sym=False) * (2 * self.hop / self.block)
        self._win = win
        self._ramp_k = np.arange(segment_len // 2 + 1)

    def push(self, x) -> np.ndarray:
        """Append input samples; return newly final output samples."""
        if self._closed:
            raise ValueError("stream already closed")
        x = np.asarray(x, dtype=float)
        self._x = _grow(self._x, self._n + x.size)
        self._x[self._n:self._n + x.size] = x
        self._n += x.size
        return self._advance(None)

    def close(self, out_len: int) -> np.ndarray:
        """Mark the input complete and return the output up to ``out_len``."""
        self._closed = True
        return self._advance(out_len)

    def _advance(self, out_len):
        hop, block, seg = self.hop, self.block, self.segment_len
        avail = self._n
        starts, shifts = [], []
        b = self._next
        while True:
            start = b * hop
            if out_len is not None and start - self.spill >= out_len:
                break
            shift = float(np.asarray(self.shift_fn(np.array([start + block / 2])))[0])
            read_end = start + int(np.round(shift)) + block
            if out_len is None and read_end > avail:
                break
            starts.append(start)
            shifts.append(shift)
            b += 1
        self._next = b
        if starts:
            starts = np.array(starts)
            shifts = np.array(shifts)
            int_shift = np.round(shifts).astype(np.int64)
            frac = shifts - int_shift
            need = starts[-1] - self.spill + seg - self._out_base
            self._out = _grow(self._out, need)
            idx = np.arange(block)
            for b0 in range(0, starts.size, 64):
                sl = slice(b0, b0 + 64)
                reads = (starts[sl] + int_shift[sl])[:, None] + idx[None, :]
                inside = (reads >= 0) & (reads < avail)
                if avail:
                    seg_in = np.where(inside, self._x[np.clip(reads, 0, avail - 1)], 0.0)
                else:
                    seg_in = np.zeros(reads.shape)
                spec = np.fft.rfft(seg_in * self._win, n=seg, axis=1)
                spec *= np.exp(2j * np.pi * self._ramp_k[None, :] * frac[sl, None] / seg)
                blocks = np.roll(np.fft.irfft(spec, n=seg, axis=1), self.spill, axis=1)
                for j in range(blocks.shape[0]):
                    o = starts[b0 + j] - self.spill - self._out_base
                    self._out[o:o + seg] += blocks[j]
        final = self._next * hop - self.spill
        if out_len is not None:
            final = out_len
        lo = self.released
        hi = max(final, lo)
        out = self._out[lo - self._out_base:hi - self._out_base]
        if out.size < hi - lo:
            out = np.concatenate([out, np.zeros(hi - lo - out.size)])
        self.released = hi
        return out


def resampled_length(n: int, eps_ppm: float) -> int:
    """Number of output samples whose source position lies inside ``[0, n)``."""
    return int(math.floor((n - 1) / (1 + eps_ppm * PPM))) + 1


def apply_sro(x, eps_ppm: float, segment_len: int = 8192) -> np.ndarray:
    """Simulate playback/recording through a device with SRO ``eps_ppm``.

    Args:
        x: Signal, 1-D or ``(channels, samples)``.
        eps_ppm: Sampling rate offset in ppm.
        segment_len: FFT length of the block resampler (power of two); the
            blocks are an eighth as long and overlap by 75 %.
    Returns:
        ``y[n] = x(n * (1 + eps))`` for every ``n`` whose source position lies
        inside the input; same dimensionality as ``x``.
    """
    eps_ppm = check_sro(eps_ppm)
    squeeze = np.asarray(x).ndim == 1
    xc = as_channels(x)
    n_out = resampled_length(xc.shape[1], eps_ppm)
    if eps_ppm == 0:
        y = xc.copy()
    else:
        eps = eps_ppm * PPM
        y = np.stack([warp(ch, lambda n: eps * n, segment_len, out_len=n_out) for ch in xc])
    return y[0] if squeeze else y


def apply_sro_trajectory(x, eps_ppm_per_sample, segment_len: int = 8192):
    """Like :func:`apply_sro` for a time-varying SRO given per output sample.

    The read offset is the running sum of the SRO, so it is continuous
    whatever the trajectory.
    """
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps_ppm_per_sample, dtype=float) * PPM
    offset = np.concatenate([[0.0], np.cumsum(eps)])

    def shift(n):
        # linear continuation with the end-point SROs outside the trajectory
        n = np.asarray(n, dtype=float)
        inside = np.interp(np.clip(n, 0, eps.size), np.arange(offset.size), offset)
        return (inside + np.minimum(n, 0) * eps[0]
                + np.maximum(n - eps.size, 0) * eps[-1])

    return warp(x, shift, segment_len, out_len=eps.size)


def sinc_resample(x, eps_ppm: float, half_width: int = 32, beta: float = 8.0):
    """Time-domain reference resampler (Kaiser-windowed sinc, ``2*half_width`` taps).

    Computes ``y[n] = x(n * (1 + eps))`` by direct band-limited interpolation.
    Slow but independent of the block resampler, which it is used to check.
    """
    x = np.asarray(x, dtype=float)
    n_out = resampled_length(x.size, eps_ppm)
    pos = np.arange(n_out) * (1 + eps_ppm * PPM)
    return _kernels.sinc_interpolate(x, pos, half_width, beta)


def accumulated_delay(trace_ppm, config: StftConfig, start_offset: int = 0,
                      mode: str = "accumulate") -> np.ndarray:
    """Per-frame compensation delay in samples for a (time-varying) SRO trace.

    ``accumulate``: ``d[l] = d[l-1] + N_h * eps[l]``, anchored so that a
    constant trace gives ``eps * c_l`` with ``c_l`` the frame centre; trace
    changes never make the delay jump.
    ``absolute``: ``d[l] = eps[l] * c_l``, the delay a constant SRO equal to
    the current value would have accumulated since sample 0.
    """
    eps = np.asarray(trace_ppm, dtype=float) * PPM
    centres = start_offset + config.window_size / 2 + np.arange(eps.size) * config.hop_size
    if mode == "absolute":
        return eps * centres
    if mode != "accumulate":
        raise ValueError(f"unknown compensation mode {mode!r}")
    if eps.size == 0:
        return eps
    d = np.empty_like(eps)
    d[0] = eps[0] * centres[0]
    d[1:] = d[0] + np.cumsum(eps[1:]) * config.hop_size
    return d


def delay_gain(delay, config: StftConfig) -> np.ndarray:
    """Overlap-add gain of a circular in-frame shift by ``delay`` samples.

    Shifting frame contents moves them against the synthesis window; the
    weighted overlap-add then returns ``delay_gain(delay)`` times the signal
    instead of the signal itself.
    """
    wa = config.analysis_window
    ws = config.synthesis_window
    n = config.fft_size
    wpad = np.zeros(n)
    wpad[:wa.size] = wa
    W = np.fft.rfft(wpad)
    k = np.arange(W.size)
    delay = np.atleast_1d(np.asarray(delay, dtype=float))
    shifted = np.fft.irfft(W[None, :] * np.exp(-2j * np.pi * k[None, :] * delay[:, None] / n),
                           n=n, axis=1)[:, :ws.size]
    return shifted @ ws / (wa @ ws)


def compensate_sro(playback: Spectrogram, trace_ppm, mode: str = "accumulate",
                   gain_correction: bool = True) -> Spectrogram:
    """Pre-compensate playback frames for the SRO described by ``trace_ppm``.

    Frame ``l`` is delayed by the accumulated drift (see
    :func:`accumulated_delay`) through a linear phase. Playing the result
    through a device with that SRO returns the original signal.

    Args:
        playback: Spectrogram of the signal to be transmitted.
        trace_ppm: SRO per frame in ppm (scalar for a constant offset).
        mode: ``"accumulate"`` or ``"absolute"`` delay bookkeeping.
        gain_correction: Undo the small overlap-add gain loss of large shifts.
    """
    n_frames = playback.n_frames
    trace = np.asarray(trace_ppm, dtype=float)
    if trace.ndim == 0:
        trace = np.full(n_frames, float(trace))
    if trace.shape != (n_frames,):
        raise AlignmentError(f"trace has {trace.shape[0] if trace.ndim else 1} values "
                             f"for {n_frames} frames")
    for v in (trace.min(), trace.max()):
        check_sro(v, "trace")
    cfg = playback.config
    delay = accumulated_delay(trace, cfg, playback.start_offset, mode)
    if np.any(np.abs(delay) > cfg.window_size / 4):
        bad = int(np.argmax(np.abs(delay) > cfg.window_size / 4))
        raise ValidityError(f"compensation delay exceeds N_w/4 from frame {bad} on")
    k = np.arange(cfg.n_bins)
    ramp = np.exp(-2j * np.pi * k[None, :] * delay[:, None] / cfg.fft_size)
    if gain_correction and np.any(delay):
        ramp /= delay_gain(delay, cfg)[:, None]
    return playback.with_data(playback.data * ramp[None])
