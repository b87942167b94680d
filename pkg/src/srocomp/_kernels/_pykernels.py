"""NumPy implementations of the hot kernels.

Used whenever the compiled extension is unavailable, and as the cross-check
for it in the test-suite. Signatures match ``_ckernels.pyx`` exactly.
"""
import numpy as np

_CHUNK = 4096


def accumulate_fractional_taps(out, delays, gains, half_width):
    """Add ``gains[i] * h(n - delays[i])`` into ``out`` in place.

    ``h`` is a Hann-windowed sinc of support ``(-half_width, half_width)``,
    i.e. a band-limited fractional-delay impulse.
    """
    out = np.asarray(out)
    delays = np.asarray(delays, dtype=float)
    gains = np.asarray(gains, dtype=float)
    n_out = out.shape[0]
    offs = np.arange(-half_width, half_width + 1)
    for start in range(0, delays.size, _CHUNK):
        d = delays[start:start + _CHUNK]
        g = gains[start:start + _CHUNK]
        base = np.floor(d).astype(np.int64)
        idx = base[:, None] + offs[None, :]
        t = idx - d[:, None]
        taps = g[:, None] * np.sinc(t) * 0.5 * (1 + np.cos(np.pi * t / half_width))
        valid = (np.abs(t) < half_width) & (idx >= 0) & (idx < n_out)
        np.add.at(out, idx[valid], taps[valid])
    return out


def sinc_interpolate(x, positions, half_width, beta):
    """Evaluate ``x`` at fractional sample ``positions`` by Kaiser-windowed sinc.

    Samples outside ``x`` are taken as zero. The kernel has ``2 * half_width``
    taps: ``m = floor(t) - half_width + 1 ... floor(t) + half_width``.
    """
    x = np.asarray(x, dtype=float)
    positions = np.asarray(positions, dtype=float)
    y = np.empty(positions.shape[0])
    offs = np.arange(-half_width + 1, half_width + 1)
    i0b = np.i0(beta)
    for start in range(0, positions.size, _CHUNK):
        t = positions[start:start + _CHUNK]
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offs[None, :]
        u = t[:, None] - idx
        arg = np.clip(1.0 - (u / half_width) ** 2, 0.0, None)
        h = np.sinc(u) * np.i0(beta * np.sqrt(arg)) / i0b
        ok = (idx >= 0) & (idx < x.size)
        vals = np.where(ok, x[np.clip(idx, 0, x.size - 1)], 0.0)
        y[start:start + _CHUNK] = np.sum(vals * h, axis=1)
    return y


def gcc_at_lag(P, lag, fft_size):
    """Real GCC value at a (possibly fractional) lag.

    ``P`` holds the one-sided bins ``0 .. fft_size // 2``; the missing half is
    the conjugate mirror, so the result is
    ``sum_k P[k] exp(2j pi k lag / fft_size)`` over the full spectrum.
    """
    P = np.asarray(P)
    k = np.arange(P.shape[0])
    terms = np.real(P * np.exp(2j * np.pi * k * lag / fft_size))
    weights = np.full(P.shape[0], 2.0)
    weights[0] = 1.0
    if fft_size % 2 == 0:
        weights[-1] = 1.0
    return float(np.dot(weights, terms))
