# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (same signatures as _pykernels)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, floor, sqrt, fabs, M_PI

cnp.import_array()


cdef inline double _sinc(double t) nogil:
    if fabs(t) < 1e-12:
        return 1.0
    return sin(M_PI * t) / (M_PI * t)


cdef double _bessel_i0(double x) nogil:
    # power series; converges quickly for the beta range used here (< 20)
    cdef double s = 1.0, term = 1.0, q = x * x / 4.0
    cdef int k = 1
    while k < 500:
        term *= q / (k * k)
        s += term
        if term < 1e-17 * s:
            break
        k += 1
    return s


def accumulate_fractional_taps(double[::1] out, delays, gains, int half_width):
    cdef const double[::1] d = np.ascontiguousarray(delays, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef Py_ssize_t n_out = out.shape[0], n_img = d.shape[0], i
    cdef long base, idx, j
    cdef double t, di, gi
    with nogil:
        for i in range(n_img):
            di = d[i]
            gi = g[i]
            base = <long>floor(di)
            for j in range(-half_width, half_width + 1):
                idx = base + j
                if idx < 0 or idx >= n_out:
                    continue
                t = idx - di
                if fabs(t) >= half_width:
                    continue
                out[idx] += gi * _sinc(t) * 0.5 * (1.0 + cos(M_PI * t / half_width))
    return np.asarray(out)


def sinc_interpolate(x, positions, int half_width, double beta):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = pos.shape[0], nx = xv.shape[0], i
    y = np.empty(n)
    cdef double[::1] yv = y
    cdef double t, u, arg, acc, i0b = _bessel_i0(beta)
    cdef long base, idx, j
    with nogil:
        for i in range(n):
            t = pos[i]
            base = <long>floor(t)
            acc = 0.0
            for j in range(-half_width + 1, half_width + 1):
                idx = base + j
                if idx < 0 or idx >= nx:
                    continue
                u = t - idx
                arg = 1.0 - (u / half_width) * (u / half_width)
                if arg < 0.0:
                    arg = 0.0
                acc += xv[idx] * _sinc(u) * _bessel_i0(beta * sqrt(arg)) / i0b
            yv[i] = acc
    return y


def gcc_at_lag(P, double lag, long fft_size):
    cdef const double complex[::1] pv = np.ascontiguousarray(P, dtype=np.complex128)
    cdef Py_ssize_t n = pv.shape[0], k
    cdef double acc = 0.0, w, ph, step = 2.0 * M_PI * lag / fft_size
    with nogil:
        for k in range(n):
            w = 2.0
            if k == 0 or (k == n - 1 and fft_size % 2 == 0):
                w = 1.0
            ph = step * k
            acc += w * (pv[k].real * cos(ph) - pv[k].imag * sin(ph))
    return acc
