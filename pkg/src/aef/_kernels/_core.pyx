# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors ``_pure.py`` exactly; see that module for the reference semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, pi, sin, sqrt

cnp.import_array()

BACKEND = "compiled"


def fft_radix2(x):
    """Iterative radix-2 decimation-in-time FFT. len(x) must be a power of two."""
    a = np.array(x, dtype=np.complex128, copy=True)
    cdef Py_ssize_t n = a.shape[0]
    if n == 0 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if n == 1:
        return a

    cdef double complex[::1] buf = a
    cdef Py_ssize_t i, j, bit, m, half, start, k
    cdef double complex w, t, u
    cdef double ang

    # bit-reversal permutation
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            t = buf[i]
            buf[i] = buf[j]
            buf[j] = t

    m = 2
    while m <= n:
        half = m >> 1
        for k in range(half):
            ang = -2.0 * pi * k / m
            w = cos(ang) + 1j * sin(ang)
            start = k
            while start < n:
                u = buf[start]
                t = w * buf[start + half]
                buf[start] = u + t
                buf[start + half] = u - t
                start += m
        m <<= 1
    return a


cdef inline double complex _zfb(double w, double r_feedback, double r_comp,
                                double c_comp, double r_comp1, double c_comp1) nogil:
    cdef double complex y = (1.0 / r_feedback
                             + 1.0 / (r_comp + 1.0 / (1j * w * c_comp))
                             + 1.0 / (r_comp1 + 1.0 / (1j * w * c_comp1)))
    return 1.0 / y


def feedback_impedance_arr(f, double r_feedback, double r_comp, double c_comp,
                           double r_comp1, double c_comp1):
    cdef double[::1] ff = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t n = ff.shape[0], i
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    for i in range(n):
        o[i] = _zfb(2.0 * pi * ff[i], r_feedback, r_comp, c_comp, r_comp1, c_comp1)
    return out


def closed_loop_ratio_arr(f, double r_feedback, double r_comp, double c_comp,
                          double r_comp1, double c_comp1, double z_source,
                          double dc_gain, double pole_frequency, double controlled_gain):
    cdef double[::1] ff = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t n = ff.shape[0], i
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef double complex zfb, g
    for i in range(n):
        zfb = _zfb(2.0 * pi * ff[i], r_feedback, r_comp, c_comp, r_comp1, c_comp1)
        g = controlled_gain * dc_gain / (1.0 + 1j * ff[i] / pole_frequency)
        o[i] = 1.0 - g * zfb / (z_source + zfb)
    return out


def loop_gain_arr(f, double r_feedback, double r_comp, double c_comp,
                  double r_comp1, double c_comp1, double z_source,
                  double dc_gain, double pole_frequency, double controlled_gain):
    cdef double[::1] ff = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t n = ff.shape[0], i
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef double complex zfb, g_ol
    for i in range(n):
        zfb = _zfb(2.0 * pi * ff[i], r_feedback, r_comp, c_comp, r_comp1, c_comp1)
        g_ol = dc_gain / (1.0 + 1j * ff[i] / pole_frequency)
        o[i] = g_ol * (controlled_gain * g_ol) * zfb / (z_source + zfb)
    return out


def injected_response_arr(f, double r_feedback, double r_comp, double c_comp,
                          double r_comp1, double c_comp1, double z_source,
                          double dc_gain, double pole_frequency, double controlled_gain,
                          double kappa, double l, double c_inject, double q_inject):
    """Closed-loop line response with the tunable injection branch in the loop."""
    cdef double[::1] ff = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t n = ff.shape[0], i
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef double complex zfb, g_ol, t, coupling
    cdef double f_res = 1.0 / (2.0 * pi * sqrt(kappa * l * c_inject))
    cdef double detune
    for i in range(n):
        zfb = _zfb(2.0 * pi * ff[i], r_feedback, r_comp, c_comp, r_comp1, c_comp1)
        g_ol = dc_gain / (1.0 + 1j * ff[i] / pole_frequency)
        t = g_ol * (controlled_gain * g_ol) * zfb / (z_source + zfb)
        detune = ff[i] / f_res - f_res / ff[i]
        coupling = 1.0 / (1.0 + 1j * q_inject * detune)
        o[i] = 1.0 / (1.0 + t * coupling)
    return out
