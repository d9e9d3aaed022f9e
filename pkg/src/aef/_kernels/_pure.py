"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled twin in ``_core.pyx``; selected at import
time by ``aef._kernels`` when the extension is unavailable (or when
``AEF_PURE_PYTHON=1``). No ``np.fft`` here: the radix-2 transform is part
of the artifact and is tested against a direct DFT oracle.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"

_TWO_PI = 2.0 * np.pi


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT. len(x) must be a power of two."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.size
    if n == 0 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if n == 1:
        return a.copy()

    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(levels):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    a = a[rev]

    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(n // m, m)
        even = blocks[:, :half]
        odd = blocks[:, half:] * w
        a = np.concatenate([even + odd, even - odd], axis=1).reshape(n)
        m *= 2
    return a


def feedback_impedance_arr(
    f: np.ndarray,
    r_feedback: float,
    r_comp: float,
    c_comp: float,
    r_comp1: float,
    c_comp1: float,
) -> np.ndarray:
    """Parallel combination of the three feedback branches at each frequency."""
    w = _TWO_PI * np.asarray(f, dtype=np.float64)
    y = (
        1.0 / r_feedback
        + 1.0 / (r_comp + 1.0 / (1j * w * c_comp))
        + 1.0 / (r_comp1 + 1.0 / (1j * w * c_comp1))
    )
    return 1.0 / y


def _amp_gain(f: np.ndarray, dc_gain: float, pole_frequency: float, controlled_gain: float) -> np.ndarray:
    return controlled_gain * dc_gain / (1.0 + 1j * np.asarray(f, dtype=np.float64) / pole_frequency)


def closed_loop_ratio_arr(
    f: np.ndarray,
    r_feedback: float,
    r_comp: float,
    c_comp: float,
    r_comp1: float,
    c_comp1: float,
    z_source: float,
    dc_gain: float,
    pole_frequency: float,
    controlled_gain: float,
) -> np.ndarray:
    zfb = feedback_impedance_arr(f, r_feedback, r_comp, c_comp, r_comp1, c_comp1)
    g = _amp_gain(f, dc_gain, pole_frequency, controlled_gain)
    return 1.0 - g * zfb / (z_source + zfb)


def loop_gain_arr(
    f: np.ndarray,
    r_feedback: float,
    r_comp: float,
    c_comp: float,
    r_comp1: float,
    c_comp1: float,
    z_source: float,
    dc_gain: float,
    pole_frequency: float,
    controlled_gain: float,
) -> np.ndarray:
    zfb = feedback_impedance_arr(f, r_feedback, r_comp, c_comp, r_comp1, c_comp1)
    ff = np.asarray(f, dtype=np.float64)
    g_ol = dc_gain / (1.0 + 1j * ff / pole_frequency)
    g = controlled_gain * g_ol
    return g_ol * g * zfb / (z_source + zfb)


def injected_response_arr(
    f: np.ndarray,
    r_feedback: float,
    r_comp: float,
    c_comp: float,
    r_comp1: float,
    c_comp1: float,
    z_source: float,
    dc_gain: float,
    pole_frequency: float,
    controlled_gain: float,
    kappa: float,
    l: float,
    c_inject: float,
    q_inject: float,
) -> np.ndarray:
    """Closed-loop line response with the tunable injection branch in the loop.

    The injection branch is a series resonator with quality factor ``q_inject``
    resonant at f_r = 1/(2*pi*sqrt(kappa*l*c_inject)); its band-pass coupling
    scales the loop gain, so the response is 1/(1 + T*coupling).
    """
    ff = np.asarray(f, dtype=np.float64)
    t = loop_gain_arr(
        ff, r_feedback, r_comp, c_comp, r_comp1, c_comp1,
        z_source, dc_gain, pole_frequency, controlled_gain,
    )
    f_res = 1.0 / (_TWO_PI * np.sqrt(kappa * l * c_inject))
    detune = ff / f_res - f_res / ff
    coupling = 1.0 / (1.0 + 1j * q_inject * detune)
    return 1.0 / (1.0 + t * coupling)
