"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or ``AEF_PURE_PYTHON=1`` is set. Both backends
export the same functions and are tested for equivalence.
"""

from __future__ import annotations

import os

if os.environ.get("AEF_PURE_PYTHON") == "1":
    from . import _pure as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pure as _impl  # type: ignore[no-redef]

BACKEND: str = _impl.BACKEND
fft_radix2 = _impl.fft_radix2
feedback_impedance_arr = _impl.feedback_impedance_arr
closed_loop_ratio_arr = _impl.closed_loop_ratio_arr
loop_gain_arr = _impl.loop_gain_arr
injected_response_arr = _impl.injected_response_arr

__all__ = [
    "BACKEND",
    "fft_radix2",
    "feedback_impedance_arr",
    "closed_loop_ratio_arr",
    "loop_gain_arr",
    "injected_response_arr",
]
