"""Hot inner loops, compiled when possible.

The Cython extension ``_ckernels`` is used if it was built; otherwise the
NumPy fallback in ``_pykernels`` is imported. Setting the environment variable
``SROCOMP_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the active one.
"""
import os
import warnings

from . import _pykernels as python

try:
    if os.environ.get("SROCOMP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels as compiled
except ImportError as exc:
    compiled = None
    if "requested" not in str(exc):
        warnings.warn("compiled kernels unavailable, using NumPy fallback "
                      "(build with `pip install -e . --no-build-isolation`)",
                      RuntimeWarning, stacklevel=2)

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

accumulate_fractional_taps = _impl.accumulate_fractional_taps
sinc_interpolate = _impl.sinc_interpolate
gcc_at_lag = _impl.gcc_at_lag

__all__ = ["BACKEND", "accumulate_fractional_taps", "sinc_interpolate",
           "gcc_at_lag", "python", "compiled"]
