"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback
gives identical results (within float rounding) at lower speed. Set
ACLS_KERNELS=python or ACLS_KERNELS=cython to force a backend.
"""

import os

_choice = os.environ.get("ACLS_KERNELS", "auto")
if _choice not in ("auto", "cython", "python"):
    raise RuntimeError(f"ACLS_KERNELS must be auto, cython, or python, not {_choice!r}")

if _choice in ("auto", "cython"):
    try:
        from . import _lstm_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        from . import _pure as _impl
        BACKEND = "python"
else:
    from . import _pure as _impl
    BACKEND = "python"

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
