"""Backend selection for the hot kernels.

Set LPNET_NUMBA=0 to force the pure-numpy path, LPNET_NUMBA=1 to require
numba (ImportError if missing).  Unset, numba is used when importable.
``BACKEND`` reports which path won.
"""

import os

from . import numpy_ops

_flag = os.environ.get("LPNET_NUMBA", "").strip()

if _flag == "0":
    _impl = numpy_ops
    BACKEND = "numpy"
elif _flag == "1":
    from . import numba_ops as _impl
    BACKEND = "numba"
else:
    try:
        from . import numba_ops as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = numpy_ops
        BACKEND = "numpy"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
roialign_forward = _impl.roialign_forward
roialign_backward = _impl.roialign_backward

__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_backward",
    "lstm_forward",
    "lstm_backward",
    "roialign_forward",
    "roialign_backward",
]
