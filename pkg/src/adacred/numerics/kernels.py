"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly and the
``ADACRED_PURE_PYTHON`` environment variable is unset; otherwise the numpy
fallback is bound. ``BACKEND`` names the active choice.
"""

import os

from . import _pykernels

py = _pykernels

try:
    if os.environ.get("ADACRED_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as c  # type: ignore[attr-defined]
except ImportError:
    c = None

_impl = c if c is not None else _pykernels
BACKEND = "cython" if c is not None else "python"

im2col = _impl.im2col
col2im = _impl.col2im
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
