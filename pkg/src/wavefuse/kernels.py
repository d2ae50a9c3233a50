"""Backend selection for the convolution patch kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``WAVEFUSE_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("WAVEFUSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def im2col(x, k, stride=1, pad=0):
    """Gather k×k patches of ``x[N, C, H, W]`` into ``[C*k*k, N*Ho*Wo]``."""
    return _impl.im2col(np.ascontiguousarray(x), k, stride, pad)


def col2im(cols, shape, k, stride=1, pad=0):
    """Scatter-add patch columns back onto an image of ``shape = (N, C, H, W)``."""
    n_batch, channels, height, width = shape
    return _impl.col2im(np.ascontiguousarray(cols), n_batch, channels, height, width, k, stride, pad)
