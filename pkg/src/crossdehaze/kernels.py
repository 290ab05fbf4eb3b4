"""Hot-loop kernels with a compiled core and a numpy fallback.

The backend is chosen once at import. Set ``CROSSDEHAZE_KERNELS=python`` to
force the numpy path even when the extension is built.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
if os.environ.get("CROSSDEHAZE_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.BACKEND


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def conv2d_forward(x, w, stride=1):
    dt = x.dtype
    return _impl.conv2d_forward(_c(x, dt), _c(w, dt), int(stride))


def conv2d_backward_input(gout, w, in_shape, stride=1):
    dt = gout.dtype
    return _impl.conv2d_backward_input(_c(gout, dt), _c(w, dt), tuple(int(s) for s in in_shape), int(stride))


def conv2d_backward_weight(gout, x, ksize, stride=1):
    dt = gout.dtype
    return _impl.conv2d_backward_weight(_c(gout, dt), _c(x, dt), int(ksize), int(stride))


def sep_filter_valid(x, kv, kh):
    """Separable 'valid' correlation over the last two axes of ``x``."""
    dt = x.dtype
    lead = x.shape[:-2]
    flat = _c(x, dt).reshape((-1,) + x.shape[-2:])
    out = _impl.sep_filter_valid(flat, _c(kv, dt), _c(kh, dt))
    return out.reshape(lead + out.shape[-2:])


def sep_filter_valid_transpose(g, kv, kh, h, w):
    dt = g.dtype
    lead = g.shape[:-2]
    flat = _c(g, dt).reshape((-1,) + g.shape[-2:])
    out = _impl.sep_filter_valid_transpose(flat, _c(kv, dt), _c(kh, dt), int(h), int(w))
    return out.reshape(lead + out.shape[-2:])


def gelu_forward(x):
    """Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    flat = _c(x, x.dtype).reshape(-1)
    return _impl.gelu_forward(flat).reshape(x.shape)


def gelu_grad(x):
    flat = _c(x, x.dtype).reshape(-1)
    return _impl.gelu_grad(flat).reshape(x.shape)
