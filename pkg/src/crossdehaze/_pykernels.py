"""Pure-numpy reference kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Inputs are already padded; these kernels only do "valid" correlation.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def conv2d_forward(x, w, stride):
    # x: (N, C, H, W) padded input, w: (O, C, K, K)
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_input(gout, w, in_shape, stride):
    n, c, h, wd = in_shape
    k = w.shape[2]
    ho, wo = gout.shape[2], gout.shape[3]
    gx = np.zeros(in_shape, dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(gout, w[:, :, i, j], axes=([1], [0]))  # (N, Ho, Wo, C)
            gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return gx


def conv2d_backward_weight(gout, x, ksize, stride):
    win = sliding_window_view(x, (ksize, ksize), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3])))


def sep_filter_valid(x, kv, kh):
    # x: (B, H, W); correlate rows with kv then columns with kh
    lv, lh = kv.shape[0], kh.shape[0]
    tmp = np.tensordot(sliding_window_view(x, lv, axis=1), kv, axes=([3], [0]))
    return np.ascontiguousarray(np.tensordot(sliding_window_view(tmp, lh, axis=2), kh, axes=([3], [0])))


def sep_filter_valid_transpose(g, kv, kh, h, w):
    """Adjoint of :func:`sep_filter_valid` for an input of size ``(h, w)``."""
    b, ho, wo = g.shape
    tmp = np.zeros((b, ho, w), dtype=g.dtype)
    for j in range(kh.shape[0]):
        tmp[:, :, j:j + wo] += kh[j] * g
    out = np.zeros((b, h, w), dtype=g.dtype)
    for i in range(kv.shape[0]):
        out[:, i:i + ho, :] += kv[i] * tmp
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_forward(x):
    u = x.astype(np.float64)
    return (0.5 * u * (1.0 + np.tanh(_GELU_C * (u + 0.044715 * u * u * u)))).astype(x.dtype)


def gelu_grad(x):
    u = x.astype(np.float64)
    th = np.tanh(_GELU_C * (u + 0.044715 * u * u * u))
    d = 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return d.astype(x.dtype)
