# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.

Convolutions are im2col/col2im loops around BLAS GEMM (scipy's cython_blas);
the filters and GELU are plain loops over raw row pointers. float32 and
float64 both go through the ``floating`` fused type.
"""
import numpy as np
from cython cimport floating
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm, sgemm

BACKEND = "cython"

cdef double GELU_C = 0.7978845608028654  # sqrt(2 / pi)


cdef inline double _tanh(double u) noexcept nogil:
    # libm tanh is several times slower than exp here
    return 1.0 - 2.0 / (exp(2.0 * u) + 1.0)


cdef inline void _axpy_strided(floating* dst, const floating* src, floating a, Py_ssize_t n, Py_ssize_t step) noexcept nogil:
    cdef Py_ssize_t i
    if step == 1:
        for i in range(n):
            dst[i] += a * src[i]
    else:
        for i in range(n):
            dst[i] += a * src[i * step]


cdef inline void _axpy_scatter(floating* dst, const floating* src, floating a, Py_ssize_t n, Py_ssize_t step) noexcept nogil:
    cdef Py_ssize_t i
    if step == 1:
        for i in range(n):
            dst[i] += a * src[i]
    else:
        for i in range(n):
            dst[i * step] += a * src[i]


cdef inline void _gemm(char* ta, char* tb, int m, int n, int k, floating alpha,
                       floating* a, int lda, floating* b, int ldb, floating beta,
                       floating* c, int ldc) noexcept nogil:
    # column-major BLAS call
    if floating is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _im2col(floating[:, :, ::1] x, floating* cols, Py_ssize_t k, Py_ssize_t stride,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    # cols is (C*K*K, Ho*Wo), row-major
    cdef Py_ssize_t c = x.shape[0], ic, i, j, y, row
    cdef floating* dst
    for ic in range(c):
        for i in range(k):
            for j in range(k):
                row = (ic * k + i) * k + j
                for y in range(ho):
                    dst = cols + row * ho * wo + y * wo
                    _copy_strided(dst, &x[ic, y * stride + i, j], wo, stride)


cdef void _col2im(floating* cols, floating[:, :, ::1] gx, Py_ssize_t k, Py_ssize_t stride,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t c = gx.shape[0], ic, i, j, y, row
    for ic in range(c):
        for i in range(k):
            for j in range(k):
                row = (ic * k + i) * k + j
                for y in range(ho):
                    _axpy_scatter(&gx[ic, y * stride + i, j], cols + row * ho * wo + y * wo, 1, wo, stride)


cdef inline void _copy_strided(floating* dst, const floating* src, Py_ssize_t n, Py_ssize_t step) noexcept nogil:
    cdef Py_ssize_t i
    if step == 1:
        for i in range(n):
            dst[i] = src[i]
    else:
        for i in range(n):
            dst[i] = src[i * step]


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, int stride):
    """out[b] = W (O, CKK) @ im2col(x[b]) (CKK, HoWo)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h - k) // stride + 1, wo = (wd - k) // stride + 1
    cdef int ckk = c * k * k, hw = ho * wo, oi = o
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, o, ho, wo), dtype=dtype)
    cols_arr = np.empty((ckk, hw), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            if k == 1 and stride == 1:
                _gemm(b"N", b"N", hw, oi, ckk, 1, &x[b, 0, 0, 0], hw, &w[0, 0, 0, 0], ckk, 0, &out[b, 0, 0, 0], hw)
            else:
                _im2col(x[b], &cols[0, 0], k, stride, ho, wo)
                _gemm(b"N", b"N", hw, oi, ckk, 1, &cols[0, 0], hw, &w[0, 0, 0, 0], ckk, 0, &out[b, 0, 0, 0], hw)
    return out_arr


def conv2d_backward_input(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] w, tuple in_shape, int stride):
    """gx[b] = col2im(W^T (CKK, O) @ gout[b] (O, HoWo))."""
    cdef Py_ssize_t n = in_shape[0], c = in_shape[1], h = in_shape[2], wd = in_shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    cdef int ckk = c * k * k, hw = ho * wo, oi = o
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, h, wd), dtype=dtype)
    cols_arr = np.empty((ckk, hw), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            if k == 1 and stride == 1:
                _gemm(b"N", b"T", hw, ckk, oi, 1, &gout[b, 0, 0, 0], hw, &w[0, 0, 0, 0], ckk, 0, &gx[b, 0, 0, 0], hw)
            else:
                _gemm(b"N", b"T", hw, ckk, oi, 1, &gout[b, 0, 0, 0], hw, &w[0, 0, 0, 0], ckk, 0, &cols[0, 0], hw)
                _col2im(&cols[0, 0], gx[b], k, stride, ho, wo)
    return gx_arr


def conv2d_backward_weight(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] x, int ksize, int stride):
    """gW = sum_b gout[b] (O, HoWo) @ im2col(x[b])^T (HoWo, CKK)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t o = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t k = ksize
    cdef int ckk = c * k * k, hw = ho * wo, oi = o
    dtype = np.float32 if floating is float else np.float64
    gw_arr = np.zeros((o, c, k, k), dtype=dtype)
    cols_arr = np.empty((ckk, hw), dtype=dtype)
    cdef floating[:, :, :, ::1] gw = gw_arr
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t b
    with nogil:
        for b in range(n):
            if k == 1 and stride == 1:
                _gemm(b"T", b"N", ckk, oi, hw, 1, &x[b, 0, 0, 0], hw, &gout[b, 0, 0, 0], hw, 1, &gw[0, 0, 0, 0], ckk)
            else:
                _im2col(x[b], &cols[0, 0], k, stride, ho, wo)
                _gemm(b"T", b"N", ckk, oi, hw, 1, &cols[0, 0], hw, &gout[b, 0, 0, 0], hw, 1, &gw[0, 0, 0, 0], ckk)
    return gw_arr


def sep_filter_valid(floating[:, :, ::1] x, floating[::1] kv, floating[::1] kh):
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t lv = kv.shape[0], lh = kh.shape[0]
    cdef Py_ssize_t ho = h - lv + 1, wo = w - lh + 1
    dtype = np.float32 if floating is float else np.float64
    tmp_arr = np.zeros((nb, ho, w), dtype=dtype)
    out_arr = np.zeros((nb, ho, wo), dtype=dtype)
    cdef floating[:, :, ::1] tmp = tmp_arr
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, i
    with nogil:
        for b in range(nb):
            for y in range(ho):
                for i in range(lv):
                    _axpy_strided(&tmp[b, y, 0], &x[b, y + i, 0], kv[i], w, 1)
            for y in range(ho):
                for i in range(lh):
                    _axpy_strided(&out[b, y, 0], &tmp[b, y, i], kh[i], wo, 1)
    return out_arr


def sep_filter_valid_transpose(floating[:, :, ::1] g, floating[::1] kv, floating[::1] kh, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t nb = g.shape[0], ho = g.shape[1], wo = g.shape[2]
    cdef Py_ssize_t lv = kv.shape[0], lh = kh.shape[0]
    dtype = np.float32 if floating is float else np.float64
    tmp_arr = np.zeros((nb, ho, w), dtype=dtype)
    out_arr = np.zeros((nb, h, w), dtype=dtype)
    cdef floating[:, :, ::1] tmp = tmp_arr
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, i
    with nogil:
        for b in range(nb):
            for y in range(ho):
                for i in range(lh):
                    _axpy_strided(&tmp[b, y, i], &g[b, y, 0], kh[i], wo, 1)
            for y in range(ho):
                for i in range(lv):
                    _axpy_strided(&out[b, y + i, 0], &tmp[b, y, 0], kv[i], w, 1)
    return out_arr


def gelu_forward(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] out = out_arr
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <floating>(0.5 * v * (1.0 + _tanh(GELU_C * (v + 0.044715 * v * v * v))))
    return out_arr


def gelu_grad(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] out = out_arr
    cdef double v, th
    with nogil:
        for i in range(n):
            v = x[i]
            th = _tanh(GELU_C * (v + 0.044715 * v * v * v))
            out[i] = <floating>(0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3 * 0.044715 * v * v))
    return out_arr
