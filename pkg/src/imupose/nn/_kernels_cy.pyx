# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: conv2d forward/backward and the LSTM recurrent cores.

Same contract as ``kernels_np``; GEMMs go through BLAS (scipy's exported
dgemm), im2col/col2im and the gate math run as C loops. Gate column order
[forget | input | candidate | output].
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

from .kernels_np import scratch

NAME = "compiled"

_IM2COL_BUDGET = 48 * 2**20


def _padded(x, pads):
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    b, s, d, cin = x.shape
    xp = scratch("cy.pad", (b, s + pt + pb, d + pl + pr, cin))
    xp.fill(0.0)
    xp[:, pt:pt + s, pl:pl + d, :] = x
    return xp


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


# Row-major GEMM wrappers over column-major BLAS (operands swapped); the
# rs* arguments are row strides in elements, so matrix rows may live apart.

cdef void _gemm_nn(double* a, int rsa, double* b, int rsb, double* c, int rsc,
                   int m, int n, int k, double beta) noexcept nogil:
    # c (m,n) = a (m,k) @ b (k,n) + beta*c
    cdef double alpha = 1.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "N", &n, &m, &k, &alpha, b, &rsb, a, &rsa, &beta, c, &rsc)


cdef void _gemm_nt(double* a, int rsa, double* b, int rsb, double* c, int rsc,
                   int m, int n, int k, double beta) noexcept nogil:
    # c (m,n) = a (m,k) @ b.T with b (n,k), + beta*c
    cdef double alpha = 1.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("T", "N", &n, &m, &k, &alpha, b, &rsb, a, &rsa, &beta, c, &rsc)


cdef void _gemm_tn(double* a, int rsa, double* b, int rsb, double* c, int rsc,
                   int m, int n, int k, double beta) noexcept nogil:
    # c (m,n) = a.T @ b with a (k,m), b (k,n), + beta*c
    cdef double alpha = 1.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "T", &n, &m, &k, &alpha, b, &rsb, a, &rsa, &beta, c, &rsc)


cdef void _im2col_chunk(double[:, :, :, ::1] xp, Py_ssize_t lo, Py_ssize_t rows,
                        Py_ssize_t s_out, Py_ssize_t d_out, Py_ssize_t kh, Py_ssize_t kw,
                        double[:, ::1] cols) noexcept nogil:
    cdef Py_ssize_t cin = xp.shape[3]
    cdef Py_ssize_t bb, s, d, i, j, c, row, col0
    for bb in range(rows):
        for s in range(s_out):
            for d in range(d_out):
                row = (bb * s_out + s) * d_out + d
                for i in range(kh):
                    col0 = i * kw * cin
                    for j in range(kw):
                        for c in range(cin):
                            cols[row, col0 + j * cin + c] = xp[lo + bb, s + i, d + j, c]


cdef void _col2im_chunk(double[:, ::1] dcols, Py_ssize_t lo, Py_ssize_t rows,
                        Py_ssize_t s_out, Py_ssize_t d_out, Py_ssize_t kh, Py_ssize_t kw,
                        double[:, :, :, ::1] dxp) noexcept nogil:
    cdef Py_ssize_t cin = dxp.shape[3]
    cdef Py_ssize_t bb, s, d, i, j, c, row, col0
    for bb in range(rows):
        for s in range(s_out):
            for d in range(d_out):
                row = (bb * s_out + s) * d_out + d
                for i in range(kh):
                    col0 = i * kw * cin
                    for j in range(kw):
                        for c in range(cin):
                            dxp[lo + bb, s + i, d + j, c] += dcols[row, col0 + j * cin + c]


def _chunk_size(Py_ssize_t s_out, Py_ssize_t d_out, Py_ssize_t patch):
    return max(1, _IM2COL_BUDGET // (s_out * d_out * patch * 8))


def conv2d_forward(x, kernels, bias, pads):
    """Cross-correlation of (B,S,D,Cin) with (K,kh,kw,Cin) kernels, stride 1."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], s = x.shape[1], d = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t k = kernels.shape[0], kh = kernels.shape[1], kw = kernels.shape[2]
    cdef Py_ssize_t pt = pads[0], pb = pads[1], pl = pads[2], pr = pads[3]
    cdef Py_ssize_t s_out = s + pt + pb - kh + 1
    cdef Py_ssize_t d_out = d + pl + pr - kw + 1
    xp = _padded(x, pads)
    w2 = np.ascontiguousarray(kernels.reshape(k, -1).T)
    y = np.empty((b, s_out, d_out, k))
    cdef Py_ssize_t patch = kh * kw * cin
    cdef Py_ssize_t step = min(b, _chunk_size(s_out, d_out, patch))
    cols = scratch("cy.cols", (step * s_out * d_out, patch))
    cdef double[:, :, :, ::1] xp_v = xp
    cdef double[:, ::1] cols_v = cols
    cdef double[:, ::1] w2_v = w2
    cdef double[:, ::1] y2_v
    cdef Py_ssize_t lo, rows
    cdef int m
    for lo in range(0, b, step):
        rows = min(b - lo, step)
        m = <int>(rows * s_out * d_out)
        _im2col_chunk(xp_v, lo, rows, s_out, d_out, kh, kw, cols_v)
        y2_v = y[lo:lo + rows].reshape(rows * s_out * d_out, k)
        _gemm_nn(&cols_v[0, 0], <int>patch, &w2_v[0, 0], <int>k,
                 &y2_v[0, 0], <int>k, m, <int>k, <int>patch, 0.0)
    y += np.asarray(bias, dtype=np.float64)
    return y


def conv2d_backward(x, kernels, dy, pads):
    """Gradients of conv2d_forward w.r.t. input, kernels and bias."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], s = x.shape[1], d = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t k = kernels.shape[0], kh = kernels.shape[1], kw = kernels.shape[2]
    cdef Py_ssize_t pt = pads[0], pb = pads[1], pl = pads[2], pr = pads[3]
    cdef Py_ssize_t s_out = dy.shape[1], d_out = dy.shape[2]
    xp = _padded(x, pads)
    w2 = np.ascontiguousarray(kernels.reshape(k, -1))  # (k, patch)
    cdef Py_ssize_t patch = kh * kw * cin
    dxp = scratch("cy.dpad", xp.shape)
    dxp.fill(0.0)
    dw2 = np.zeros((patch, k))
    cdef Py_ssize_t step = min(b, _chunk_size(s_out, d_out, patch))
    cols = scratch("cy.cols", (step * s_out * d_out, patch))
    dcols = scratch("cy.dcols", (step * s_out * d_out, patch))
    cdef double[:, :, :, ::1] xp_v = xp, dxp_v = dxp
    cdef double[:, ::1] cols_v = cols, dcols_v = dcols, dw2_v = dw2, w2_v = w2
    cdef double[:, ::1] dy2_v
    cdef Py_ssize_t lo, rows
    cdef int m
    for lo in range(0, b, step):
        rows = min(b - lo, step)
        m = <int>(rows * s_out * d_out)
        _im2col_chunk(xp_v, lo, rows, s_out, d_out, kh, kw, cols_v)
        dy2_v = dy[lo:lo + rows].reshape(rows * s_out * d_out, k)
        # dw2 += cols.T @ dy_flat
        _gemm_tn(&cols_v[0, 0], <int>patch, &dy2_v[0, 0], <int>k,
                 &dw2_v[0, 0], <int>k, <int>patch, <int>k, m, 1.0)
        # dcols = dy_flat @ w2
        _gemm_nn(&dy2_v[0, 0], <int>k, &w2_v[0, 0], <int>patch,
                 &dcols_v[0, 0], <int>patch, m, <int>patch, <int>k, 0.0)
        _col2im_chunk(dcols_v, lo, rows, s_out, d_out, kh, kw, dxp_v)
    dkernels = dw2.T.reshape(k, kh, kw, cin).copy()
    dbias = dy.sum(axis=(0, 1, 2))
    dx = dxp[:, pt:pt + s, pl:pl + d, :].copy()  # dxp is scratch; detach
    return dx, dkernels, dbias


def lstm_forward_core(pre, w_h, h0, c0):
    """Recurrent loop over (B,S,4H) pre-activations.

    Returns (h_seq, c_seq, tanh_c_seq, gates) with gates post-activation.
    """
    pre = np.ascontiguousarray(pre, dtype=np.float64)
    w_h = np.ascontiguousarray(w_h, dtype=np.float64)
    cdef Py_ssize_t b = pre.shape[0], s = pre.shape[1], h4 = pre.shape[2]
    cdef Py_ssize_t h_units = h4 // 4
    gates = np.empty((b, s, h4))
    c_seq = np.empty((b, s, h_units))
    tanh_c = np.empty((b, s, h_units))
    h_seq = np.empty((b, s, h_units))
    g = np.empty((b, h4))
    h_cur = np.array(h0, dtype=np.float64, order="C", copy=True)
    c_cur = np.array(c0, dtype=np.float64, order="C", copy=True)
    cdef double[:, :, ::1] pre_v = pre, gates_v = gates
    cdef double[:, :, ::1] c_seq_v = c_seq, tanh_c_v = tanh_c, h_seq_v = h_seq
    cdef double[:, ::1] g_v = g, h_v = h_cur, c_v = c_cur, w_h_v = w_h
    cdef Py_ssize_t t, bb, u
    cdef double f, i, cand, o, c_new, tc, h_new
    with nogil:
        for t in range(s):
            for bb in range(b):
                for u in range(h4):
                    g_v[bb, u] = pre_v[bb, t, u]
            # g += h_cur @ w_h
            _gemm_nn(&h_v[0, 0], <int>h_units, &w_h_v[0, 0], <int>h4,
                     &g_v[0, 0], <int>h4, <int>b, <int>h4, <int>h_units, 1.0)
            for bb in range(b):
                for u in range(h_units):
                    f = _sig(g_v[bb, u])
                    i = _sig(g_v[bb, h_units + u])
                    cand = tanh(g_v[bb, 2 * h_units + u])
                    o = _sig(g_v[bb, 3 * h_units + u])
                    c_new = f * c_v[bb, u] + i * cand
                    tc = tanh(c_new)
                    h_new = o * tc
                    gates_v[bb, t, u] = f
                    gates_v[bb, t, h_units + u] = i
                    gates_v[bb, t, 2 * h_units + u] = cand
                    gates_v[bb, t, 3 * h_units + u] = o
                    c_v[bb, u] = c_new
                    c_seq_v[bb, t, u] = c_new
                    tanh_c_v[bb, t, u] = tc
                    h_v[bb, u] = h_new
                    h_seq_v[bb, t, u] = h_new
    return h_seq, c_seq, tanh_c, gates


def lstm_backward_core(gates, c_seq, tanh_c, h_seq, w_h, dh_seq, h0, c0):
    """Backpropagation through time; returns pre-activation gate grads and dW_h."""
    gates = np.ascontiguousarray(gates, dtype=np.float64)
    c_seq = np.ascontiguousarray(c_seq, dtype=np.float64)
    tanh_c = np.ascontiguousarray(tanh_c, dtype=np.float64)
    h_seq = np.ascontiguousarray(h_seq, dtype=np.float64)
    w_h = np.ascontiguousarray(w_h, dtype=np.float64)
    dh_seq = np.ascontiguousarray(dh_seq, dtype=np.float64)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    c0 = np.ascontiguousarray(c0, dtype=np.float64)
    cdef Py_ssize_t b = h_seq.shape[0], s = h_seq.shape[1], h_units = h_seq.shape[2]
    cdef Py_ssize_t h4 = 4 * h_units
    dgates = np.empty((b, s, h4))
    dw_h = np.zeros((h_units, h4))
    dh_next = np.zeros((b, h_units))
    dc_next = np.zeros((b, h_units))
    cdef double[:, :, ::1] gates_v = gates, c_seq_v = c_seq, tanh_c_v = tanh_c
    cdef double[:, :, ::1] h_seq_v = h_seq, dh_seq_v = dh_seq, dgates_v = dgates
    cdef double[:, ::1] w_h_v = w_h, dw_h_v = dw_h, dh_next_v = dh_next, dc_next_v = dc_next
    cdef double[:, ::1] h0_v = h0, c0_v = c0
    cdef Py_ssize_t t, bb, u
    cdef double f, i, cand, o, dh, tc, dc, c_prev
    with nogil:
        for t in range(s - 1, -1, -1):
            for bb in range(b):
                for u in range(h_units):
                    f = gates_v[bb, t, u]
                    i = gates_v[bb, t, h_units + u]
                    cand = gates_v[bb, t, 2 * h_units + u]
                    o = gates_v[bb, t, 3 * h_units + u]
                    dh = dh_seq_v[bb, t, u] + dh_next_v[bb, u]
                    tc = tanh_c_v[bb, t, u]
                    dc = dc_next_v[bb, u] + dh * o * (1.0 - tc * tc)
                    if t > 0:
                        c_prev = c_seq_v[bb, t - 1, u]
                    else:
                        c_prev = c0_v[bb, u]
                    dgates_v[bb, t, u] = dc * c_prev * f * (1.0 - f)
                    dgates_v[bb, t, h_units + u] = dc * cand * i * (1.0 - i)
                    dgates_v[bb, t, 2 * h_units + u] = dc * i * (1.0 - cand * cand)
                    dgates_v[bb, t, 3 * h_units + u] = dh * tc * o * (1.0 - o)
                    dc_next_v[bb, u] = dc * f
            # dh_next = dgates[:, t] @ w_h.T  (row stride of dgates[:, t] is s*h4)
            _gemm_nt(&dgates_v[0, t, 0], <int>(s * h4), &w_h_v[0, 0], <int>h4,
                     &dh_next_v[0, 0], <int>h_units, <int>b, <int>h_units, <int>h4, 0.0)
            # dw_h += h_prev.T @ dgates[:, t]
            if t > 0:
                _gemm_tn(&h_seq_v[0, t - 1, 0], <int>(s * h_units),
                         &dgates_v[0, t, 0], <int>(s * h4),
                         &dw_h_v[0, 0], <int>h4, <int>h_units, <int>h4, <int>b, 1.0)
            else:
                _gemm_tn(&h0_v[0, 0], <int>h_units,
                         &dgates_v[0, t, 0], <int>(s * h4),
                         &dw_h_v[0, 0], <int>h4, <int>h_units, <int>h4, <int>b, 1.0)
    return dgates, dw_h
