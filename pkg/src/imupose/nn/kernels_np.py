"""Pure numpy implementations of the hot kernels.

Mirrors the compiled core in ``_kernels_cy``; either module satisfies the
same contract (see ``backend`` for selection). Convolution is im2col + GEMM,
chunked over the batch to bound transient memory. The LSTM cores take the
input projection ``pre = x @ w_x + b`` precomputed (one large GEMM done by
the caller) and run only the recurrent part.

Gate column order throughout: [forget | input | candidate | output].
"""

from __future__ import annotations

import threading

import numpy as np

NAME = "numpy"

_IM2COL_BUDGET = 48 * 2**20  # bytes of patch matrix per chunk

_scratch_tls = threading.local()


def scratch(tag: str, shape: tuple[int, ...]) -> np.ndarray:
    """Reused per-thread work buffer; shapes repeat across training steps, and
    fresh multi-MB allocations per call cost more than the math."""
    store = getattr(_scratch_tls, "store", None)
    if store is None:
        store = _scratch_tls.store = {}
    key = (tag, shape)
    buf = store.get(key)
    if buf is None:
        buf = store[key] = np.empty(shape)
    return buf


def _padded(x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    b, s, d, cin = x.shape
    xp = scratch("pad", (b, s + pt + pb, d + pl + pr, cin))
    xp.fill(0.0)
    xp[:, pt:pt + s, pl:pl + d, :] = x
    return xp


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _chunk_size(s_out: int, d_out: int, patch: int) -> int:
    rows = max(1, _IM2COL_BUDGET // (s_out * d_out * patch * 8))
    return int(rows)


def _im2col(xp: np.ndarray, lo: int, hi: int, s_out: int, d_out: int,
            kh: int, kw: int) -> np.ndarray:
    cin = xp.shape[3]
    cols = scratch("cols", (hi - lo, s_out, d_out, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[lo:hi, i:i + s_out, j:j + d_out, :]
    return cols.reshape((hi - lo) * s_out * d_out, kh * kw * cin)


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   pads: tuple[int, int, int, int]) -> np.ndarray:
    """Cross-correlation of (B,S,D,Cin) with (K,kh,kw,Cin) kernels, stride 1."""
    b, s, d, cin = x.shape
    k, kh, kw, _ = kernels.shape
    pt, pb, pl, pr = pads
    s_out = s + pt + pb - kh + 1
    d_out = d + pl + pr - kw + 1
    xp = _padded(x, pads)
    w2 = kernels.reshape(k, -1).T  # (kh*kw*cin, k)
    y = np.empty((b, s_out, d_out, k))
    y2 = y.reshape(-1, k)
    step = min(b, _chunk_size(s_out, d_out, kh * kw * cin))
    per = s_out * d_out
    for lo in range(0, b, step):
        hi = min(b, lo + step)
        cols = _im2col(xp, lo, hi, s_out, d_out, kh, kw)
        np.matmul(cols, w2, out=y2[lo * per:hi * per])
    y += bias
    return y


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, dy: np.ndarray,
                    pads: tuple[int, int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, kernels and bias."""
    b, s, d, cin = x.shape
    k, kh, kw, _ = kernels.shape
    pt, pb, pl, pr = pads
    _, s_out, d_out, _ = dy.shape
    xp = _padded(x, pads)
    w2 = kernels.reshape(k, -1)  # (k, kh*kw*cin)
    dxp = scratch("dpad", xp.shape)
    dxp.fill(0.0)
    dw2 = np.zeros((kh * kw * cin, k))
    step = min(b, _chunk_size(s_out, d_out, kh * kw * cin))
    for lo in range(0, b, step):
        hi = min(b, lo + step)
        cols = _im2col(xp, lo, hi, s_out, d_out, kh, kw)
        dy_flat = dy[lo:hi].reshape(-1, k)
        dw2 += cols.T @ dy_flat
        dcols_flat = scratch("dcols", cols.shape)
        np.matmul(dy_flat, w2, out=dcols_flat)
        dcols = dcols_flat.reshape(hi - lo, s_out, d_out, kh, kw, cin)
        for i in range(kh):
            for j in range(kw):
                dxp[lo:hi, i:i + s_out, j:j + d_out, :] += dcols[:, :, :, i, j, :]
    dkernels = dw2.T.reshape(k, kh, kw, cin)
    dbias = dy.sum(axis=(0, 1, 2))
    dx = dxp[:, pt:pt + s, pl:pl + d, :].copy()  # dxp is scratch; detach
    return dx, dkernels, dbias


def lstm_forward_core(pre: np.ndarray, w_h: np.ndarray, h0: np.ndarray, c0: np.ndarray,
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Recurrent loop over (B,S,4H) pre-activations.

    Returns (h_seq, c_seq, tanh_c_seq, gates) with gates post-activation.
    """
    b, s, h4 = pre.shape
    h_units = h4 // 4
    gates = np.empty_like(pre)
    c_seq = np.empty((b, s, h_units))
    tanh_c = np.empty((b, s, h_units))
    h_seq = np.empty((b, s, h_units))
    h = h0
    c = c0
    for t in range(s):
        g = pre[:, t] + h @ w_h
        f = _sigmoid(g[:, :h_units])
        i = _sigmoid(g[:, h_units:2 * h_units])
        cand = np.tanh(g[:, 2 * h_units:3 * h_units])
        o = _sigmoid(g[:, 3 * h_units:])
        c = f * c + i * cand
        tc = np.tanh(c)
        h = o * tc
        gt = gates[:, t]
        gt[:, :h_units] = f
        gt[:, h_units:2 * h_units] = i
        gt[:, 2 * h_units:3 * h_units] = cand
        gt[:, 3 * h_units:] = o
        c_seq[:, t] = c
        tanh_c[:, t] = tc
        h_seq[:, t] = h
    return h_seq, c_seq, tanh_c, gates


def lstm_backward_core(gates: np.ndarray, c_seq: np.ndarray, tanh_c: np.ndarray,
                       h_seq: np.ndarray, w_h: np.ndarray, dh_seq: np.ndarray,
                       h0: np.ndarray, c0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagation through time; returns pre-activation gate grads and dW_h."""
    b, s, h_units = h_seq.shape
    dgates = np.empty((b, s, 4 * h_units))
    dw_h = np.zeros_like(w_h)
    dh_next = np.zeros((b, h_units))
    dc_next = np.zeros((b, h_units))
    for t in range(s - 1, -1, -1):
        f = gates[:, t, :h_units]
        i = gates[:, t, h_units:2 * h_units]
        cand = gates[:, t, 2 * h_units:3 * h_units]
        o = gates[:, t, 3 * h_units:]
        dh = dh_seq[:, t] + dh_next
        tc = tanh_c[:, t]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = c_seq[:, t - 1] if t > 0 else c0
        h_prev = h_seq[:, t - 1] if t > 0 else h0
        dp = dgates[:, t]
        dp[:, :h_units] = dc * c_prev * f * (1.0 - f)
        dp[:, h_units:2 * h_units] = dc * cand * i * (1.0 - i)
        dp[:, 2 * h_units:3 * h_units] = dc * i * (1.0 - cand * cand)
        dp[:, 3 * h_units:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dp @ w_h.T
        dw_h += h_prev.T @ dp
    return dgates, dw_h
