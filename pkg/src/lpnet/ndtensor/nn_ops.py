"""Network-level ops whose inner loops live in ``lpnet.kernels``.

Each op wraps the selected kernel backend in a tape node, so the rest of
the model code doesn't care whether numba or numpy is doing the work.
"""

import numpy as np

from .. import kernels
from .tensor import Tensor, _make, astensor


def conv1d(x, w):
    """Same-padded 1-D convolution over time.

    x: (T, d_in), w: (k, d_in, d_out) with odd k; returns (T, d_out).
    """
    x, w = astensor(x), astensor(w)
    k = w.shape[0]
    if k % 2 != 1:
        raise ValueError(f"conv1d kernel width must be odd, got {k}")
    xd, wd = x.data, w.data

    def bw(g):
        dx, dw = kernels.conv1d_backward(xd, wd, np.ascontiguousarray(g))
        return dx, dw

    return _make(kernels.conv1d_forward(xd, wd), (x, w), bw)


def lstm(x, wx, wh, b):
    """Unidirectional LSTM, zero initial state; returns hidden states (T, H)."""
    x, wx, wh, b = astensor(x), astensor(wx), astensor(wh), astensor(b)
    h, c, gates = kernels.lstm_forward(x.data, wx.data, wh.data, b.data)
    xd, wxd, whd = x.data, wx.data, wh.data

    def bw(g):
        return kernels.lstm_backward(xd, wxd, whd, h, c, gates, np.ascontiguousarray(g))

    return _make(h, (x, wx, wh, b), bw)


def bilstm(x, wx_f, wh_f, b_f, wx_b, wh_b, b_b):
    """Bidirectional LSTM: forward pass over x, backward pass over reversed x,
    hidden states concatenated per step.  (T, d) -> (T, 2H)."""
    x = astensor(x)
    params = [astensor(p) for p in (wx_f, wh_f, b_f, wx_b, wh_b, b_b)]
    wx_f, wh_f, b_f, wx_b, wh_b, b_b = params
    xd = x.data
    xr = np.ascontiguousarray(xd[::-1])
    h_f, c_f, g_f = kernels.lstm_forward(xd, wx_f.data, wh_f.data, b_f.data)
    h_b, c_b, g_b = kernels.lstm_forward(xr, wx_b.data, wh_b.data, b_b.data)
    H = h_f.shape[1]
    out = np.concatenate([h_f, h_b[::-1]], axis=1)

    def bw(g):
        g = np.ascontiguousarray(g)
        dh_f = np.ascontiguousarray(g[:, :H])
        dh_b = np.ascontiguousarray(g[::-1, H:])
        dx_f, dwx_f, dwh_f, db_f = kernels.lstm_backward(
            xd, wx_f.data, wh_f.data, h_f, c_f, g_f, dh_f)
        dx_b, dwx_b, dwh_b, db_b = kernels.lstm_backward(
            xr, wx_b.data, wh_b.data, h_b, c_b, g_b, dh_b)
        dx = dx_f + dx_b[::-1]
        return dx, dwx_f, dwh_f, db_f, dwx_b, dwh_b, db_b

    return _make(out, (x, wx_f, wh_f, b_f, wx_b, wh_b, b_b), bw)


def temporal_roialign(v, starts, ends, n_bins):
    """Resample spans of a (T, d) sequence into fixed-length windows.

    starts/ends are plain float arrays in [0, 1] (N,); the spans are
    treated as constants, so gradients flow to v only.  Each of the
    n_bins bins is sampled once at its center by linear interpolation
    between the two neighbouring frames; a degenerate span (length below
    1e-6) reads the start position into every bin.  Returns (N, n_bins, d).
    """
    v = astensor(v)
    starts = np.asarray(starts, dtype=np.float64).reshape(-1)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1)
    if starts.shape != ends.shape:
        raise ValueError("starts and ends must have the same length")
    T = v.shape[0]
    if T < 2:
        raise ValueError("temporal_roialign needs at least 2 frames")

    def bw(g):
        dv = kernels.roialign_backward(T, starts, ends, n_bins, np.ascontiguousarray(g))
        return (dv,)

    return _make(kernels.roialign_forward(v.data, starts, ends, n_bins), (v,), bw)
