"""Pure-numpy implementations of the hot inner kernels.

These are the fallback path when the numba backend is disabled or
unavailable (see ``lpnet.kernels``).  Signatures and numerical behaviour
match ``numba_ops`` to within floating-point reassociation noise; the
test suite asserts parity on random instances.

All arrays are float64.  Shapes:
  conv1d    x: (T, d),  w: (k, d, d_out)        -> (T, d_out)
  lstm      x: (T, d),  wx: (d, 4H), wh: (H, 4H), b: (4H,)
  roialign  v: (T, d),  starts/ends: (N,) in [0, 1]  -> (N, l, d)
"""

import numpy as np


def _sigmoid(z):
    # tanh form is overflow-safe for large |z|
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def conv1d_forward(x, w):
    """Same-padded temporal convolution: y[t] = sum_j x[t + j - k//2] @ w[j]."""
    T, d = x.shape
    k, _, d_out = w.shape
    pad = k // 2
    xp = np.zeros((T + k - 1, d))
    xp[pad:pad + T] = x
    y = np.zeros((T, d_out))
    for j in range(k):
        y += xp[j:j + T] @ w[j]
    return y


def conv1d_backward(x, w, dy):
    T, d = x.shape
    k, _, d_out = w.shape
    pad = k // 2
    xp = np.zeros((T + k - 1, d))
    xp[pad:pad + T] = x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for j in range(k):
        dxp[j:j + T] += dy @ w[j].T
        dw[j] = xp[j:j + T].T @ dy
    return dxp[pad:pad + T], dw


def lstm_forward(x, wx, wh, b):
    """Unidirectional LSTM over the whole sequence, zero initial state.

    Returns (h, c, gates) where gates holds the post-activation
    [input, forget, cell, output] chunks needed by the backward pass.
    """
    T = x.shape[0]
    H = wh.shape[0]
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    gates = np.zeros((T, 4 * H))
    zx = x @ wx + b
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = zx[t] + h_prev @ wh
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, c, gates


def lstm_backward(x, wx, wh, h, c, gates, dh):
    """Backprop through time.  dh is the upstream gradient for every h[t]."""
    T = x.shape[0]
    H = wh.shape[0]
    dz_all = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        c_prev = c[t - 1] if t > 0 else np.zeros(H)
        tc = np.tanh(c[t])
        dht = dh[t] + dh_next
        do = dht * tc
        dc = dc_next + dht * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = dz_all[t]
        dz[:H] = di * i * (1.0 - i)
        dz[H:2 * H] = df * f * (1.0 - f)
        dz[2 * H:3 * H] = dg * (1.0 - g * g)
        dz[3 * H:] = do * o * (1.0 - o)
        dh_next = dz @ wh.T
        dc_next = dc * f
    dx = dz_all @ wx.T
    dwx = x.T @ dz_all
    h_prev_all = np.zeros((T, H))
    h_prev_all[1:] = h[:-1]
    dwh = h_prev_all.T @ dz_all
    db = dz_all.sum(axis=0)
    return dx, dwx, dwh, db


def _bin_positions(starts, ends, T, l):
    """Continuous sample positions (N, l): bin centers of the frame span."""
    a = starts * (T - 1)
    width = (ends - starts) * (T - 1)
    offsets = (np.arange(l) + 0.5) / l
    pos = a[:, None] + offsets[None, :] * width[:, None]
    degenerate = (ends - starts) < 1e-6
    if degenerate.any():
        pos[degenerate] = a[degenerate, None]
    return np.clip(pos, 0.0, T - 1)


def roialign_forward(v, starts, ends, l):
    """Resample each [start, end] span of v into l bins by linear interpolation."""
    T, d = v.shape
    pos = _bin_positions(starts, ends, T, l)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, T - 2)
    frac = pos - i0
    out = v[i0] * (1.0 - frac[..., None]) + v[i0 + 1] * frac[..., None]
    return out


def roialign_backward(T, starts, ends, l, dy):
    pos = _bin_positions(starts, ends, T, l)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, T - 2)
    frac = pos - i0
    d = dy.shape[2]
    dv = np.zeros((T, d))
    flat0 = (dy * (1.0 - frac[..., None])).reshape(-1, d)
    flat1 = (dy * frac[..., None]).reshape(-1, d)
    np.add.at(dv, i0.ravel(), flat0)
    np.add.at(dv, (i0 + 1).ravel(), flat1)
    return dv
