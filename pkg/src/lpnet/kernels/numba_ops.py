"""Numba-jitted loop kernels, numerically matching ``numpy_ops``.

No fastmath and no parallel: the runs must be bit-reproducible across
processes, so we keep the default strict float semantics and a fixed
iteration order.  First call per signature pays the JIT compile (cached
on disk afterwards); callers that benchmark should warm up first.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid_nb(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


@njit(cache=True)
def conv1d_forward(x, w):
    T, d = x.shape
    k, _, d_out = w.shape
    pad = k // 2
    xp = np.zeros((T + k - 1, d))
    xp[pad:pad + T] = x
    y = np.zeros((T, d_out))
    for j in range(k):
        y += np.dot(xp[j:j + T], w[j])
    return y


@njit(cache=True)
def conv1d_backward(x, w, dy):
    T, d = x.shape
    k, _, d_out = w.shape
    pad = k // 2
    xp = np.zeros((T + k - 1, d))
    xp[pad:pad + T] = x
    dxp = np.zeros((T + k - 1, d))
    dw = np.zeros((k, d, d_out))
    dy_c = np.ascontiguousarray(dy)
    for j in range(k):
        wj_t = np.ascontiguousarray(w[j].T)
        dxp[j:j + T] += np.dot(dy_c, wj_t)
        xs_t = np.ascontiguousarray(xp[j:j + T].T)
        dw[j] = np.dot(xs_t, dy_c)
    return dxp[pad:pad + T].copy(), dw


@njit(cache=True)
def lstm_forward(x, wx, wh, b):
    T = x.shape[0]
    H = wh.shape[0]
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    gates = np.zeros((T, 4 * H))
    zx = np.dot(x, wx)
    for t in range(T):
        zx[t] += b
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = zx[t] + np.dot(h_prev, wh)
        for j in range(H):
            i = _sigmoid_nb(z[j])
            f = _sigmoid_nb(z[H + j])
            g = np.tanh(z[2 * H + j])
            o = _sigmoid_nb(z[3 * H + j])
            c_t = f * c_prev[j] + i * g
            h_t = o * np.tanh(c_t)
            gates[t, j] = i
            gates[t, H + j] = f
            gates[t, 2 * H + j] = g
            gates[t, 3 * H + j] = o
            c[t, j] = c_t
            h[t, j] = h_t
        h_prev = h[t]
        c_prev = c[t]
    return h, c, gates


@njit(cache=True)
def lstm_backward(x, wx, wh, h, c, gates, dh):
    T = x.shape[0]
    H = wh.shape[0]
    dz_all = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        dz = np.zeros(4 * H)
        for j in range(H):
            i = gates[t, j]
            f = gates[t, H + j]
            g = gates[t, 2 * H + j]
            o = gates[t, 3 * H + j]
            c_prev = c[t - 1, j] if t > 0 else 0.0
            tc = np.tanh(c[t, j])
            dht = dh[t, j] + dh_next[j]
            do = dht * tc
            dc = dc_next[j] + dht * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz[j] = di * i * (1.0 - i)
            dz[H + j] = df * f * (1.0 - f)
            dz[2 * H + j] = dg * (1.0 - g * g)
            dz[3 * H + j] = do * o * (1.0 - o)
            dc_next[j] = dc * f
        dz_all[t] = dz
        dh_next = np.dot(dz, wh_t)
    wx_t = np.ascontiguousarray(wx.T)
    dx = np.dot(dz_all, wx_t)
    x_t = np.ascontiguousarray(x.T)
    dwx = np.dot(x_t, dz_all)
    h_prev_all = np.zeros((T, H))
    h_prev_all[1:] = h[:-1]
    hp_t = np.ascontiguousarray(h_prev_all.T)
    dwh = np.dot(hp_t, dz_all)
    db = np.zeros(4 * H)
    for t in range(T):
        db += dz_all[t]
    return dx, dwx, dwh, db


@njit(cache=True)
def roialign_forward(v, starts, ends, l):
    T, d = v.shape
    N = starts.shape[0]
    out = np.zeros((N, l, d))
    for n in range(N):
        a = starts[n] * (T - 1)
        width = (ends[n] - starts[n]) * (T - 1)
        degenerate = (ends[n] - starts[n]) < 1e-6
        for k in range(l):
            p = a if degenerate else a + (k + 0.5) / l * width
            if p < 0.0:
                p = 0.0
            elif p > T - 1:
                p = float(T - 1)
            i0 = int(np.floor(p))
            if i0 < 0:
                i0 = 0
            elif i0 > T - 2:
                i0 = T - 2
            frac = p - i0
            for j in range(d):
                out[n, k, j] = v[i0, j] * (1.0 - frac) + v[i0 + 1, j] * frac
    return out


@njit(cache=True)
def roialign_backward(T, starts, ends, l, dy):
    N = starts.shape[0]
    d = dy.shape[2]
    dv = np.zeros((T, d))
    for n in range(N):
        a = starts[n] * (T - 1)
        width = (ends[n] - starts[n]) * (T - 1)
        degenerate = (ends[n] - starts[n]) < 1e-6
        for k in range(l):
            p = a if degenerate else a + (k + 0.5) / l * width
            if p < 0.0:
                p = 0.0
            elif p > T - 1:
                p = float(T - 1)
            i0 = int(np.floor(p))
            if i0 < 0:
                i0 = 0
            elif i0 > T - 2:
                i0 = T - 2
            frac = p - i0
            for j in range(d):
                dv[i0, j] += dy[n, k, j] * (1.0 - frac)
                dv[i0 + 1, j] += dy[n, k, j] * frac
    return dv
