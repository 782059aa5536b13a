"""numpy fallback for the recurrent sequence kernels.

Same contract as the compiled extension: one direction, one sequence,
upstream gradient on the final hidden state only. Stacked gate order is
(input, forget, cell-candidate, output), h rows each.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_forward(x, wx, wh, b):
    """Run a gated recurrence over all rows of x.

    x: (T, d); wx: (4h, d); wh: (4h, h); b: (4h,).
    Returns (hs, cs, gates): hidden states (T, h), cell states (T, h),
    and post-activation gate values (T, 4h) cached for the backward pass.
    """
    T = x.shape[0]
    h = b.shape[0] // 4
    hs = np.empty((T, h), dtype=np.float64)
    cs = np.empty((T, h), dtype=np.float64)
    gates = np.empty((T, 4 * h), dtype=np.float64)
    pre_in = x @ wx.T + b  # input-driven part, all steps at once
    h_prev = np.zeros(h, dtype=np.float64)
    c_prev = np.zeros(h, dtype=np.float64)
    for t in range(T):
        a = pre_in[t] + wh @ h_prev
        i = _sigmoid(a[:h])
        f = _sigmoid(a[h:2 * h])
        g = np.tanh(a[2 * h:3 * h])
        o = _sigmoid(a[3 * h:])
        c = f * c_prev + i * g
        ht = o * np.tanh(c)
        gates[t, :h] = i
        gates[t, h:2 * h] = f
        gates[t, 2 * h:3 * h] = g
        gates[t, 3 * h:] = o
        cs[t] = c
        hs[t] = ht
        h_prev = ht
        c_prev = c
    return hs, cs, gates


def lstm_seq_backward(x, hs, cs, gates, wx, wh, d_h_final):
    """Backpropagate from the final hidden state through the whole sequence.

    Returns (dx, dwx, dwh, db) with shapes matching (x, wx, wh, b).
    """
    T, d = x.shape
    h = hs.shape[1]
    dx = np.empty((T, d), dtype=np.float64)
    da_rows = np.empty((T, 4 * h), dtype=np.float64)
    dh = np.asarray(d_h_final, dtype=np.float64).copy()
    dc = np.zeros(h, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        i = gates[t, :h]
        f = gates[t, h:2 * h]
        g = gates[t, 2 * h:3 * h]
        o = gates[t, 3 * h:]
        tc = np.tanh(cs[t])
        dc = dc + dh * o * (1.0 - tc * tc)
        c_prev = cs[t - 1] if t > 0 else 0.0
        da = da_rows[t]
        da[:h] = dc * g * i * (1.0 - i)
        da[h:2 * h] = dc * c_prev * f * (1.0 - f)
        da[2 * h:3 * h] = dc * i * (1.0 - g * g)
        da[3 * h:] = dh * tc * o * (1.0 - o)
        dx[t] = wx.T @ da
        dh = wh.T @ da
        dc = dc * f
    dwx = da_rows.T @ x
    dwh = da_rows[1:].T @ hs[:-1] if T > 1 else np.zeros_like(wh)
    db = da_rows.sum(axis=0)
    return dx, dwx, dwh, db
