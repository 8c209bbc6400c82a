"""Pure NumPy LSTM sequence kernels (fallback for the compiled extension).

Gate order in the stacked parameters is input, forget, cell, output:
``w`` is (4H, F), ``u`` is (4H, H), ``b`` is (4H,). Sequences are
batch-major ``(B, W, F)`` and always start from a zero state.
"""

import numpy as np


def _sigmoid(z):
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def lstm_forward(x, w, u, b):
    """Run the recurrence and keep everything the backward pass needs.

    Returns ``(h_seq, c_seq, gates)`` with shapes (W+1, B, H), (W+1, B, H)
    and (W, B, 4H); index 0 of the state sequences is the zero state and
    ``gates`` holds post-activation values.
    """
    B, W, F = x.shape
    G = w.shape[0]
    H = G // 4
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    zx = (xt.reshape(W * B, F) @ w.T).reshape(W, B, G)
    h_seq = np.zeros((W + 1, B, H))
    c_seq = np.zeros((W + 1, B, H))
    gates = np.empty((W, B, G))
    for t in range(W):
        z = zx[t] + h_seq[t] @ u.T + b
        a = gates[t]
        a[:] = _sigmoid(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c_seq[t + 1] = f * c_seq[t] + i * g
        h_seq[t + 1] = o * np.tanh(c_seq[t + 1])
    return h_seq, c_seq, gates


def lstm_final(x, w, u, b):
    """Final hidden state only; no caches kept."""
    B, W, F = x.shape
    H = w.shape[0] // 4
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    zx = (xt.reshape(W * B, F) @ w.T).reshape(W, B, 4 * H)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(W):
        z = zx[t] + h @ u.T + b
        a = _sigmoid(z)
        g = np.tanh(z[:, 2 * H:3 * H])
        c = a[:, H:2 * H] * c + a[:, :H] * g
        h = a[:, 3 * H:] * np.tanh(c)
    return h


def lstm_backward(x, w, u, h_seq, c_seq, gates, dh_last):
    """Backpropagate a gradient on the final hidden state.

    Returns ``(dx, dw, du, db)`` matching the shapes of the forward inputs.
    """
    B, W, F = x.shape
    G = w.shape[0]
    H = G // 4
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    dz_all = np.empty((W, B, G))
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.zeros((B, H))
    du = np.zeros((G, H))
    for t in range(W - 1, -1, -1):
        a = gates[t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(c_seq[t + 1])
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dct * g * i * (1.0 - i)
        dz[:, H:2 * H] = dct * c_seq[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dct * i * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        dc = dct * f
        du += dz.T @ h_seq[t]
        dh = dz @ u
    dzf = dz_all.reshape(W * B, G)
    dw = dzf.T @ xt.reshape(W * B, F)
    db = dzf.sum(axis=0)
    dx = (dzf @ w).reshape(W, B, F).transpose(1, 0, 2).copy()
    return dx, dw, du, db
