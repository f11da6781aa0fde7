"""Compiled single-frame kernels for the streaming predictor.

These mirror ``crnn._forward`` on one window; float64 throughout so outputs
agree with the batch path to rounding.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def project_row(x, scale, conv_w, conv_b, W, b, out):
    R = x.shape[0]
    F, k = conv_w.shape
    p = (k - 1) // 2
    feat = np.empty(R * F)
    for r in range(R):
        for f in range(F):
            s = conv_b[f]
            for j in range(k):
                idx = min(max(r + j - p, 0), R - 1)
                s += conv_w[f, j] * (x[idx] * scale)
            feat[r * F + f] = s if s > 0.0 else 0.0
    out[:] = np.dot(feat, W) + b


@numba.njit(cache=True)
def recur(gx, head, U_zr, U_n, out_W, out_b, last, residual):
    w = gx.shape[0]
    H = U_n.shape[0]
    h = np.zeros(H)
    zr = np.empty(2 * H)
    rh = np.empty(H)
    for i in range(w):
        g = gx[(head + i) % w]
        a = np.dot(h, U_zr)
        for j in range(2 * H):
            zr[j] = 0.5 * (1.0 + np.tanh(0.5 * (g[j] + a[j])))
        for j in range(H):
            rh[j] = zr[H + j] * h[j]
        c = np.dot(rh, U_n)
        for j in range(H):
            n = np.tanh(g[2 * H + j] + c[j])
            h[j] = n + zr[j] * (h[j] - n)
    y = np.dot(h, out_W) + out_b
    if residual:
        y = y + last
    return y
