"""Pure-numpy depthwise convolution kernels (fallback backend).

Loops run over the k*k taps only; each tap is a vectorized shifted
add over the full (C, H, W) block.
"""

import numpy as np


def conv_forward(x, kernel, bias):
    c, h, w = x.shape
    k = kernel.shape[1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            out += kernel[:, di, dj, None, None] * xp[:, di : di + h, dj : dj + w]
    out += bias[:, None, None]
    return out


def conv_backward(x, kernel, gout):
    """Gradients (gx, gkernel, gbias) of the zero-padded depthwise conv."""
    c, h, w = x.shape
    k = kernel.shape[1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    gb = gout.sum(axis=(1, 2))
    gk = np.empty_like(kernel)
    gxp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            window = xp[:, di : di + h, dj : dj + w]
            gk[:, di, dj] = (gout * window).sum(axis=(1, 2))
            gxp[:, di : di + h, dj : dj + w] += kernel[:, di, dj, None, None] * gout
    gx = gxp[:, p : p + h, p : p + w].copy()
    return gx, gk, gb
