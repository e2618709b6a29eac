"""Independent reference implementations used as test oracles."""

import numpy as np


def naive_conv(x, W, b, stride):
    """Quadruple-loop SAME cross-correlation, extra pad at the bottom/right."""
    B, H, Wd, C = x.shape
    k, _, _, Co = W.shape
    Ho, Wo = -(-H // stride), -(-Wd // stride)
    pt = max((Ho - 1) * stride + k - H, 0) // 2
    pl = max((Wo - 1) * stride + k - Wd, 0) // 2
    out = np.zeros((B, Ho, Wo, Co))
    for n in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for co in range(Co):
                    acc = b[co]
                    for a in range(k):
                        for c in range(k):
                            r, q = i * stride + a - pt, j * stride + c - pl
                            if 0 <= r < H and 0 <= q < Wd:
                                acc += np.dot(x[n, r, q, :], W[a, c, :, co])
                    out[n, i, j, co] = acc
    return out


def naive_tconv(x, W, b, stride):
    """Scatter form of the transposed convolution; ``W`` is (k, k, C_out, C_in)."""
    B, h, w, Ci = x.shape
    k, _, Co, _ = W.shape
    H, Wd = h * stride, w * stride
    pt = max((h - 1) * stride + k - H, 0) // 2
    pl = max((w - 1) * stride + k - Wd, 0) // 2
    out = np.zeros((B, H, Wd, Co)) + b
    for n in range(B):
        for i in range(h):
            for j in range(w):
                for a in range(k):
                    for c in range(k):
                        r, q = i * stride + a - pt, j * stride + c - pl
                        if 0 <= r < H and 0 <= q < Wd:
                            out[n, r, q, :] += W[a, c] @ x[n, i, j, :]
    return out
