"""Slow, obviously-correct reference implementations used only by tests."""

import math

import numpy as np


def conv2d_loops(x, kernel, bias, stride, padding):
    """Direct cross-correlation with zero padding, one output element at a time."""
    C, H, W = x.shape
    Co, Ci, k, _ = kernel.shape
    assert Ci == C
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((Co, Ho, Wo))
    for o in range(Co):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(C):
                    for di in range(k):
                        for dj in range(k):
                            hh = i * stride + di - padding
                            ww = j * stride + dj - padding
                            if 0 <= hh < H and 0 <= ww < W:
                                acc += float(kernel[o, c, di, dj]) * float(x[c, hh, ww])
                out[o, i, j] = acc
    return out


def flush_sort_oracle(y, tau, compare="signed"):
    C, H, W = y.shape
    m = np.zeros(y.shape, dtype=bool)
    for h in range(H):
        for w in range(W):
            vals = [abs(float(y[c, h, w])) if compare == "magnitude" else float(y[c, h, w])
                    for c in range(C)]
            for c in sorted(range(C), key=lambda c: (-vals[c], c))[:tau]:
                m[c, h, w] = True
    return m


def hadamard_loops(a, b):
    out = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        out[idx] = a[idx] * b[idx]
    return out


def movement_cost_scalar(h, w, hh, ww, sigma):
    return 1.0 - math.exp(-((hh - h) ** 2 + (ww - w) ** 2) / (2.0 * sigma ** 2))


def random_tensor(rng, C, H, W, ties=False):
    if ties:
        return rng.integers(-3, 4, size=(C, H, W)).astype(np.float32)
    return rng.normal(size=(C, H, W)).astype(np.float32)
