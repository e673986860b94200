"""Shared test utilities: finite differences and naive reference kernels."""

import numpy as np


def numeric_gradient(f, x, h=1e-3):
    """Central finite differences of a scalar function at every element of x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-7):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    err = np.abs(analytic - numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    worst = (err - bound).max()
    assert (err <= bound).all(), f"gradient mismatch, worst violation {worst:.3e}"


def naive_conv3d(x, weights, bias, stride, pad):
    """Direct triple-sum convolution with the mirrored-weight convention.

    Nine explicit loops; deliberately independent of the library
    implementation so it can serve as an oracle.
    """
    k_n, c_n, p, q, r = weights.shape
    xp = np.pad(np.asarray(x, dtype=np.float64),
                ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    d_out = (x.shape[1] + 2 * pad - p) // stride + 1
    h_out = (x.shape[2] + 2 * pad - q) // stride + 1
    w_out = (x.shape[3] + 2 * pad - r) // stride + 1
    out = np.zeros((k_n, d_out, h_out, w_out))
    for k in range(k_n):
        for z in range(d_out):
            for y in range(h_out):
                for xx in range(w_out):
                    acc = 0.0
                    for c in range(c_n):
                        for u in range(p):
                            for v in range(q):
                                for w in range(r):
                                    acc += (weights[k, c, p - 1 - u, q - 1 - v, r - 1 - w]
                                            * xp[c, z * stride + u, y * stride + v,
                                                 xx * stride + w])
                    out[k, z, y, xx] = acc + bias[k]
    return out
