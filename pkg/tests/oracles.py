"""Brute-force reference implementations shared by several test modules."""

import numpy as np


def naive_box(img, r):
    h, w, c = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            win = img[max(0, i - r) : i + r + 1, max(0, j - r) : j + r + 1]
            out[i, j] = win.reshape(-1, c).mean(axis=0)
    return out


def naive_guided(p, guide, k, eps):
    # literal per-window evaluation of the local linear model
    r = k // 2
    h, w, _ = p.shape
    a = np.zeros_like(p, dtype=np.float64)
    b = np.zeros_like(p, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            sl = (slice(max(0, i - r), i + r + 1), slice(max(0, j - r), j + r + 1))
            gi, pi = guide[sl].astype(np.float64), p[sl].astype(np.float64)
            mi, mp = gi.mean(axis=(0, 1)), pi.mean(axis=(0, 1))
            cov = (gi * pi).mean(axis=(0, 1)) - mi * mp
            var = (gi * gi).mean(axis=(0, 1)) - mi * mi
            a[i, j] = cov / (var + eps)
            b[i, j] = mp - a[i, j] * mi
    return naive_box(a, r) * guide + naive_box(b, r)
